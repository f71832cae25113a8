"""Neck detection, middle-third surgery and the terminating surgery loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .pinching import PinchingParams, bernstein_times
from .profile import (ARC, LOOP, Component, MeshConfig, ProfileError, ProfileState,
                      OutputClock, StepperConfig, _resolution_hit, area, arclength, choose_dt, component_Q,
                      geometry, monitors, needs_remesh, refine, remesh, remesh_component, step)

log = logging.getLogger(__name__)

SN, S1SN = "Sn", "S1xSnm1"


class SurgeryRejected(ProfileError):
    pass


@dataclass
class SurgeryConfig:
    epsilon: float = 0.01
    k: int = 2
    L: float = 10.0
    tau: float = 0.15
    B: float = 10.0
    eta_sharp: float = 0.1
    h_sharp: float = 20.0
    H1: float = 20.0
    H2: float = 100.0
    H3: float = 500.0
    theta: float = 10.0
    cap_width: float = 1.5
    max_surgeries: int = 50
    round_cyl: float = 1e-2
    round_Q: float = 0.9

    def __post_init__(self):
        if not 0 < self.epsilon <= 0.01:
            raise ValueError("epsilon must lie in (0, 1/100]")
        if not 0 <= self.k <= 2:
            raise ValueError("k must be 0, 1 or 2")
        if not self.H1 >= self.h_sharp:
            raise ValueError("H1 must be at least h_sharp")
        if not self.H1 < self.H2 < self.H3:
            raise ValueError("need H1 < H2 < H3")
        if not 0 < self.tau < 1 / 3:
            raise ValueError("tau must lie in (0, 1/3)")
        if not 0 < self.cap_width <= 1.5:
            raise ValueError("cap_width must lie in (0, 1.5]")


@dataclass
class NeckRegion:
    component: int
    u_minus: float
    u_plus: float
    r: float
    center: int
    center_s: float
    H_center: float
    full: bool = False

    @property
    def length(self) -> float:
        return self.u_plus - self.u_minus


@dataclass
class SurgeryEvent:
    kind: str  # "surgery" or "discard"
    time: float
    neck: NeckRegion | None
    before: list
    after: list
    discarded: list
    pre_supQ: float
    post_supQ: float
    pre_area: float
    post_area: float
    H_before: float = math.nan
    H_modified: tuple = (math.nan, math.nan)
    reason: str = ""


# -------------------------------------------------------------- neck model

def model_tube(H: float, n: int, K: float) -> tuple[float, float, float]:
    """(kappa, lambda, rho) of the invariant tube S^1 x S^{n-1} in S_K^{n+1} with mean curvature H."""
    s = math.sqrt(K)
    g = lambda p: (n - 1) / math.tan(p) - math.tan(p) - H / s  # noqa: E731
    psi = brentq(g, 1e-12, math.atan(math.sqrt(n - 1)), xtol=1e-15)
    return -s * math.tan(psi), s / math.tan(psi), math.sin(psi) / s


def classify_component(c: Component) -> str:
    if c.topology == ARC:
        rho = c.nodes[:, 2]
        if rho[0] != 0.0 or rho[-1] != 0.0 or np.any(rho[1:-1] <= 0):
            raise ProfileError("arc component must touch the axis exactly at its two ends")
        return SN
    if c.topology == LOOP:
        if np.any(c.nodes[:, 2] <= 0):
            raise ProfileError("closed loop touches the axis")
        return S1SN
    raise ProfileError(f"unknown topology {c.topology!r}")


def _modified_free(c: Component, s: np.ndarray, reach: np.ndarray, t: float, window: np.ndarray) -> np.ndarray:
    """True where the backward window of each ball is free of surgery effects."""
    free = np.ones(len(s), bool)
    if not c.modified:
        return free
    Ltot = s[-1]
    for end, length, ts in c.modified:
        lo, hi = (0.0, length) if end == 0 else (Ltot - length, Ltot)
        hit = (s + reach >= lo) & (s - reach <= hi)
        free &= ~(hit & (t - ts < window))
    return free


def node_qualifies(state: ProfileState, c: Component, cfg: SurgeryConfig) -> np.ndarray:
    """Pointwise neck test (curvature size and cylindrical closeness)."""
    sK = math.sqrt(state.K)
    n = state.n
    H, A2 = c.cache["H"], c.cache["A2"]
    with np.errstate(divide="ignore", invalid="ignore"):
        cyl = np.abs(A2 - H**2 / (n - 1)) / H**2
    ok = (H >= cfg.h_sharp * sK) & (cyl <= cfg.eta_sharp)
    ok &= (H >= cfg.H1 / 10 * sK) & (H <= 10 * cfg.H1 * sK)
    return ok & c.cache["interior"]


def detect_necks(state: ProfileState, cfg: SurgeryConfig, warned: set | None = None) -> list[NeckRegion]:
    """Maximal intervals of neck centres, one NeckRegion each.

    A node is a centre when it passes the pointwise test and, over the ball of
    arclength radius L r0 (r0 = (n-1)/H), the profile is epsilon-close after
    rescaling by r0 to the invariant tube with the same mean curvature: in
    curvature, in |nabla^j A| for j <= k, and in orbit radius.  The ball must
    stay away from the axis and must not have been touched by a surgery
    within the last theta r0^2 units of time.
    """
    necks = []
    n, K, eps = state.n, state.K, cfg.epsilon
    for c in state.components:
        ch = c.cache
        s = arclength(c) if c.is_arc else np.concatenate([[0.0], np.cumsum(ch["seg"])[:-1]])
        Ltot = float(np.sum(ch["seg"]))
        ok = node_qualifies(state, c, cfg)
        idx = np.nonzero(ok)[0]
        if not len(idx):
            continue
        r0 = (n - 1) / ch["H"]
        reach = cfg.L * r0 + r0
        window = cfg.theta * r0**2
        free = _modified_free(c, s, reach, state.t, window)
        centre = np.zeros(len(s), bool)
        skipped = 0
        for i in idx:
            rad = cfg.L * r0[i]
            if c.is_arc and (s[i] - rad <= 0 or s[i] + rad >= Ltot):
                continue
            if not c.is_arc and 2 * rad >= Ltot:
                continue
            if not free[i]:
                skipped += 1
                continue
            d = np.abs(s - s[i])
            if not c.is_arc:
                d = np.minimum(d, Ltot - d)
            ball = d <= rad
            km, lm, rm = model_tube(float(ch["H"][i]), n, K)
            r = r0[i]
            dev = r * np.sqrt((ch["kappa"][ball] - km) ** 2 + (n - 1) * (ch["lam"][ball] - lm) ** 2)
            if dev.max() > eps or not ok[ball].all():
                continue
            if cfg.k >= 1 and r**2 * np.sqrt(ch["grad2"][ball]).max() > eps:
                continue
            if cfg.k >= 2 and r**3 * np.sqrt(ch["hess2"][ball]).max() > eps:
                continue
            if np.abs(ch["rho"][ball] - rm).max() > eps * r:
                continue
            centre[i] = True
        if skipped and (warned is None or c.cid not in warned):
            if warned is not None:
                warned.add(c.cid)
            log.warning("component %d: %d neck candidates skipped, backward window not surgery-free",
                        c.cid, skipped)
        necks.extend(_intervals(c, s, centre, r0, cfg))
    return necks


def _intervals(c: Component, s, centre, r0, cfg) -> list[NeckRegion]:
    out = []
    idx = np.nonzero(centre)[0]
    if not len(idx):
        return out
    runs = np.split(idx, np.nonzero(np.diff(idx) > 1)[0] + 1)
    if not c.is_arc and len(runs) > 1 and runs[0][0] == 0 and runs[-1][-1] == len(s) - 1:
        runs[0] = np.concatenate([runs[-1], runs[0]])
        runs.pop()
    H = c.cache["H"]
    rho = c.cache["rho"]
    if not c.is_arc and len(idx) == len(s):
        ic = int(np.argmin(rho))
        period = s[-1] + c.cache["seg"][-1]
        return [NeckRegion(c.cid, float(s[ic] - period / 2), float(s[ic] + period / 2),
                           float(1.0 / np.mean(1.0 / r0)), ic, float(s[ic]), float(H[ic]), True)]
    for run in runs:
        # a neck is often flat to round-off: centre it on the middle of the near-minimal plateau
        rr = rho[run]
        tie = run[rr <= rr.min() * (1 + 1e-9)]
        ic = int(tie[len(tie) // 2])
        a, b = s[run[0]], s[run[-1]]
        sc = s[ic]
        if not c.is_arc and a > b:  # run wraps through node 0
            period = s[-1] + c.cache["seg"][-1]
            b += period
            sc = sc if sc >= a else sc + period
        half = min(sc - a, b - sc) + cfg.L * r0[ic]
        out.append(NeckRegion(c.cid, float(sc - half), float(sc + half),
                              float(1.0 / np.mean(1.0 / r0[run])),
                              ic, float(sc), float(H[ic])))
    return out


# ------------------------------------------------------------------ surgery

class _Chart:
    """Stereographic chart of the quotient sphere centred at an axis point.

    The axis maps to the line Y = 0 and geodesic circles to circles, so a
    half circle centred on Y = 0 is the profile of an exact geodesic sphere.
    """

    def __init__(self, a_hat: np.ndarray, R: float):
        self.R = R
        self.ea = a_hat
        self.e3 = np.array([0.0, 0.0, 1.0])
        self.et = np.cross(self.e3, self.ea)

    def fwd(self, P):
        p = P / self.R
        d = 1.0 + p @ self.ea
        return 2 * self.R * (p @ self.et) / d, 2 * self.R * (p @ self.e3) / d

    def inv(self, X, Y):
        w = (np.asarray(X)[:, None] * self.et + np.asarray(Y)[:, None] * self.e3) / (2 * self.R)
        q = np.sum(w * w, axis=1)
        p = (2 * w + (1 - q)[:, None] * self.ea) / (1 + q)[:, None]
        return self.R * p


def _geo_s(pts: np.ndarray, R: float) -> np.ndarray:
    ph = pts / R
    cos = np.clip(np.sum(ph[1:] * ph[:-1], axis=1), -1, 1)
    sin = np.linalg.norm(np.cross(ph[1:], ph[:-1]), axis=1)
    return np.concatenate([[0.0], np.cumsum(R * np.arctan2(sin, cos))])


def _smooth(x):
    x = np.clip(x, 0.0, 1.0)
    return x**3 * (10 - 15 * x + 6 * x * x)


def cap_profile(width: float, samples: int = 400) -> tuple[np.ndarray, np.ndarray]:
    """Unit-radius cap: (x, v) with v^2 = 1 - F(x), F'' = 2 S(x/width).

    F vanishes to second order at x = 0 and equals (x - w/2)^2 + w^2/28 for
    x >= w, so the cap is C^2 onto the unit tube and a round half circle of
    radius sqrt(1 - w^2/28) centred at x = w/2 beyond the ramp.
    """
    w = width
    xr = np.linspace(0.0, w, samples)
    u = xr / w
    F = w * w * (u**5 - u**6 + 2 * u**7 / 7)
    rc = math.sqrt(1 - w * w / 28)
    th0 = math.acos(0.5 * w / rc)
    th = np.linspace(th0, 0.0, samples)[1:]
    xc = 0.5 * w + rc * np.cos(th)
    vc = rc * np.sin(th)
    x = np.concatenate([xr, xc])
    v = np.concatenate([np.sqrt(np.clip(1 - F, 0, None)), vc])
    v[-1] = 0.0
    return x, v


def _cap_end(pts: np.ndarray, R: float, chart: _Chart, blend: float, width: float,
             samples: int = 400) -> tuple[np.ndarray, float]:
    """Replace the last ``blend`` arclength of the polyline by a blend and a cap."""
    s = _geo_s(pts, R)
    sb = s[-1] - blend
    keep = pts[s < sb]
    X, Y = chart.fwd(pts)
    zone = s >= sb - 2 * (s[1] - s[0] if len(s) > 1 else 0)
    Xb = float(np.interp(sb, s, X))
    Xc = float(X[-1])
    sig = 1.0 if Xc > Xb else -1.0
    xi_nodes = sig * (X[zone] - Xb)
    order = np.argsort(xi_nodes)
    xi_nodes, y_nodes = xi_nodes[order], Y[zone][order]
    dX = abs(Xc - Xb)
    r_e = float(Y[-1])
    xi = np.linspace(0.0, dX, samples)[1:]
    f = np.interp(xi, xi_nodes, y_nodes)
    yb = np.sqrt(r_e**2 + (f**2 - r_e**2) * (1 - _smooth(xi / dX)))
    xcap, vcap = cap_profile(width, samples)
    Xs = np.concatenate([Xb + sig * xi, Xc + sig * r_e * xcap[1:]])
    Ys = np.concatenate([yb, r_e * vcap[1:]])
    new = chart.inv(Xs, Ys)
    new[-1, 2] = 0.0
    new[-1] = R * new[-1] / np.linalg.norm(new[-1])
    out = np.vstack([keep, new])
    modified = float(_geo_s(out, R)[-1] - _geo_s(keep, R)[-1]) if len(keep) else float(_geo_s(out, R)[-1])
    return out, modified


def _path(c: Component, R: float, s0: float, s1: float) -> np.ndarray:
    """Nodes of c strictly between arclength s0 < s1 plus interpolated end points (wraps for loops)."""
    x = c.nodes
    if c.is_arc:
        s = arclength(c)
        xs = x
    else:
        xs = np.vstack([x, x, x[:1]])
        seg = np.concatenate([c.cache["seg"], c.cache["seg"]])
        s = np.concatenate([[0.0], np.cumsum(seg)])
        shift = math.floor(s0 / s[len(x)]) * s[len(x)]
        s0, s1 = s0 - shift, s1 - shift
    inside = (s > s0) & (s < s1)

    def at(v):
        j = int(np.clip(np.searchsorted(s, v) - 1, 0, len(s) - 2))
        a = (v - s[j]) / (s[j + 1] - s[j])
        p = (1 - a) * xs[j] + a * xs[j + 1]
        return R * p / np.linalg.norm(p)

    pts = [xs[inside]]
    if s0 > 0 or not c.is_arc:
        pts.insert(0, at(s0)[None])
    if s1 < s[-1] or not c.is_arc:
        pts.append(at(s1)[None])
    if c.is_arc and s0 <= 0:
        pts.insert(0, xs[:1])
    if c.is_arc and s1 >= s[-1]:
        pts.append(xs[-1:])
    return np.vstack(pts)


def state_supQ(state: ProfileState, params: PinchingParams) -> float:
    if not state.components:
        return -math.inf
    return max(float(component_Q(c, state.n, state.K, params).max()) for c in state.components)


def do_surgery(state: ProfileState, neck: NeckRegion, cfg: SurgeryConfig, params: PinchingParams,
               mesh: MeshConfig | None = None, next_id: int | None = None):
    """Excise the middle third of the neck and cap both cut ends.

    Returns (new state, event).  A closed loop cut once becomes one arc.
    """
    mesh = mesh or MeshConfig()
    R = state.R
    comps = state.components
    ci = next(i for i, c in enumerate(comps) if c.cid == neck.component)
    c = comps[ci]
    pre_q, pre_area = state_supQ(state, params), area(state)
    nid = (max(x.cid for x in comps) + 1) if next_id is None else next_id
    half = 0.5 * neck.length
    sc = neck.center_s
    blend = cfg.tau * neck.length
    ds = float(np.mean(c.cache["seg"]))
    cpt = c.nodes[neck.center]
    a_hat = np.array([cpt[0], cpt[1], 0.0])
    chart = _Chart(a_hat / np.linalg.norm(a_hat), R)
    w = cfg.cap_width
    pieces = []
    if c.is_arc:
        Ltot = float(arclength(c)[-1])
        left = _path(c, R, 0.0, sc - half / 3)
        left, m_l = _cap_end(left, R, chart, blend, w)
        right = _path(c, R, sc + half / 3, Ltot)
        right, m_r = _cap_end(right[::-1], R, chart, blend, w)
        right = right[::-1]
        keep_l = [m for m in c.modified if m[0] == 0] + [(-1, m_l, state.t)]
        keep_r = [m for m in c.modified if m[0] == -1] + [(0, m_r, state.t)]
        pieces = [(left, keep_l), (right, keep_r)]
    else:
        period = float(np.sum(c.cache["seg"]))
        arc = _path(c, R, sc + half / 3, sc - half / 3 + period)
        arc, m1 = _cap_end(arc, R, chart, blend, w)
        arc, m0 = _cap_end(arc[::-1], R, chart, blend, w)
        arc = arc[::-1]
        pieces = [(arc, [(0, m0, state.t), (-1, m1, state.t)])]
    new = []
    for k, (pts, mods) in enumerate(pieces):
        comp = Component(pts, ARC, nid + k, state.t, mods)
        geometry(ProfileState(state.t, state.n, state.K, [comp]))
        count = int(round(float(arclength(comp)[-1]) / ds)) + 1
        comp = remesh_component(comp, R, mesh, count=count)
        new.append(comp)
    post = ProfileState(state.t, state.n, state.K, comps[:ci] + new + comps[ci + 1:])
    geometry(post)
    post_q, post_area = state_supQ(post, params), area(post)
    hm = []
    for comp in new:
        s = arclength(comp)
        mask = np.zeros(len(s), bool)
        for end, length, ts in comp.modified:
            if ts == state.t:
                mask |= (s <= length) if end == 0 else (s >= s[-1] - length)
        hm.append(comp.cache["H"][mask & comp.cache["interior"]])
    hm = np.concatenate(hm)
    ev = SurgeryEvent("surgery", state.t, neck, [c.cid], [x.cid for x in new], [], pre_q, post_q,
                      pre_area, post_area, neck.H_center, (float(hm.min()), float(hm.max())))
    if post_q > pre_q + cfg.B * state.K:
        raise SurgeryRejected(f"sup Q rose from {pre_q:.6g} to {post_q:.6g}, above the cap B*K")
    return post, ev


def event_checks(ev: SurgeryEvent, cfg: SurgeryConfig, K: float) -> dict:
    if ev.kind != "surgery":
        return {"area_decrease": ev.post_area <= ev.pre_area}
    lo, hi = ev.H_modified
    return {
        "area_decrease": ev.post_area < ev.pre_area,
        "q_cap": ev.post_supQ <= ev.pre_supQ + cfg.B * K,
        "h_window": ev.H_before / 2 <= lo and hi <= 10 * ev.H_before,
    }


# ----------------------------------------------------------------- run loop

@dataclass
class RunResult:
    terminated: bool
    reason: str
    events: list
    series: list
    state: ProfileState
    flags: list = field(default_factory=list)

    @property
    def n_surgeries(self) -> int:
        return sum(e.kind == "surgery" for e in self.events)

    def classifications(self) -> dict:
        hist: dict = {}
        for e in self.events:
            for _, cls in e.discarded:
                hist[cls] = hist.get(cls, 0) + 1
        return dict(sorted(hist.items()))


def _is_round(c: Component, state: ProfileState, params: PinchingParams, cfg: SurgeryConfig) -> bool:
    n, K = state.n, state.K
    H2 = c.cache["H"] ** 2
    cyl = (c.cache["A2"] - H2 / n) / (H2 + K)
    if float(c.cache["H"].max()) < cfg.H1 * math.sqrt(K):
        return False  # only components already in the high-curvature regime
    q = component_Q(c, n, K, params)
    return bool(q.max() <= -cfg.round_Q * params.b * K / 2 and cyl.max() <= cfg.round_cyl)


def _discard(state: ProfileState, params, which: list, reason: str) -> SurgeryEvent:
    pre_q, pre_a = state_supQ(state, params), area(state)
    gone = [c for c in state.components if c.cid in which]
    disc = [(c.cid, classify_component(c)) for c in gone]
    state.components = [c for c in state.components if c.cid not in which]
    post_q = state_supQ(state, params) if state.components else math.nan
    post_a = area(state) if state.components else 0.0
    return SurgeryEvent("discard", state.t, None, [c.cid for c in gone], [], disc, pre_q, post_q,
                        pre_a, post_a, reason=reason)


def run_with_surgery(state: ProfileState, params: PinchingParams, cfg: SurgeryConfig | None = None,
                     mesh: MeshConfig | None = None, stepper: StepperConfig | None = None,
                     sigma: float = 0.05, output_dt: float = 1e-5, max_steps: int = 10_000_000,
                     on_event=None) -> RunResult:
    """Flow with surgery until every component has been discarded.

    Monitors are recorded on the time grid of multiples of ``output_dt`` (in
    units of 1/K) and at lambda0/K.  Neck detection runs whenever max H >=
    H2 sqrt(K): on the first crossing, then at output times, and at every
    step once H3 is reached.  A
    component reaching H3 sqrt(K) without a neck is discarded and classified,
    as are round components.  Derivative ratios enter the series from the
    early-time threshold lambda0/K on.
    """
    cfg = cfg or SurgeryConfig()
    mesh = mesh or MeshConfig()
    stepper = stepper or StepperConfig()
    geometry(state)
    n, K = state.n, state.K
    sK = math.sqrt(K)
    Theta = max(float(c.cache["A2"].max()) for c in state.components) / K
    t_deriv = bernstein_times(n, Theta).lambda0 / K
    events, flags = [], []
    series = [monitors(state, params, sigma, t_deriv)]
    next_id = max(c.cid for c in state.components) + 1
    k, triggered, due = 0, False, True
    clock = OutputClock(output_dt / K, [t_deriv])
    warned: set = set()

    def emit(ev):
        events.append(ev)
        series.append(monitors(state, params, sigma, t_deriv) if state.components else series[-1])
        if on_event:
            on_event(ev, state)

    reason = ""
    while True:
        if due:
            rnd = [c.cid for c in state.components if _is_round(c, state, params, cfg)]
            if rnd:
                emit(_discard(state, params, rnd, "round"))
        if not state.components:
            reason = "all-discarded"
            break
        if state.t >= stepper.t_max - 1e-15:
            reason = "long-time"
            flags.append("long-time")
            break
        maxH = [float(c.cache["H"].max()) for c in state.components]
        hot = max(maxH) >= cfg.H2 * sK
        top = max(maxH) >= cfg.H3 * sK
        if hot and (top or due or not triggered):
            triggered = True
            necks = detect_necks(state, cfg, warned)
            done = set()
            for nk in necks:
                if nk.component in done:
                    continue
                done.add(nk.component)
                if nk.full:
                    emit(_discard(state, params, [nk.component], "global-neck"))
                    continue
                if sum(e.kind == "surgery" for e in events) >= cfg.max_surgeries:
                    flags.append("surgery-cap")
                    return RunResult(False, "surgery-cap", events, series, state, flags)
                state, ev = do_surgery(state, nk, cfg, params, mesh, next_id)
                next_id += len(ev.after)
                emit(ev)
            over = [c.cid for c in state.components
                    if c.cid not in done and float(c.cache["H"].max()) >= cfg.H3 * sK]
            if over:
                emit(_discard(state, params, over, "H3-without-neck"))
            if not state.components:
                continue
        if _resolution_hit(state, stepper):
            flags.append("resolution-limit")
            reason = "resolution-limit"
            break
        if k >= max_steps:
            flags.append("step-cap")
            reason = "step-cap"
            break
        dt, due = clock.clip(state.t, min(choose_dt(state, stepper), stepper.t_max - state.t))
        step(state, dt)
        k += 1
        if not refine(state, mesh) and any(needs_remesh(c, mesh) for c in state.components):
            remesh(state, mesh, force=False)
        if due:
            series.append(monitors(state, params, sigma, t_deriv))
    if state.components and series[-1].t != state.t:
        series.append(monitors(state, params, sigma, t_deriv))
    return RunResult(reason == "all-discarded", reason, events, series, state, flags)
