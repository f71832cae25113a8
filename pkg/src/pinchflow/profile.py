"""Rotationally symmetric mean curvature flow in S_K^{n+1}.

An SO(n)-invariant hypersurface is encoded by its profile: a curve on the
half 2-sphere {|c| = 1/sqrt(K), c_z >= 0} where c_z = rho is the radius of
the orbit S^{n-1}.  Profile components either run from the axis {rho = 0}
back to the axis (hypersurfaces diffeomorphic to S^n) or close up without
touching it (S^1 x S^{n-1}).

Principal curvatures are the geodesic curvature kappa of the profile and
lambda = -<grad rho, N>/rho with multiplicity n - 1, both taken with
respect to the same unit normal N in the quotient, so H = kappa + (n-1)
lambda and the flow moves every node by H N.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.special import gamma

from .pinching import PinchingParams, Q_value, ratios_from_scalars
from .records import MonitorRecord

SNAPSHOT_VERSION = 1
ARC, LOOP = "arc-on-axis", "closed-loop"
E3 = np.array([0.0, 0.0, 1.0])


class ProfileError(RuntimeError):
    pass


class DegenerateNeckError(ProfileError):
    pass


class NotPinchedError(ProfileError):
    pass


class ResolutionLimit(ProfileError):
    pass


def sphere_volume(k: int) -> float:
    """Volume of the unit k-sphere."""
    return 2.0 * math.pi ** ((k + 1) / 2) / gamma((k + 1) / 2)


@dataclass
class Component:
    nodes: np.ndarray
    topology: str
    cid: int = 0
    born: float = 0.0
    # surgery-modified ends: list of (end index 0 or -1, arclength from that end, time)
    modified: list = field(default_factory=list)
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def is_arc(self) -> bool:
        return self.topology == ARC

    def copy(self) -> "Component":
        return Component(self.nodes.copy(), self.topology, self.cid, self.born, list(self.modified))


@dataclass
class ProfileState:
    t: float
    n: int
    K: float
    components: list

    @property
    def R(self) -> float:
        return 1.0 / math.sqrt(self.K)

    def copy(self) -> "ProfileState":
        return ProfileState(self.t, self.n, self.K, [c.copy() for c in self.components])


# ---------------------------------------------------------------- sphere maps

def _dot(a, b):
    return np.einsum("...i,...i->...", a, b)


def _norm(v):
    return np.sqrt(_dot(v, v))


def _unit(v):
    return v / _norm(v)[..., None]


def log_map(p: np.ndarray, q: np.ndarray, R: float) -> np.ndarray:
    """Tangent vector at p pointing to q with length the geodesic distance."""
    ph, qh = p / R, q / R
    cos = np.clip(_dot(ph, qh), -1.0, 1.0)
    perp = qh - cos[..., None] * ph
    sin = _norm(perp)
    theta = np.arctan2(sin, cos)
    scale = np.where(sin > 0, R * theta / np.where(sin > 0, sin, 1.0), R)
    return perp * scale[..., None]


def exp_map(p: np.ndarray, v: np.ndarray, R: float) -> np.ndarray:
    nv = _norm(v)
    th = nv / R
    dirn = np.where(nv[..., None] > 0, v / np.where(nv > 0, nv, 1.0)[..., None], 0.0)
    out = p * np.cos(th)[..., None] + R * np.sin(th)[..., None] * dirn
    return R * _unit(out)


def reflect(c: np.ndarray) -> np.ndarray:
    out = np.array(c, dtype=float, copy=True)
    out[..., 2] *= -1.0
    return out


# ------------------------------------------------------------------ geometry

def _neighbours(c: Component):
    x = c.nodes
    if c.is_arc:
        prev = np.vstack([reflect(x[1]), x[:-1]])
        nxt = np.vstack([x[1:], reflect(x[-2])])
    else:
        prev, nxt = np.roll(x, 1, axis=0), np.roll(x, -1, axis=0)
    return prev, nxt


def _d1(f, hm, hp):
    return (hm**2 * (np.roll(f, -1) - f) + hp**2 * (f - np.roll(f, 1))) / (hm * hp * (hm + hp))


def _d2(f, hm, hp):
    return 2.0 * (hm * (np.roll(f, -1) - f) - hp * (f - np.roll(f, 1))) / (hm * hp * (hm + hp))


def _derivs(f, hm, hp, arc: bool):
    """First/second arclength derivatives; arcs use the even extension across the axis."""
    if arc:
        g = np.concatenate([[f[1]], f, [f[-2]]])
        hmg = np.concatenate([[hm[0]], hm, [hp[-1]]])
        hpg = np.concatenate([[hm[0]], hp, [hp[-1]]])
        return _d1(g, hmg, hpg)[1:-1], _d2(g, hmg, hpg)[1:-1]
    return _d1(f, hm, hp), _d2(f, hm, hp)


def geometry(state: ProfileState, comp: Component | None = None) -> None:
    """Fill the curvature cache of every component (or only ``comp``)."""
    for c in ([comp] if comp is not None else state.components):
        _component_geometry(c, state.n, state.R)


def _component_geometry(c: Component, n: int, R: float) -> None:
    x = c.nodes
    prev, nxt = _neighbours(c)
    vp, vm = log_map(x, nxt, R), log_map(x, prev, R)
    hp, hm = _norm(vp), _norm(vm)
    if np.any(hp <= 0) or np.any(hm <= 0):
        raise ProfileError("coincident nodes")
    T = _unit((hm**2)[:, None] * vp - (hp**2)[:, None] * vm)
    kvec = 2.0 * (vp / hp[:, None] + vm / hm[:, None]) / (hp + hm)[:, None]
    N = np.cross(x / R, T)
    kappa = _dot(kvec, N)
    rho = x[:, 2]
    interior = np.ones(len(x), bool)
    if c.is_arc:
        interior[[0, -1]] = False
    if np.any(rho[interior] <= 0):
        raise DegenerateNeckError(f"orbit radius vanished at an interior node (min {rho[interior].min():.3e})")
    lam = np.empty_like(kappa)
    lam[interior] = -N[interior, 2] / rho[interior]
    lam_d = lam.copy()
    if c.is_arc:
        lam[~interior] = kappa[~interior]
        # for the derivative stencils, extend lambda - kappa (even across the axis)
        # quadratically in s; feeding this back into H destabilizes the tips
        g = lam_d - kappa
        for e, i1, i2, h1 in ((0, 1, 2, hp[0]), (-1, -2, -3, hm[-1])):
            h2 = h1 + (hp[1] if e == 0 else hm[-2])
            lam_d[e] = kappa[e] + (h2**2 * g[i1] - h1**2 * g[i2]) / (h2**2 - h1**2)
    d = n - 1
    H = kappa + d * lam
    A2 = kappa**2 + d * lam**2
    ks, kss = _derivs(kappa, hm, hp, c.is_arc)
    ls, lss = _derivs(lam_d, hm, hp, c.is_arc)
    grad2 = ks**2 + 3 * d * ls**2
    w = np.zeros_like(rho)
    w[interior] = T[interior, 2] / rho[interior]
    hess2 = kss**2 + 3 * d * lss**2 + 3 * d * w**2 * (ks - 2 * ls) ** 2 + 3 * d * (d + 2) * w**2 * ls**2
    if c.is_arc:
        # the warping terms are 0*inf on the axis: use the adjacent values
        hess2[0], hess2[-1] = hess2[1], hess2[-2]
    seg = hp if not c.is_arc else hp[:-1]
    c.cache = dict(T=T, N=N, kappa=kappa, lam=lam, H=H, A2=A2, rho=rho, hp=hp, hm=hm,
                   seg=seg, grad2=grad2, hess2=hess2, interior=interior)


def arclength(c: Component) -> np.ndarray:
    seg = c.cache["seg"]
    return np.concatenate([[0.0], np.cumsum(seg)])


def area(state: ProfileState) -> float:
    tot = 0.0
    w = sphere_volume(state.n - 1)
    for c in state.components:
        r = np.maximum(c.cache["rho"], 0.0) ** (state.n - 1)
        if c.is_arc:
            tot += np.sum(0.5 * (r[:-1] + r[1:]) * c.cache["seg"])
        else:
            tot += np.sum(0.5 * (r + np.roll(r, -1)) * c.cache["seg"])
    return float(w * tot)


# ------------------------------------------------------------------- stepping

@dataclass
class MeshConfig:
    nodes: int = 256
    ds: float | None = None
    remesh_ratio: float = 1.5
    min_nodes: int = 24
    # halve the spacing of a component once |A|^2 ds^2 exceeds this (None: never)
    refine_at: float | None = None
    max_nodes: int = 200_000


@dataclass
class StepperConfig:
    c_cfl: float = 0.1
    c_rxn: float = 0.1
    t_max: float = 1.0
    resolution: float = 0.1


def choose_dt(state: ProfileState, cfg: StepperConfig | None = None) -> float:
    cfg = cfg or StepperConfig()
    ds = min(float(np.min(c.cache["seg"])) for c in state.components)
    a2 = max(float(np.max(c.cache["A2"])) for c in state.components)
    return min(cfg.c_cfl * ds**2, cfg.c_rxn / max(a2, 1e-300))


def step(state: ProfileState, dt: float) -> ProfileState:
    """Forward Euler step of the reduced flow; caches are refreshed on return."""
    R = state.R
    for c in state.components:
        v = dt * c.cache["H"][:, None] * c.cache["N"]
        x = exp_map(c.nodes, v, R)
        if c.is_arc:
            x[[0, -1], 2] = 0.0
            x[[0, -1]] = R * _unit(x[[0, -1]])
        if not np.all(np.isfinite(x)):
            raise ProfileError("non-finite node after step")
        c.nodes = x
    state.t += dt
    geometry(state)
    return state


def needs_remesh(c: Component, mesh: MeshConfig) -> bool:
    seg = c.cache["seg"]
    if mesh.ds:
        return bool(seg.min() < 0.5 * mesh.ds or seg.max() > 2.0 * mesh.ds
                    or seg.max() > mesh.remesh_ratio * seg.min())
    return bool(seg.max() > mesh.remesh_ratio * seg.min())


def remesh_component(c: Component, R: float, mesh: MeshConfig | None = None,
                     count: int | None = None) -> Component:
    """Resample at uniform arclength with a cubic spline through the nodes.

    Arcs are extended by their mirror image across the axis before fitting,
    so the resampled curve still meets the axis orthogonally.
    """
    mesh = mesh or MeshConfig()
    if "seg" not in c.cache:
        _component_geometry(c, 3, R)
    x = c.nodes
    s = arclength(c)
    L = s[-1]
    if count is None:
        count = len(x) if not mesh.ds else int(round(L / mesh.ds)) + (1 if c.is_arc else 0)
    count = max(count, mesh.min_nodes)
    if c.is_arc:
        g = min(4, len(x) - 1)
        left = reflect(x[1:g + 1][::-1])
        right = reflect(x[-g - 1:-1][::-1])
        sl = -s[1:g + 1][::-1]
        sr = L + (L - s[-g - 1:-1][::-1])
        xs = np.vstack([left, x, right])
        ss = np.concatenate([sl, s, sr])
        sp = CubicSpline(ss, xs, axis=0)
        snew = np.linspace(0.0, L, count)
        y = sp(snew)
        y[[0, -1], 2] = 0.0
    else:
        seg = c.cache["seg"]
        ss = np.concatenate([[0.0], np.cumsum(seg)])
        xs = np.vstack([x, x[:1]])
        sp = CubicSpline(ss, xs, axis=0, bc_type="periodic")
        snew = np.arange(count) * ss[-1] / count
        y = sp(snew)
    out = Component(R * _unit(y), c.topology, c.cid, c.born, list(c.modified))
    return out


def refine(state: ProfileState, mesh: MeshConfig) -> bool:
    """Double the node count of under-resolved components; True if any changed."""
    if mesh.refine_at is None:
        return False
    changed = False
    comps = []
    for c in state.components:
        h = float(np.max(c.cache["seg"]))
        if (float(np.max(c.cache["A2"])) * h * h > mesh.refine_at or neck_radius(c) < 6 * h) \
                and 2 * len(c.nodes) <= mesh.max_nodes:
            c = remesh_component(c, state.R, mesh, count=2 * len(c.nodes) - (1 if c.is_arc else 0))
            changed = True
        comps.append(c)
    if changed:
        state.components = comps
        geometry(state)
    return changed


def remesh(state: ProfileState, mesh: MeshConfig | None = None, force: bool = True) -> ProfileState:
    mesh = mesh or MeshConfig()
    comps = []
    for c in state.components:
        if force or needs_remesh(c, mesh):
            c = remesh_component(c, state.R, mesh)
        comps.append(c)
    state.components = comps
    geometry(state)
    return state


# ------------------------------------------------------------------- monitors

def component_Q(c: Component, n: int, K: float, params: PinchingParams) -> np.ndarray:
    return Q_value(c.cache["A2"], c.cache["H"] ** 2, n, K, params)


def neck_radius(c: Component) -> float:
    """Smallest interior local minimum of the orbit radius (inf if there is none)."""
    rho = c.cache["rho"]
    if c.is_arc:
        i = np.arange(1, len(rho) - 1)
        loc = i[(rho[i] <= rho[i - 1]) & (rho[i] <= rho[i + 1])]
    else:
        loc = np.nonzero((rho <= np.roll(rho, 1)) & (rho <= np.roll(rho, -1)))[0]
    return float(rho[loc].min()) if len(loc) else math.inf


def monitors(state: ProfileState, params: PinchingParams, sigma: float = 0.05,
             derivative_start: float = 0.0) -> MonitorRecord:
    """Sup-over-mesh monitor record; derivative ratios are reported from ``derivative_start`` on."""
    n, K, t = state.n, state.K, state.t
    acc = dict(maxH=-math.inf, minH=math.inf, minRho=math.inf, supQ=-math.inf, cyl=-math.inf,
               wd=-math.inf, cyl1=-math.inf, grad=-math.inf, hess=-math.inf, f=-math.inf)
    flags = []
    for c in state.components:
        ch = c.cache
        H2 = ch["H"] ** 2
        r = ratios_from_scalars(ch["A2"], H2, np.zeros_like(H2), n, K, params, sigma, t,
                                ch["grad2"], ch["hess2"])
        acc["maxH"] = max(acc["maxH"], float(ch["H"].max()))
        acc["minH"] = min(acc["minH"], float(ch["H"].min()))
        acc["minRho"] = min(acc["minRho"], neck_radius(c))
        acc["supQ"] = max(acc["supQ"], float(component_Q(c, n, K, params).max()))
        acc["cyl"] = max(acc["cyl"], float(r["cylindrical_decay_ratio"].max()))
        acc["wd"] = max(acc["wd"], float(r["weighted_decay"].max()))
        acc["cyl1"] = max(acc["cyl1"], float(r["cylindrical_ratio_nminus1"].max()))
        acc["grad"] = max(acc["grad"], float(r["gradient_ratio"].max()))
        acc["hess"] = max(acc["hess"], float(r["hessian_ratio"].max()))
        acc["f"] = max(acc["f"], float(np.nanmax(r["codim_fsigma"])))
        if np.any(r["pinching_violated"]):
            flags.append("pinching-violated")
    if not state.components:
        flags.append("empty")
        acc = {k: math.nan for k in acc}
    if acc["minRho"] == math.inf:
        acc["minRho"] = math.nan
        flags.append("no-neck")
    if t < derivative_start:
        acc["grad"] = acc["hess"] = math.nan
        flags.append("before-lambda0")
    return MonitorRecord(t=t, maxH=acc["maxH"], minH=acc["minH"], minRho=acc["minRho"],
                         area=area(state) if state.components else math.nan, supQ=acc["supQ"],
                         cylDecayRatio=acc["cyl"], weightedDecay=acc["wd"], cylRatioN1=acc["cyl1"],
                         gradRatio=acc["grad"], hessRatio=acc["hess"], codimFsigma=acc["f"],
                         flags=sorted(set(flags)))


def resolution(state: ProfileState) -> float:
    """max |A|^2 ds^2 over the mesh."""
    return max(float(np.max(c.cache["A2"]) * np.max(c.cache["seg"]) ** 2) for c in state.components)


# ------------------------------------------------------------- initial data

def _arc_from_points(pts: np.ndarray, R: float, nodes: int, ds: float | None, cid: int = 0) -> Component:
    c = Component(R * _unit(pts), ARC, cid)
    c.nodes[[0, -1], 2] = 0.0
    _component_geometry(c, 3, R)
    for _ in range(2):
        c = remesh_component(c, R, MeshConfig(nodes=nodes, ds=ds), count=None if ds else nodes)
        _component_geometry(c, 3, R)
    return c


def geodesic_sphere_nodes(phi: float, nodes: int, R: float) -> np.ndarray:
    th = np.linspace(0.0, math.pi, nodes)
    return R * np.stack([np.full_like(th, math.cos(phi)), math.sin(phi) * np.cos(th),
                         math.sin(phi) * np.sin(th)], axis=1)


def build_geodesic_sphere(phi: float, n: int, K: float = 1.0, nodes: int = 256) -> ProfileState:
    R = 1.0 / math.sqrt(K)
    x = geodesic_sphere_nodes(phi, nodes, R)
    x[[0, -1], 2] = 0.0
    st = ProfileState(0.0, n, K, [Component(x, ARC)])
    geometry(st)
    return st


def build_clifford(phi: float, n: int, K: float = 1.0, nodes: int = 256) -> ProfileState:
    R = 1.0 / math.sqrt(K)
    # clockwise, so that the normal points towards the axis and H > 0
    th = -np.arange(nodes) * 2 * math.pi / nodes
    x = R * np.stack([math.cos(phi) * np.cos(th), math.cos(phi) * np.sin(th),
                      np.full_like(th, math.sin(phi))], axis=1)
    st = ProfileState(0.0, n, K, [Component(x, LOOP)])
    geometry(st)
    return st


def build_perturbed_sphere(amplitude: float, mode: int, n: int, K: float = 1.0, nodes: int = 256,
                           phi0: float = math.pi / 2) -> ProfileState:
    """Geodesic sphere around an axis point whose radius angle is phi0 + amplitude cos(mode theta)."""
    R = 1.0 / math.sqrt(K)
    th = np.linspace(0.0, math.pi, 4 * nodes)
    phi = phi0 + amplitude * np.cos(mode * th)
    x = R * np.stack([np.cos(phi), np.sin(phi) * np.cos(th), np.sin(phi) * np.sin(th)], axis=1)
    st = ProfileState(0.0, n, K, [_arc_from_points(x, R, nodes, None)])
    geometry(st)
    return st


def _smoothstep(x):
    x = min(max(x, 0.0), 1.0)
    return x**3 * (10 - 15 * x + 6 * x * x)


def _dumbbell_half(rho_n: float, tube: float, flare: float, slope: float, R: float):
    """Half profile from the middle of the neck to the axis.

    The curve is integrated with geodesic curvature kappa = y(s) lambda:
    y starts at the latitude-circle value (an exact tube), ramps to the
    concave ``slope`` over the flare and then to 1.  Where y = 1 the
    hypersurface is umbilic, so the rest is the geodesic circle through the
    current point, which closes on the axis.
    """
    from scipy.integrate import solve_ivp

    psi = math.asin(rho_n / R)
    yt = -math.tan(psi) ** 2
    ramp = 0.5 * rho_n
    s1, s2 = tube, tube + ramp
    s3, s4 = s2 + flare, s2 + flare + ramp

    def y(s):
        if s < s1:
            return yt
        if s < s2:
            return yt + (slope - yt) * _smoothstep((s - s1) / ramp)
        if s < s3:
            return slope
        return slope + (1.0 - slope) * _smoothstep((s - s3) / ramp)

    def rhs(s, u):
        c, T = u[:3], u[3:]
        N = np.cross(c / R, T)
        return np.concatenate([T, y(s) * (-N[2] / c[2]) * N - c / R**2])

    u0 = np.array([R * math.cos(psi), 0.0, R * math.sin(psi), 0.0, -1.0, 0.0])
    sol = solve_ivp(rhs, (0.0, s4), u0, rtol=1e-11, atol=1e-13 * R, dense_output=True,
                    max_step=ramp / 20)
    c, T = sol.y[:3, -1], sol.y[3:, -1]
    N = np.cross(c / R, T)
    phi = math.atan2(1.0, -N[2] / c[2] * R)
    centre = math.cos(phi) * c + R * math.sin(phi) * N
    centre[2] = 0.0
    centre = R * centre / np.linalg.norm(centre)
    return sol, s4, c, T, centre, phi


def _cap_points(c, T, centre, phi, R, count):
    ah = centre / R
    e1 = c / R - math.cos(phi) * ah
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(ah, e1)
    if np.dot(e2, T) < 0:
        e2 = -e2
    r0 = math.atan2(-e1[2], e2[2]) % math.pi
    th_end = r0 if r0 > 1e-12 else r0 + math.pi  # first zero of z after the start
    th = np.linspace(0.0, th_end, count)
    pts = R * (math.cos(phi) * ah[None] + math.sin(phi) * (np.cos(th)[:, None] * e1 + np.sin(th)[:, None] * e2))
    pts[-1, 2] = 0.0
    return pts


def build_dumbbell(neck_ratio: float, separation: float, n: int, K: float = 1.0,
                   nodes: int = 512, ds: float | None = None, bulb: float = 0.5,
                   slope: float = -0.3) -> ProfileState:
    """Two geodesic bulbs of angular radius ``bulb`` joined by a tube.

    neck_ratio is the tube radius over the bulb radius sin(bulb)/sqrt(K);
    separation is the angle (in radians of the axis circle) between the bulb
    centres.  The flares have kappa/lambda = ``slope``, gentle enough to keep
    the data quadratically pinched.
    """
    from scipy.optimize import brentq

    R = 1.0 / math.sqrt(K)
    rho_n = neck_ratio * R * math.sin(bulb)
    if not 0 < rho_n < R * math.sin(bulb):
        raise ProfileError("neck_ratio must lie in (0, 1)")

    def cap_angle(flare):
        return _dumbbell_half(rho_n, 0.0, flare, slope, R)[5] - bulb

    if cap_angle(0.0) >= 0:
        raise ProfileError("bulbs too small for this neck")
    hi = R
    while cap_angle(hi) < 0:
        hi *= 2
        if hi > 10 * R:
            raise ProfileError("bulb angle not reachable")
    flare = brentq(cap_angle, 0.0, hi, xtol=1e-12 * R)
    centre0 = _dumbbell_half(rho_n, 0.0, flare, slope, R)[4]
    g = abs(math.atan2(centre0[1], centre0[0]))
    psi = math.asin(rho_n / R)
    tube = (0.5 * separation - g) * R * math.cos(psi)
    if tube < 0:
        raise ProfileError(f"separation below the minimum {2 * g:.6g} for these bulbs")
    if 0.5 * separation + bulb >= math.pi - 0.05:
        raise ProfileError("dumbbell does not fit between antipodal axis points")
    sol, s_end, c, T, centre, phi = _dumbbell_half(rho_n, tube, flare, slope, R)
    ss = np.linspace(0.0, s_end, 20 * nodes)
    body = sol.sol(ss)[:3].T
    cap = _cap_points(c, T, centre, phi, R, 10 * nodes)[1:]
    half = np.vstack([body, cap])
    mirror = half[::-1].copy()
    mirror[:, 1] *= -1.0
    pts = np.vstack([mirror[:-1], half])  # from +u to -u keeps the normal pointing inwards
    st = ProfileState(0.0, n, K, [_arc_from_points(pts, R, nodes, ds)])
    geometry(st)
    return st


def check_pinched(state: ProfileState, params: PinchingParams, tol: float = 0.0) -> float:
    supq = max(float(component_Q(c, state.n, state.K, params).max()) for c in state.components)
    if supq > tol:
        raise NotPinchedError(f"initial data not pinched: sup Q = {supq:.6g}")
    return supq


# ------------------------------------------------------------------ snapshots

def snapshot(state: ProfileState, params: PinchingParams | None = None) -> dict:
    return {
        "version": SNAPSHOT_VERSION,
        "t": float(f"{state.t:.12g}"),
        "K": state.K,
        "n": state.n,
        "params": None if params is None else {"m": params.m, "alpha": params.alpha},
        "components": [{"topology": c.topology, "id": c.cid,
                        "nodes": [[float(f"{v:.15g}") for v in p] for p in c.nodes]}
                       for c in state.components],
    }


def write_snapshot(path, state: ProfileState, params: PinchingParams | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(snapshot(state, params), fh, sort_keys=True)


def read_snapshot(path) -> ProfileState:
    with open(path) as fh:
        d = json.load(fh)
    if d.get("version") != SNAPSHOT_VERSION:
        raise ProfileError(f"unsupported snapshot version {d.get('version')}")
    comps = [Component(np.asarray(c["nodes"], float), c["topology"], c.get("id", i))
             for i, c in enumerate(d["components"])]
    st = ProfileState(d["t"], d["n"], d["K"], comps)
    geometry(st)
    return st


# ------------------------------------------------------------------ evolution

@dataclass
class Evolution:
    state: ProfileState
    series: list
    reason: str
    steps: int


class OutputClock:
    """Output times k * every, plus optional extra times; steps are clipped to land on them."""

    def __init__(self, every: float, extra=()):
        if not every > 0:
            raise ValueError("output interval must be positive")
        self.every = every
        self.extra = sorted(float(x) for x in extra)

    def next_after(self, t: float) -> float:
        k = math.floor(t / self.every + 1e-9) + 1
        nxt = k * self.every
        for x in self.extra:
            if t + 1e-15 < x < nxt:
                return x
        return nxt

    def clip(self, t: float, dt: float) -> tuple[float, bool]:
        nxt = self.next_after(t)
        if t + dt >= nxt - 1e-15:
            return nxt - t, True
        return dt, False


def evolve(state: ProfileState, t_end: float, params: PinchingParams, mesh: MeshConfig | None = None,
           stepper: StepperConfig | None = None, sigma: float = 0.05, output_dt: float | None = None,
           stop_on_resolution: bool = True, derivative_start: float = 0.0) -> Evolution:
    """Plain evolution (no surgery) until t_end or the resolution limit.

    Monitors are recorded on the grid of multiples of ``output_dt`` (default
    t_end / 200) and at ``derivative_start``.
    """
    mesh = mesh or MeshConfig()
    stepper = stepper or StepperConfig()
    clock = OutputClock(output_dt or t_end / 200, [derivative_start] if derivative_start > 0 else [])
    series = [monitors(state, params, sigma, derivative_start)]
    k = 0
    reason = "t_end"
    while state.t < t_end - 1e-15:
        if stop_on_resolution and _resolution_hit(state, stepper):
            reason = "resolution-limit"
            break
        dt, due = clock.clip(state.t, min(choose_dt(state, stepper), t_end - state.t))
        try:
            step(state, dt)
        except DegenerateNeckError:
            reason = "degenerate-neck"
            break
        k += 1
        if not refine(state, mesh) and any(needs_remesh(c, mesh) for c in state.components):
            remesh(state, mesh, force=False)
        if due:
            series.append(monitors(state, params, sigma, derivative_start))
    if series[-1].t != state.t:
        series.append(monitors(state, params, sigma, derivative_start))
    return Evolution(state, series, reason, k)


def _resolution_hit(state: ProfileState, stepper: StepperConfig) -> bool:
    if resolution(state) > stepper.resolution:
        return True
    for c in state.components:
        if neck_radius(c) < 3.0 * float(np.max(c.cache["seg"])):
            return True
    return False
