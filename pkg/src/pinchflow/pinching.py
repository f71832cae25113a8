"""Pinching functionals, admissibility constants and monitored estimate ratios."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .algebra import AmbientSphere, GradSffPoint, SffPoint, ValidationError, decompose


def alpha_n(n: int) -> float:
    return max(2.0 - n / 4.0, 0.0)


def eta0(n: int) -> float:
    return 1.0 / (n - 2 + alpha_n(n)) - 1.0 / (n - 1)


def default_alpha(n: int) -> float:
    return alpha_n(n) + 0.01 if n <= 7 else 0.01


def default_eta(n: int) -> float:
    return eta0(n) / 2.0


@dataclass(frozen=True)
class PinchingParams:
    m: int = 2
    alpha: float = 0.01

    def __post_init__(self):
        if self.m < 1 or not 0.0 <= self.alpha < 1.0:
            raise ValidationError(f"invalid pinching parameters m={self.m} alpha={self.alpha}")

    def a(self, n: int) -> float:
        return 1.0 / (n - self.m + self.alpha)

    @property
    def b(self) -> float:
        return 2.0 * (self.m - self.alpha)

    def admissible(self, n: int) -> bool:
        """Preservation needs m - alpha <= n/4; for m = 2 also alpha > alpha_n."""
        ok = self.m - self.alpha <= n / 4.0
        if self.m == 2 and n <= 7:
            ok = ok and self.alpha > alpha_n(n)
        return ok

    def tau(self, n: int) -> float:
        return 0.5 * (min(n / 4.0, n * (n - 1) / (3.0 * (n + 1))) - self.m + self.alpha)

    def shifted(self, n: int) -> tuple[float, float]:
        """(a, b) moved inward by tau; used by the codimension quantity f_sigma."""
        t = max(self.tau(n), 0.0)
        return 1.0 / (n - self.m + self.alpha - t), 2.0 * (self.m - self.alpha + t)


@dataclass(frozen=True)
class ClassCParams:
    alpha: float
    V: float
    Theta: float

    def __post_init__(self):
        if not (self.V > 0 and self.Theta > 0):
            raise ValidationError("class parameters need V > 0 and Theta > 0")


def in_class_c(A2, H2, area: float, cp: ClassCParams, sphere: AmbientSphere) -> bool:
    """Membership of a sampled submanifold (pointwise |A|^2, |H|^2 arrays) in the class."""
    n, K = sphere.n, sphere.K
    A2, H2 = np.asarray(A2, float), np.asarray(H2, float)
    pinch = A2 - H2 / (n - 2 + cp.alpha) - 2 * (2 - cp.alpha) * K
    return bool(cp.alpha >= alpha_n(n) and np.all(pinch <= 0)
                and area <= cp.V * K ** (-n / 2) and np.max(A2) <= cp.Theta * K)


def Q_value(A2, H2, n: int, K: float, params: PinchingParams):
    return 0.5 * (A2 - params.a(n) * H2 - params.b * K)


def Q(p: SffPoint, params: PinchingParams, sphere: AmbientSphere) -> float:
    return float(Q_value(p.norm2, p.Hnorm**2, p.n, sphere.K, params))


def strict_pinching_rhs(n: int) -> tuple[float, float]:
    if n < 5:
        raise ValidationError("strict pinching coefficients are defined for n >= 5")
    if n >= 8:
        return 1.0 / (n - 2), 4.0
    if n == 7:
        return 4.0 / (3 * n), n / 2.0
    return 3.0 * (n + 1) / (2.0 * n * (n + 2)), 2.0 * n * (n - 1) / (3.0 * (n + 1))


def acylindrical_membership(p: SffPoint, alpha: float, eta: float, sphere: AmbientSphere) -> bool:
    n, K = p.n, sphere.K
    A2, H2 = p.norm2, p.Hnorm**2
    upper = A2 - H2 / (n - 2 + alpha) - 2 * (2 - alpha) * K
    lower = A2 - (1.0 / (n - 1) + eta) * H2
    return bool(upper <= 0.0 <= lower)


def reaction_Q(p: SffPoint, params: PinchingParams, sphere: AmbientSphere) -> float:
    """Zero-order (reaction) part of (d/dt - Laplacian) Q."""
    from .algebra import batch_tangential_norm2, batch_wedge_norm2

    n, K = p.n, sphere.K
    d = decompose(p)
    H2 = p.Hnorm**2
    WH = float(np.sum(np.einsum("ija,a->ij", p.A, p.Hvec) ** 2))
    Ar2 = float(np.sum(d.Aring**2))
    a = params.a(n)
    return float(batch_wedge_norm2(d.Aring, d.Aring) + batch_tangential_norm2(p.A, p.A)
                 - a * WH + n * K * (p.norm2 - a * H2) - 2 * n * K * Ar2)


def reaction_Q_bound(p: SffPoint, params: PinchingParams, sphere: AmbientSphere) -> float:
    """Upper bound for reaction_Q obtained from the two reaction inequalities."""
    n, K = p.n, sphere.K
    d = decompose(p)
    if not d.has_normal:
        raise ValidationError("bound requires nonzero mean curvature")
    hr = float(np.sum(d.hRing**2))
    ah = float(np.sum(d.Ahat**2))
    H2 = d.Hnorm**2
    b = params.b
    q2 = 2 * Q(p, params, sphere)
    return ((3 * hr + 1.5 * ah - H2 / n - b * K) * ah + b * K * (hr + ah + H2 / n + n * K)
            - 2 * n * K * (hr + ah) + q2 * (hr + H2 / n + n * K))


# Poincare-type inequality ----------------------------------------------------

def poincare_F(eigs, K: float) -> float:
    lam = np.asarray(eigs, dtype=float)
    return float(_F2(lam[None], K)[0])


def _F2(lam: np.ndarray, K) -> np.ndarray:
    P = lam[..., :, None] * lam[..., None, :]
    D = lam[..., :, None] - lam[..., None, :]
    return np.sum((P + np.asarray(K)[..., None, None]) ** 2 * D**2, axis=(-1, -2))


@dataclass
class PoincareResult:
    gamma: float
    feasible: int
    evaluated: int
    lam: np.ndarray | None
    ahat: float
    consistency_min: float

    @property
    def empty(self) -> bool:
        return self.feasible == 0


class _Problem:
    def __init__(self, n, alpha, eta, K):
        self.n, self.alpha, self.eta, self.K = n, alpha, eta, K
        self.c_low = 1.0 / (n - 1) + eta
        self.c_up = 1.0 / (n - 2 + alpha)

    def ahat_bounds(self, lam):
        tr = lam.sum(-1)
        s = np.sum(lam**2, -1)
        lo = np.maximum(self.c_low * tr**2 - s, 0.0)
        hi = self.c_up * tr**2 + 2 * (2 - self.alpha) * self.K - s
        ok = (tr > 0) & (lo <= hi)
        return np.sqrt(lo), np.sqrt(np.maximum(hi, 0.0)), ok

    def ratio(self, lam, ahat):
        tr = lam.sum(-1)
        W = tr**2 + self.K
        return (_F2(lam, self.K) + tr**5 * ahat + self.K**3) / W**3


def poincare_inf(n: int, alpha: float, eta: float, K: float = 1.0, budget: int = 1_000_000,
                 seed: int = 0, descents: int = 24) -> PoincareResult:
    """Estimate the infimum of (|F|^2 + tr^5 |Ahat| + K^3) / (tr^2 + K)^3 over the acylindrical set.

    The ratio grows with |Ahat| while the constraints only see |Ahat|^2, so
    the smallest admissible |Ahat| is optimal for each eigenvalue vector;
    samples with random larger |Ahat| are drawn for the consistency check.
    Eigenvalues are sampled with tr(lambda) log-stratified on [1, 1e3] sqrt(K),
    mixing generic directions with perturbations of the k-fold patterns
    (1,...,1,0,...,0) that bound the set; the best points are polished by
    Nelder-Mead.
    """
    if not 0 < eta:
        raise ValidationError("eta must be positive")
    rng = np.random.default_rng([seed, n])
    prob = _Problem(n, alpha, eta, K)
    best = (np.inf, None, 0.0)
    pool_x, pool_f = [], []
    feasible = evaluated = 0
    cons = np.inf
    chunk = 50_000
    strata = 16
    done = 0
    while done < budget:
        m = min(chunk, budget - done)
        u = (np.arange(m) % strata + rng.random(m)) / strata
        tr = np.sqrt(K) * 10.0 ** (3.0 * u)
        kind = rng.integers(0, 3, m)
        base = np.zeros((m, n))
        k = rng.integers(n - 3, n + 1, m)
        base[np.arange(n)[None, :] < k[:, None]] = 1.0
        scale = 10.0 ** rng.uniform(-4, -0.5, m)
        direc = np.where((kind == 0)[:, None], rng.standard_normal((m, n)) + 1.0 / n,
                         base + scale[:, None] * rng.standard_normal((m, n)))
        direc = np.where((kind == 2)[:, None], rng.dirichlet(np.ones(n), m), direc)
        s = direc.sum(-1)
        direc = direc[s > 1e-6] / s[s > 1e-6, None]
        lam = direc * tr[s > 1e-6, None]
        lo, hi, ok = prob.ahat_bounds(lam)
        evaluated += len(lam)
        lam, lo, hi = lam[ok], lo[ok], hi[ok]
        feasible += len(lam)
        done += m
        if len(lam) == 0:
            continue
        f = prob.ratio(lam, lo)
        extra = lo + rng.random(len(lo)) * (hi - lo)
        cons = min(cons, float(np.min(prob.ratio(lam, extra))))
        j = np.argsort(f)[:descents]
        pool_x.extend(lam[j])
        pool_f.extend(f[j])
        if f[j[0]] < best[0]:
            best = (float(f[j[0]]), lam[j[0]].copy(), float(lo[j[0]]))
    if feasible == 0:
        return PoincareResult(math.nan, 0, evaluated, None, math.nan, math.nan)

    def obj(x):
        lam = x[None]
        lo, _, ok = prob.ahat_bounds(lam)
        return float(prob.ratio(lam, lo)[0]) if ok[0] else 1e6

    order = np.argsort(pool_f)[:descents]
    for i in order:
        r = minimize(obj, pool_x[i], method="Nelder-Mead",
                     options=dict(maxiter=4000, xatol=1e-12, fatol=1e-14))
        evaluated += r.nfev
        if r.fun < best[0]:
            lo, _, _ = prob.ahat_bounds(r.x[None])
            best = (float(r.fun), r.x.copy(), float(lo[0]))
    cons = min(cons, min(pool_f))
    return PoincareResult(best[0], feasible, evaluated, best[1], best[2], cons)


# monitored ratios ------------------------------------------------------------

RATIO_KEYS = ("cylindrical_decay_ratio", "cylindrical_ratio_nminus1", "codim_fsigma",
              "gradient_ratio", "hessian_ratio", "weighted_decay")


def ratios_from_scalars(A2, H2, Ahat2, n: int, K: float, params: PinchingParams,
                        sigma: float = 0.05, t: float = 0.0, grad2=None, hess2=None,
                        h_tol: float | None = None) -> dict:
    """Vectorized estimate ratios from pointwise invariants.

    Returns a dict of arrays; ``pinching_violated`` marks points with W <= 0.
    """
    if not 0 < sigma < 1:
        raise ValidationError("sigma must lie in (0, 1)")
    A2, H2, Ahat2 = (np.asarray(v, float) for v in (A2, H2, Ahat2))
    h_tol = 1e-10 * math.sqrt(K) if h_tol is None else h_tol
    den = H2 + K
    cyl = (A2 - H2 / n) / den
    a_s, b_s = params.shifted(n)
    W = 0.5 * (b_s * K + a_s * H2 - A2)
    bad = W <= 0
    Wsafe = np.where(bad, 1.0, W)
    f = np.where((np.sqrt(H2) > h_tol) & ~bad, 0.5 * Ahat2 * Wsafe ** (sigma - 1.0), 0.0)
    f = np.where(bad & (Ahat2 > 0), np.nan, f)
    out = {
        "cylindrical_decay_ratio": cyl,
        "cylindrical_ratio_nminus1": (A2 - H2 / (n - 1)) / den,
        "codim_fsigma": f,
        "weighted_decay": cyl * math.exp(2 * K * t),
        "gradient_ratio": np.zeros_like(A2) if grad2 is None else np.asarray(grad2) / (H2**2 + K**2),
        "hessian_ratio": np.zeros_like(A2) if hess2 is None else np.asarray(hess2) / (H2**3 + K**3),
        "pinching_violated": bad,
    }
    return out


def monitor_ratios(p: SffPoint, grad=None, hess_norm=None, sphere: AmbientSphere | None = None,
                   params: PinchingParams | None = None, sigma: float = 0.05, t: float = 0.0) -> dict:
    """Estimate ratios at one point; ``grad`` is a GradSffPoint or |grad A|^2."""
    sphere = sphere or AmbientSphere(p.n, p.ell)
    params = params or PinchingParams(2, default_alpha(p.n))
    d = decompose(p, sphere.h_tol())
    Ahat2 = float(np.sum(d.Ahat**2)) if d.has_normal else 0.0
    if isinstance(grad, GradSffPoint):
        grad2 = float(np.sum(grad.T**2))
    else:
        grad2 = grad
    hess2 = None if hess_norm is None else hess_norm**2
    r = ratios_from_scalars(p.norm2, p.Hnorm**2, Ahat2, p.n, sphere.K, params, sigma, t,
                            grad2, hess2, sphere.h_tol())
    return {k: (bool(v) if k == "pinching_violated" else float(v)) for k, v in r.items()}


def codim_epsilon(n: int, params: PinchingParams) -> float:
    """epsilon with 2W >= epsilon * b * (H^2 + K) on the pinched set."""
    a_s, _ = params.shifted(n)
    return min(a_s - params.a(n), 2 * max(params.tau(n), 0.0)) / params.b


@dataclass(frozen=True)
class BernsteinTimes:
    Lambda0: float
    lambda0: float
    T_lower: float


def bernstein_times(n: int, Theta: float) -> BernsteinTimes:
    """Early-time constants: Lambda0 = 2 Theta, exp(2 n lambda0) = 1 + n/(n + 3 Lambda0).

    Times are in units of 1/K; T_lower bounds the maximal time from below.
    """
    L0 = 2.0 * Theta
    lam0 = math.log1p(n / (n + 3 * L0)) / (2 * n)
    T = math.log1p(2 * n / (3 * L0)) / (2 * n)
    return BernsteinTimes(L0, lam0, T)
