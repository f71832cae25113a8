"""Closed-form symmetric solutions and their reduced flow ODEs.

Geodesic spheres of angular radius phi have all principal curvatures
sqrt(K) cot(phi).  The product S^p(cos phi) x S^q(sin phi) (radii in units
of 1/sqrt(K)) has curvatures sqrt(K) tan(phi) (p times) and
-sqrt(K) cot(phi) (q times) with respect to the normal pointing towards
increasing phi.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.integrate import quad

from .algebra import AmbientSphere, SffPoint, ValidationError
from .pinching import PinchingParams, Q, default_alpha, monitor_ratios


@dataclass(frozen=True)
class GeodesicSphere:
    phi: float
    sphere: AmbientSphere

    @property
    def domain(self):
        return 0.0, math.pi

    def principal(self) -> np.ndarray:
        k = math.sqrt(self.sphere.K) / math.tan(self.phi)
        return np.full(self.sphere.n, k)


@dataclass(frozen=True)
class CliffordTorus:
    p: int
    q: int
    phi: float
    sphere: AmbientSphere

    def __post_init__(self):
        if self.p < 0 or self.q < 1 or self.p + self.q != self.sphere.n:
            raise ValidationError(f"need p + q = n, got p={self.p} q={self.q} n={self.sphere.n}")

    @property
    def domain(self):
        return 0.0, math.pi / 2

    def principal(self) -> np.ndarray:
        s = math.sqrt(self.sphere.K)
        return np.array([s * math.tan(self.phi)] * self.p + [-s / math.tan(self.phi)] * self.q)


@dataclass(frozen=True)
class CliffordEmbedding:
    p: int
    epsilon: float
    sphere: AmbientSphere

    def __post_init__(self):
        if self.p not in (1, 2):
            raise ValidationError("Clifford embedding needs p in {1, 2}")
        if not self.epsilon > 0:
            raise ValidationError("epsilon must be positive")

    def torus(self) -> CliffordTorus:
        # cos^2 phi = 1 / (1 + eps^2)  <=>  tan phi = eps
        return CliffordTorus(self.p, self.sphere.n - self.p, math.atan(self.epsilon), self.sphere)

    @property
    def phi(self) -> float:
        return self.torus().phi

    @property
    def domain(self):
        return 0.0, math.pi / 2

    def principal(self) -> np.ndarray:
        return self.torus().principal()


ExactFamily = GeodesicSphere | CliffordTorus | CliffordEmbedding


def _check(f) -> None:
    lo, hi = f.domain
    if not lo < f.phi < hi:
        raise ValidationError(f"angle {f.phi} outside the open domain ({lo}, {hi})")


def sff_of(f) -> SffPoint:
    _check(f)
    return SffPoint.hypersurface(f.principal(), ell=f.sphere.ell)


def rhs(f, phi: float) -> float:
    n, K = f.sphere.n, f.sphere.K
    if isinstance(f, GeodesicSphere):
        return -n * K / math.tan(phi)
    t = f.torus() if isinstance(f, CliffordEmbedding) else f
    # the normal speed H moves the phi-coordinate at rate sqrt(K) * H
    return K * (t.p * math.tan(phi) - t.q / math.tan(phi))


def mcf_rhs(f) -> float:
    _check(f)
    return rhs(f, f.phi)


def with_phi(f, phi: float):
    if isinstance(f, CliffordEmbedding):
        return replace(f.torus(), phi=phi)
    return replace(f, phi=phi)


def default_dt(f) -> float:
    return 1e-3 / (f.sphere.n * f.sphere.K)


def rk4_step(g, y: float, dt: float) -> float:
    k1 = g(y)
    k2 = g(y + 0.5 * dt * k1)
    k3 = g(y + 0.5 * dt * k2)
    k4 = g(y + dt * k3)
    return y + dt * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0


@dataclass
class ExactSample:
    t: float
    phi: float
    Hnorm: float
    normA2: float
    Q: float
    ratios: dict


@dataclass
class ExactTrajectory:
    family: object
    samples: list
    terminal: str  # "t_end", "extinction", "domain"
    extinction_time: float | None = None

    def write_csv(self, path) -> None:
        cols = ["t", "phi", "Hnorm", "normA2", "Q", "cylDecayRatio", "weightedDecay",
                "cylRatioN1", "codimFsigma"]
        keys = ["cylindrical_decay_ratio", "weighted_decay", "cylindrical_ratio_nminus1",
                "codim_fsigma"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(cols)
            for s in self.samples:
                w.writerow([f"{v:.12g}" for v in (s.t, s.phi, s.Hnorm, s.normA2, s.Q)]
                           + [f"{s.ratios[k]:.12g}" for k in keys])


def _sample(f, phi, t, params, sigma) -> ExactSample:
    p = sff_of(with_phi(f, phi))
    r = monitor_ratios(p, sphere=f.sphere, params=params, sigma=sigma, t=t)
    return ExactSample(t, phi, p.Hnorm, p.norm2, Q(p, params, f.sphere), r)


def _tail_time(f, phi: float) -> tuple[float, float]:
    """Time left until phi reaches the domain boundary it is heading to."""
    lo, hi = f.domain
    g = lambda x: rhs(f, x)  # noqa: E731
    target = lo if g(phi) < 0 else hi
    val, _ = quad(lambda x: 1.0 / abs(g(x)), min(phi, target), max(phi, target),
                  epsabs=1e-14, epsrel=1e-12, limit=200)
    return val, target


def evolve_exact(f, t_end: float, dt: float | None = None, params: PinchingParams | None = None,
                 sigma: float = 0.05, record_every: int = 1, stiff: float = 0.05) -> ExactTrajectory:
    """Fixed-step RK4 integration of the reduced ODE.

    Integration stops when the solution approaches a domain boundary, judged
    by the local stiffness |d rhs/d phi| * dt exceeding ``stiff``; the
    remaining time to the boundary is then the quadrature of 1/|rhs|, which
    gives the extinction time.
    """
    _check(f)
    dt = dt or default_dt(f)
    if dt <= 0:
        raise ValidationError("dt must be positive")
    params = params or PinchingParams(2, default_alpha(f.sphere.n))
    g = lambda x: rhs(f, x)  # noqa: E731
    lo, hi = f.domain
    phi, t, k = f.phi, 0.0, 0
    samples = [_sample(f, phi, t, params, sigma)]
    while t < t_end - 1e-15:
        h = min(dt, t_end - t)
        eps = 1e-7
        jac = abs(g(min(max(phi + eps, lo + eps), hi - eps)) - g(max(min(phi - eps, hi - eps), lo + eps))) / (2 * eps)
        new = rk4_step(g, phi, h) if jac * h <= stiff else math.nan
        if not (lo < new < hi) or not math.isfinite(new):
            tail, target = _tail_time(f, phi)
            T = t + tail
            if T <= t_end:
                samples.append(_sample(f, phi, t, params, sigma))
                return ExactTrajectory(f, samples, "extinction", T)
            # boundary is far in time but stepping is stiff: shrink the step
            h = h / 10
            new = rk4_step(g, phi, h)
            if not lo < new < hi:
                return ExactTrajectory(f, samples, "domain", T)
        phi, t, k = new, t + h, k + 1
        if k % record_every == 0 or t >= t_end - 1e-15:
            samples.append(_sample(f, phi, t, params, sigma))
    return ExactTrajectory(f, samples, "t_end")


def extinction_time(f, dt: float | None = None) -> float:
    """Extinction time of a shrinking family, integrating until it vanishes."""
    tr = evolve_exact(f, t_end=1e6, dt=dt, record_every=10**9)
    if tr.extinction_time is None:
        raise ValidationError("family does not become extinct")
    return tr.extinction_time


def clifford_pinching_value(p: int, n: int, epsilon: float, K: float = 1.0) -> float:
    """|A|^2 - |H|^2/(n-p) - 2pK on the Clifford embedding, computed from its form."""
    if p not in (1, 2):
        raise ValidationError("p must be 1 or 2")
    if n < 5:
        raise ValidationError("n must be at least 5")
    A = sff_of(CliffordEmbedding(p, epsilon, AmbientSphere(n, 1, K)))
    lam = np.diag(A.A[:, :, 0])
    x, y = lam[:p], lam[p:]
    q = n - p
    # |A|^2 - H^2/q regrouped so the large O(1/eps^2) block cancels exactly:
    # sum x^2 + sum (y - ybar)^2 - (sum x)^2 / q - 2 (sum x) ybar
    ybar = y.mean()
    return float(np.sum(x**2) + np.sum((y - ybar) ** 2) - x.sum() ** 2 / q - 2 * x.sum() * ybar - 2 * p * K)
