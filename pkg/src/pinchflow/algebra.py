"""Pointwise algebra of vector-valued second fundamental forms.

Tensors live in orthonormal frames, so the metric is the identity.  A form
``A`` is stored with shape ``(n, n, ell)``: two tangent indices followed by
one normal index.  A totally symmetric 3-tensor standing in for ``grad A``
has shape ``(n, n, n, ell)``.

Every kernel below accepts arbitrary leading batch dimensions, which is
how the randomized suites evaluate 10^5 samples at once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INEQUALITIES = ("Kato3", "KatoA", "KatoB", "AnBa1", "LiLi")
DISTRIBUTIONS = ("gaussian", "trace-free-gaussian", "near-cylindrical")
GRAD_DISTRIBUTIONS = ("gaussian", "kato-extremal")

KATO3 = lambda n: 3.0 / (n + 2)  # noqa: E731
KATO_SPLIT = lambda n: 2.0 * (n - 1) / (n * (n + 2))  # noqa: E731


class ValidationError(ValueError):
    pass


@dataclass(frozen=True)
class AmbientSphere:
    n: int
    ell: int = 1
    K: float = 1.0

    def __post_init__(self):
        if self.n < 2 or self.ell < 1 or not self.K > 0:
            raise ValidationError(f"invalid ambient sphere n={self.n} ell={self.ell} K={self.K}")

    @property
    def radius(self) -> float:
        return 1.0 / np.sqrt(self.K)

    def h_tol(self, rel: float = 1e-10) -> float:
        return rel * np.sqrt(self.K)


def _check_form(A: np.ndarray, atol: float = 1e-12) -> np.ndarray:
    A = np.asarray(A, dtype=float)
    if A.ndim < 3 or A.shape[-3] != A.shape[-2]:
        raise ValidationError(f"form must have shape (..., n, n, ell), got {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if not np.allclose(A, np.swapaxes(A, -3, -2), atol=atol * scale, rtol=0):
        raise ValidationError("form is not symmetric in its tangent indices")
    return A


@dataclass(frozen=True, eq=False)
class SffPoint:
    """A second fundamental form at one point, ``A[i, j, alpha]``."""

    A: np.ndarray

    def __post_init__(self):
        A = _check_form(self.A)
        if A.ndim != 3:
            raise ValidationError("SffPoint holds a single form; use the batch kernels for stacks")
        A = A.copy()
        A.setflags(write=False)
        object.__setattr__(self, "A", A)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def ell(self) -> int:
        return self.A.shape[2]

    @property
    def norm2(self) -> float:
        return float(np.sum(self.A**2))

    @property
    def Hvec(self) -> np.ndarray:
        return np.einsum("iia->a", self.A)

    @property
    def Hnorm(self) -> float:
        return float(np.linalg.norm(self.Hvec))

    @classmethod
    def from_slots(cls, *mats) -> "SffPoint":
        return cls(np.stack([np.asarray(m, dtype=float) for m in mats], axis=-1))

    @classmethod
    def hypersurface(cls, principal, ell: int = 1) -> "SffPoint":
        lam = np.asarray(principal, dtype=float)
        A = np.zeros((lam.size, lam.size, ell))
        A[:, :, 0] = np.diag(lam)
        return cls(A)


@dataclass(frozen=True, eq=False)
class GradSffPoint:
    """Totally symmetric ``T[i, j, k, alpha]`` standing in for grad A."""

    T: np.ndarray

    def __post_init__(self):
        T = np.asarray(self.T, dtype=float)
        if T.ndim != 4 or not (T.shape[0] == T.shape[1] == T.shape[2]):
            raise ValidationError(f"gradient tensor must have shape (n, n, n, ell), got {T.shape}")
        scale = max(1.0, float(np.max(np.abs(T)))) if T.size else 1.0
        for perm in ((1, 0, 2, 3), (0, 2, 1, 3)):
            if not np.allclose(T, T.transpose(perm), atol=1e-12 * scale, rtol=0):
                raise ValidationError("gradient tensor is not totally symmetric")
        T = T.copy()
        T.setflags(write=False)
        object.__setattr__(self, "T", T)

    @property
    def n(self) -> int:
        return self.T.shape[0]

    @property
    def gradH(self) -> np.ndarray:
        return np.einsum("iika->ka", self.T)


@dataclass(frozen=True, eq=False)
class Decomposition:
    Hvec: np.ndarray
    Hnorm: float
    Aring: np.ndarray
    nu: np.ndarray | None = None
    h: np.ndarray | None = None
    hRing: np.ndarray | None = None
    Ahat: np.ndarray | None = None

    @property
    def has_normal(self) -> bool:
        return self.nu is not None


# batched kernels ------------------------------------------------------------

def batch_decompose(A: np.ndarray, tol: float):
    """Return (Hvec, Hnorm, nu, h, hRing, Ahat, Aring); nu is NaN where Hnorm <= tol."""
    n = A.shape[-3]
    eye = np.eye(n)
    Hvec = np.einsum("...iia->...a", A)
    Hn = np.linalg.norm(Hvec, axis=-1)
    ok = Hn > tol
    safe = np.where(ok, Hn, 1.0)
    nu = np.where(ok[..., None], Hvec / safe[..., None], np.nan)
    h = np.einsum("...ija,...a->...ij", A, nu)
    hRing = h - (Hn / n)[..., None, None] * eye
    Ahat = A - h[..., None] * nu[..., None, None, :]
    Aring = A - Hvec[..., None, None, :] * eye[..., None] / n
    return Hvec, Hn, nu, h, hRing, Ahat, Aring


def batch_wedge(S: np.ndarray, T: np.ndarray) -> np.ndarray:
    """(S ^ T)[..., a, b, u, v] = sum_k S[u,k,a] T[v,k,b] - S[v,k,a] T[u,k,b]."""
    Sm = np.moveaxis(S, -1, -3)[..., :, None, :, :]  # (..., a, 1, u, k)
    Tm = np.moveaxis(T, -1, -3)[..., None, :, :, :]  # (..., 1, b, k, v); T[v,k] = T[k,v]
    P = Sm @ Tm
    return P - np.swapaxes(P, -1, -2)


def batch_tangential(S: np.ndarray, T: np.ndarray) -> np.ndarray:
    """<S, T>^T[..., a, b] = sum_ij S[i,j,a] T[i,j,b]."""
    n = S.shape[-3]
    Sf = S.reshape(S.shape[:-3] + (n * n, S.shape[-1]))
    Tf = T.reshape(T.shape[:-3] + (n * n, T.shape[-1]))
    return np.swapaxes(Sf, -1, -2) @ Tf


def _sq(X: np.ndarray, nd: int) -> np.ndarray:
    return np.sum(X**2, axis=tuple(range(-nd, 0)))


def batch_wedge_norm2(S: np.ndarray, T: np.ndarray) -> np.ndarray:
    return _sq(batch_wedge(S, T), 4)


def batch_tangential_norm2(S: np.ndarray, T: np.ndarray) -> np.ndarray:
    return _sq(batch_tangential(S, T), 2)


def batch_symmetrize3(T: np.ndarray) -> np.ndarray:
    b = T.ndim - 4
    lead = list(range(b))
    ax = lambda *p: lead + [b + q for q in p] + [b + 3]  # noqa: E731
    C = T + T.transpose(ax(1, 2, 0)) + T.transpose(ax(2, 0, 1))
    return (C + C.transpose(ax(1, 0, 2))) / 6.0


def _ratio(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    den = np.asarray(den, dtype=float)
    return np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)


def _split_margin(S: np.ndarray) -> np.ndarray:
    """Normalized slack of |S - delta (x) trS / n|^2 >= 2(n-1)/(n(n+2)) |trS|^2."""
    n = S.shape[-4]
    V = np.einsum("...iika->...ka", S)
    eye = np.eye(n)
    R = S - eye[:, :, None, None] * V[..., None, None, :, :] / n
    lhs = _sq(R, 4)
    return _ratio(lhs - KATO_SPLIT(n) * _sq(V, 2), _sq(S, 4))


def batch_margins(name: str, A: np.ndarray | None = None, T: np.ndarray | None = None,
                  nu: np.ndarray | None = None, tol: float = 1e-10) -> np.ndarray:
    """Normalized margins (>= 0 iff the inequality holds) for a stack of inputs."""
    if name == "Kato3":
        n = T.shape[-4]
        tr = np.einsum("...iika->...ka", T)
        full = _sq(T, 4)
        return _ratio(full - KATO3(n) * _sq(tr, 2), full)
    if name in ("KatoA", "KatoB"):
        if nu is None:
            nu = np.zeros(T.shape[-1])
            nu[0] = 1.0
        nu = np.broadcast_to(nu, T.shape[:-4] + T.shape[-1:])
        S = np.einsum("...ijka,...a->...ijk", T, nu)
        if name == "KatoA":
            return _split_margin(S[..., None])
        return _split_margin(T - S[..., None] * nu[..., None, None, None, :])
    if name == "AnBa1":
        _, Hn, nu_, _, hRing, Ahat, _ = batch_decompose(A, tol)
        ok = Hn > tol
        nu_ = np.where(ok[..., None], nu_, 0.0)
        hRing = np.where(ok[..., None, None], hRing, 0.0)
        Ahat = np.where(ok[..., None, None, None], Ahat, 0.0)
        nh = hRing[..., None] * nu_[..., None, None, :]
        lhs = batch_wedge_norm2(nh, Ahat) + batch_tangential_norm2(nh, Ahat)
        rhs = 2.0 * _sq(hRing, 2) * _sq(Ahat, 3)
        return _ratio(rhs - lhs, rhs)
    if name == "LiLi":
        _, Hn, _, _, _, Ahat, _ = batch_decompose(A, tol)
        X = np.where((Hn > tol)[..., None, None, None], Ahat, A)
        return lili_margin(X)
    raise ValidationError(f"unknown inequality {name!r}; expected one of {INEQUALITIES}")


def lili_margin(X: np.ndarray) -> np.ndarray:
    """Normalized slack of |X^X|^2 + |<X,X>^T|^2 <= 3/2 |X|^4 for any symmetric form X."""
    lhs = batch_wedge_norm2(X, X) + batch_tangential_norm2(X, X)
    rhs = 1.5 * _sq(X, 3) ** 2
    return _ratio(rhs - lhs, rhs)


# single-point API ------------------------------------------------------------

def decompose(p: SffPoint, tol: float = 1e-10) -> Decomposition:
    Hvec, Hn, nu, h, hRing, Ahat, Aring = batch_decompose(p.A, tol)
    Hn = float(Hn)
    if Hn <= tol:
        return Decomposition(Hvec=Hvec, Hnorm=Hn, Aring=Aring)
    return Decomposition(Hvec=Hvec, Hnorm=Hn, Aring=Aring, nu=nu, h=h, hRing=hRing, Ahat=Ahat)


def wedge(S: np.ndarray, T: np.ndarray) -> np.ndarray:
    S, T = np.asarray(S, float), np.asarray(T, float)
    if S.shape[-3:-1] != T.shape[-3:-1] or S.ndim != 3 or T.ndim != 3:
        raise ValidationError(f"wedge dimension mismatch: {S.shape} vs {T.shape}")
    return batch_wedge(S, T)


def tangential_inner(S: np.ndarray, T: np.ndarray) -> np.ndarray:
    S, T = np.asarray(S, float), np.asarray(T, float)
    if S.shape[:2] != T.shape[:2]:
        raise ValidationError(f"dimension mismatch: {S.shape} vs {T.shape}")
    return batch_tangential(S, T)


def reaction_norms(p: SffPoint, tol: float = 1e-10, need_normal: bool = True) -> dict:
    """Squared norms of the reaction-term tensors entering the evolution of |A|^2."""
    d = decompose(p, tol)
    out = {
        "AA_tangential": float(batch_tangential_norm2(p.A, p.A)),
        "AringAring_wedge": float(batch_wedge_norm2(d.Aring, d.Aring)),
    }
    if not d.has_normal:
        if need_normal:
            raise ValidationError("principal normal undefined (Hnorm <= tol)")
        return out
    nh = d.hRing[..., None] * d.nu
    out.update(
        AhatAhat_tangential=float(batch_tangential_norm2(d.Ahat, d.Ahat)),
        AhatAhat_wedge=float(batch_wedge_norm2(d.Ahat, d.Ahat)),
        hRingAhat_wedge=float(batch_wedge_norm2(nh, d.Ahat)),
        hRingAhat_tangential=float(batch_tangential_norm2(nh, d.Ahat)),
    )
    return out


@dataclass(frozen=True)
class InequalityResult:
    holds: bool
    margin: float


def check_pointwise_inequality(name: str, x, nu=None, tol: float = 1e-9) -> InequalityResult:
    """Evaluate one of the pointwise inequalities on a single input.

    Kato3/KatoA/KatoB take a GradSffPoint (KatoA uses the component along
    ``nu``, KatoB the orthogonal rest; ``nu`` defaults to e_1).  AnBa1 and
    LiLi take an SffPoint; LiLi is applied to the conormal part when the
    principal normal exists and to the whole form otherwise.
    """
    if name not in INEQUALITIES:
        raise ValidationError(f"unknown inequality {name!r}")
    if name.startswith("Kato"):
        if not isinstance(x, GradSffPoint):
            raise ValidationError(f"{name} expects a GradSffPoint")
        m = batch_margins(name, T=x.T, nu=None if nu is None else np.asarray(nu, float))
    else:
        if not isinstance(x, SffPoint):
            raise ValidationError(f"{name} expects an SffPoint")
        m = batch_margins(name, A=x.A)
    m = float(m)
    return InequalityResult(holds=m >= -tol, margin=m)


# sampling ------------------------------------------------------------------

def _sym(X: np.ndarray) -> np.ndarray:
    return 0.5 * (X + np.swapaxes(X, -3, -2))


def sample_sff_batch(rng: np.random.Generator, size: int, n: int, ell: int,
                     distribution: str = "gaussian") -> np.ndarray:
    if distribution not in DISTRIBUTIONS:
        raise ValidationError(f"unknown distribution {distribution!r}")
    A = _sym(rng.standard_normal((size, n, n, ell)))
    if distribution == "trace-free-gaussian":
        tr = np.einsum("...iia->...a", A)
        A = A - tr[:, None, None, :] * np.eye(n)[None, :, :, None] / n
    elif distribution == "near-cylindrical":
        scale = rng.uniform(0.5, 2.0, size)
        base = np.zeros((size, n, n, ell))
        idx = np.arange(n - 1)
        base[:, idx, idx, 0] = 1.0
        A = scale[:, None, None, None] * (base + 0.05 * A)
    return A


def sample_sff(seed: int, n: int, ell: int, distribution: str = "gaussian") -> SffPoint:
    rng = np.random.default_rng(seed)
    return SffPoint(sample_sff_batch(rng, 1, n, ell, distribution)[0])


def sample_grad_batch(rng: np.random.Generator, size: int, n: int, ell: int,
                      distribution: str = "gaussian") -> np.ndarray:
    if distribution not in GRAD_DISTRIBUTIONS:
        raise ValidationError(f"unknown distribution {distribution!r}")
    T = batch_symmetrize3(rng.standard_normal((size, n, n, n, ell)))
    if distribution == "kato-extremal":
        V = rng.standard_normal((size, n, ell))
        eye = np.eye(n)
        E = eye[None, :, :, None, None] * V[:, None, None, :, :]
        T = 3.0 * batch_symmetrize3(E) + 1e-3 * T
    return T


def sample_grad(seed: int, n: int, ell: int, distribution: str = "gaussian") -> GradSffPoint:
    rng = np.random.default_rng(seed)
    return GradSffPoint(sample_grad_batch(rng, 1, n, ell, distribution)[0])


# randomized verification --------------------------------------------------------

@dataclass
class SuiteRow:
    name: str
    n: int
    ell: int
    samples: int
    violations: int
    min_margin: float


def run_inequality_suite(n: int, ell: int, samples: int, seed: int,
                         tol: float = 1e-9, chunk: int = 5000) -> list[SuiteRow]:
    """Check every inequality on ``samples`` random inputs per inequality."""
    rng = np.random.default_rng([seed, n, ell])
    stats = {name: [0, np.inf] for name in INEQUALITIES}
    done = 0
    k = 0
    while done < samples:
        m = min(chunk, samples - done)
        sff_dist = DISTRIBUTIONS[k % len(DISTRIBUTIONS)]
        grad_dist = GRAD_DISTRIBUTIONS[k % len(GRAD_DISTRIBUTIONS)]
        A = sample_sff_batch(rng, m, n, ell, sff_dist)
        T = sample_grad_batch(rng, m, n, ell, grad_dist)
        nu = rng.standard_normal((m, ell))
        nu /= np.linalg.norm(nu, axis=-1, keepdims=True)
        margins = {
            "Kato3": batch_margins("Kato3", T=T),
            "KatoA": batch_margins("KatoA", T=T, nu=nu),
            "KatoB": batch_margins("KatoB", T=T, nu=nu),
            "AnBa1": batch_margins("AnBa1", A=A),
            # the Li-Li bound holds for any symmetric form: check the conormal part and the raw form
            "LiLi": np.minimum(batch_margins("LiLi", A=A), lili_margin(A)),
        }
        for name, mg in margins.items():
            stats[name][0] += int(np.sum(mg < -tol))
            stats[name][1] = min(stats[name][1], float(np.min(mg)))
        done += m
        k += 1
    return [SuiteRow(name, n, ell, samples, v, mm) for name, (v, mm) in stats.items()]


@dataclass
class ProbeResult:
    name: str
    min_margin: float
    evaluations: int
    best: np.ndarray = field(repr=False)


def _probe_setup(name: str, n: int, ell: int):
    iu = np.triu_indices(n)
    if name in ("AnBa1", "LiLi"):
        dim = len(iu[0]) * ell

        def build(x):
            S = np.zeros(x.shape[:-1] + (n, n, ell))
            v = x.reshape(x.shape[:-1] + (len(iu[0]), ell))
            S[..., iu[0], iu[1], :] = v
            S[..., iu[1], iu[0], :] = v
            if name == "LiLi":
                tr = np.einsum("...iia->...a", S)
                S = S - tr[..., None, None, :] * np.eye(n)[:, :, None] / n
            return S

        def margin(x):
            return batch_margins(name, A=build(x))
    else:
        dim = n**3 * ell

        def build(x):
            return batch_symmetrize3(x.reshape(x.shape[:-1] + (n, n, n, ell)))

        def margin(x):
            return batch_margins(name, T=build(x))
    return dim, build, margin


def probe_sharpness(name: str, n: int, ell: int, iterations: int = 100_000,
                    seed: int = 0, restarts: int | None = None) -> ProbeResult:
    """Search for the smallest normalized margin of an inequality.

    Random restarts followed by coordinate-wise perturbation descent; the
    budget ``iterations`` counts margin evaluations.  LiLi is probed over
    trace-free forms, where the whole form plays the conormal role.
    """
    if name not in INEQUALITIES:
        raise ValidationError(f"unknown inequality {name!r}")
    rng = np.random.default_rng([seed, n, ell])
    dim, build, margin = _probe_setup(name, n, ell)
    restarts = restarts or max(1, min(20, iterations // (40 * dim + 1)))
    per = iterations // restarts
    best_m, best_x, evals = np.inf, None, 0
    for _ in range(restarts):
        x = rng.standard_normal(dim)
        x /= np.linalg.norm(x)
        fx = float(margin(x[None])[0])
        evals += 1
        step = 0.5
        used = 1
        while used + 2 * dim <= per and step > 1e-9:
            cand = np.repeat(x[None], 2 * dim, axis=0)
            cand[np.arange(dim), np.arange(dim)] += step
            cand[dim + np.arange(dim), np.arange(dim)] -= step
            cand /= np.linalg.norm(cand, axis=1, keepdims=True)
            fc = margin(cand)
            used += 2 * dim
            j = int(np.argmin(fc))
            if fc[j] < fx:
                x, fx = cand[j], float(fc[j])
                step *= 1.5
            else:
                step *= 0.5
        evals += used - 1
        if fx < best_m:
            best_m, best_x = fx, x
    return ProbeResult(name=name, min_margin=best_m, evaluations=evals, best=build(best_x[None])[0])
