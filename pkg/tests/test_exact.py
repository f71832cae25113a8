import math

import numpy as np
import pytest

from pinchflow.algebra import AmbientSphere, ValidationError, decompose
from pinchflow.exact import (CliffordEmbedding, CliffordTorus, GeodesicSphere, clifford_pinching_value,
                             evolve_exact, extinction_time, mcf_rhs, sff_of)
from pinchflow.pinching import PinchingParams

S8 = AmbientSphere(8, 1, 1.0)


def test_equator_is_totally_geodesic():
    assert np.abs(sff_of(GeodesicSphere(math.pi / 2, S8)).A).max() < 1e-15


def test_geodesic_sphere_is_umbilic():
    d = decompose(sff_of(GeodesicSphere(1.0, AmbientSphere(7, 2, 2.0))))
    assert np.abs(d.hRing).max() < 1e-14
    assert d.Hnorm == pytest.approx(7 * math.sqrt(2) / math.tan(1.0))


def test_minimal_clifford():
    f = CliffordTorus(1, 7, math.atan(math.sqrt(7)), S8)
    p = sff_of(f)
    assert p.Hnorm < 1e-12
    assert p.norm2 == pytest.approx(8.0, abs=1e-12)
    assert abs(mcf_rhs(f)) < 1e-12


def test_clifford_embedding_value_p2():
    p = sff_of(CliffordEmbedding(2, 0.1, S8))
    assert p.norm2 - p.Hnorm**2 / 6 - 4 == pytest.approx(4 / 3 * 1e-2, rel=1e-9)


@pytest.mark.parametrize("eps", [0.01, 0.1, 0.5])
@pytest.mark.parametrize("n", [8, 9, 12])
def test_clifford_pinching_values(n, eps):
    assert clifford_pinching_value(1, n, eps) == pytest.approx((n - 2) / (n - 1) * eps**2, rel=1e-9)
    assert clifford_pinching_value(2, n, eps) == pytest.approx(2 * (n - 4) / (n - 2) * eps**2, rel=1e-9)


def test_clifford_value_scales_with_K():
    assert clifford_pinching_value(1, 8, 0.1, K=3.0) == pytest.approx(3 * clifford_pinching_value(1, 8, 0.1),
                                                                      rel=1e-9)


def test_clifford_value_degenerates():
    assert abs(clifford_pinching_value(1, 8, 1e-6)) < 1e-11
    with pytest.raises(ValidationError):
        clifford_pinching_value(3, 8, 0.1)


def test_invalid_families():
    with pytest.raises(ValidationError):
        sff_of(GeodesicSphere(0.0, S8))
    with pytest.raises(ValidationError):
        CliffordTorus(2, 5, 0.3, S8)
    with pytest.raises(ValidationError):
        evolve_exact(GeodesicSphere(1.0, S8), 1.0, dt=-1.0)


def test_equator_stationary():
    tr = evolve_exact(GeodesicSphere(math.pi / 2, S8), 1.0)
    assert tr.terminal == "t_end"
    assert max(abs(s.phi - math.pi / 2) for s in tr.samples) < 1e-10


def test_shrinking_sphere_extinction():
    T = extinction_time(GeodesicSphere(math.acos(0.5), S8))
    assert T == pytest.approx(math.log(2) / 8, rel=1e-6)


def test_shrinking_sphere_closed_form():
    phi0 = math.acos(0.5)
    tr = evolve_exact(GeodesicSphere(phi0, S8), 0.05, record_every=10)
    for s in tr.samples:
        assert math.cos(s.phi) == pytest.approx(0.5 * math.exp(8 * s.t), rel=1e-9)


def test_minimal_torus_is_unstable_fixed_point():
    # tori off the minimal angle move away from it
    phim = math.atan(math.sqrt(7))
    assert mcf_rhs(CliffordTorus(1, 7, phim - 0.1, S8)) < 0
    assert mcf_rhs(CliffordTorus(1, 7, phim + 0.1, S8)) > 0


def test_pinched_sphere_trajectory_keeps_Q_negative_and_decay_flat():
    params = PinchingParams(2, 0.01)
    tr = evolve_exact(GeodesicSphere(1.2, S8), 0.1, params=params, record_every=5)
    assert all(s.Q < 0 for s in tr.samples)
    w = [s.ratios["weighted_decay"] for s in tr.samples]
    assert all(abs(x) < 1e-12 for x in w)


def test_trajectory_csv(tmp_path):
    tr = evolve_exact(GeodesicSphere(1.0, S8), 0.01, record_every=2)
    out = tmp_path / "traj.csv"
    tr.write_csv(out)
    lines = out.read_text().splitlines()
    assert lines[0].startswith("t,phi,Hnorm,normA2,Q")
    assert len(lines) == len(tr.samples) + 1
