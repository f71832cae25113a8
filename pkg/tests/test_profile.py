import math

import numpy as np
import pytest

from pinchflow import profile as pf
from pinchflow.pinching import PinchingParams, default_alpha

P8 = PinchingParams(2, 0.01)


def sphere_error(nodes, phi=math.pi / 3):
    st = pf.build_geodesic_sphere(phi, 8, 1.0, nodes)
    c = st.components[0]
    exact = 1 / math.tan(phi)
    return max(np.max(np.abs(c.cache["kappa"] - exact)), np.max(np.abs(c.cache["lam"] - exact)))


def test_geodesic_sphere_curvatures():
    assert sphere_error(256) < 1e-4


def test_curvature_converges_at_second_order():
    e = [sphere_error(m) for m in (128, 256, 512)]
    orders = [math.log2(a / b) for a, b in zip(e, e[1:])]
    assert all(1.8 <= o <= 2.2 for o in orders), orders


def test_equator_flat_and_static():
    st = pf.build_geodesic_sphere(math.pi / 2, 8, 1.0, 256)
    c = st.components[0]
    assert np.max(c.cache["A2"]) < 1e-6 and np.max(np.abs(c.cache["H"])) < 1e-3
    before = c.nodes.copy()
    pf.step(st, pf.choose_dt(st))
    assert np.max(np.abs(st.components[0].nodes - before)) < 1e-12
    rec = pf.monitors(st, P8)
    assert abs(rec.cylDecayRatio) < 1e-12 and abs(rec.gradRatio) < 1e-12


def test_clifford_curvatures():
    phi = 0.4
    st = pf.build_clifford(phi, 8, 1.0, 256)
    c = st.components[0]
    # normal towards the axis circle: kappa = -tan, lambda = cot
    assert np.allclose(c.cache["kappa"], -math.tan(phi), atol=1e-4)
    assert np.allclose(c.cache["lam"], 1 / math.tan(phi), atol=1e-4)


def test_minimal_clifford_profile():
    st = pf.build_clifford(math.atan(math.sqrt(7)), 8, 1.0, 256)
    assert np.max(np.abs(st.components[0].cache["H"])) < 1e-4


def test_clifford_K_scaling():
    a = pf.build_clifford(0.4, 8, 1.0, 128).components[0].cache["H"]
    b = pf.build_clifford(0.4, 8, 4.0, 128).components[0].cache["H"]
    assert np.allclose(b, 2 * a, rtol=1e-10)


def test_area_of_geodesic_sphere():
    phi = 1.0
    st = pf.build_geodesic_sphere(phi, 8, 1.0, 512)
    exact = pf.sphere_volume(8) * math.sin(phi) ** 8
    assert pf.area(st) == pytest.approx(exact, rel=1e-4)


def test_nodes_stay_on_sphere_and_axis():
    st = pf.build_perturbed_sphere(0.1, 3, 8, 2.0, 128, math.pi / 2 - 0.05)
    for _ in range(20):
        pf.step(st, pf.choose_dt(st))
    x = st.components[0].nodes
    assert np.max(np.abs(np.linalg.norm(x, axis=1) - st.R)) < 1e-12
    assert x[0, 2] == 0 and x[-1, 2] == 0


def test_remesh_fixed_point():
    st = pf.build_geodesic_sphere(1.0, 8, 1.0, 200)
    before = st.components[0].nodes.copy()
    pf.remesh(st, pf.MeshConfig(nodes=200))
    assert np.max(np.abs(st.components[0].nodes - before)) < 1e-8


def test_remesh_spacing_bounds():
    st = pf.build_dumbbell(0.4, 4.6, 8, 1.0, 512)
    seg = st.components[0].cache["seg"]
    assert seg.max() <= 2 * seg.mean() and seg.min() >= 0.5 * seg.mean()


def test_degenerate_neck_raises():
    st = pf.build_geodesic_sphere(1.0, 8, 1.0, 64)
    c = st.components[0]
    c.nodes[30, 2] = 0.0
    with pytest.raises(pf.DegenerateNeckError):
        pf.geometry(st)


def test_sphere_tracks_reduced_ode():
    phi0 = math.pi / 3
    st = pf.build_geodesic_sphere(phi0, 8, 1.0, 128)
    pf.evolve(st, 0.01, P8, stop_on_resolution=False)
    c = st.components[0]
    # geodesic radius of the evolved sphere measured from the axis point (1, 0, 0)
    phi = float(np.mean(np.arccos(np.clip(c.nodes[:, 0], -1, 1))))
    assert math.cos(phi) == pytest.approx(math.cos(phi0) * math.exp(8 * 0.01), rel=1e-3)


def test_dumbbell_is_pinched_and_symmetric():
    st = pf.build_dumbbell(0.4, 4.6, 8, 1.0, 512)
    assert pf.check_pinched(st, P8) < 0
    c = st.components[0]
    assert np.allclose(c.cache["rho"], c.cache["rho"][::-1], atol=1e-6)
    with pytest.raises(pf.NotPinchedError):
        pf.check_pinched(pf.build_clifford(math.atan(math.sqrt(7)), 8, 1.0, 64), P8)


def test_dumbbell_bad_parameters():
    with pytest.raises(pf.ProfileError):
        pf.build_dumbbell(1.2, 4.6, 8)
    with pytest.raises(pf.ProfileError):
        pf.build_dumbbell(0.4, 0.5, 8)


def test_dumbbell_neck_shrinks_monotonically():
    st = pf.build_dumbbell(0.4, 4.6, 8, 1.0, 256)
    rho = [pf.neck_radius(st.components[0])]
    for _ in range(400):
        pf.step(st, pf.choose_dt(st))
        rho.append(pf.neck_radius(st.components[0]))
    rho = np.array(rho)
    assert np.all(rho[100:] < rho[:-100])


def test_area_nonincreasing_on_perturbed_sphere():
    st = pf.build_perturbed_sphere(0.1, 3, 8, 1.0, 128, math.pi / 2 - 0.05)
    ev = pf.evolve(st, 0.02, P8, output_dt=0.001)
    a = [r.area for r in ev.series]
    assert all(y <= x * (1 + 1e-9) for x, y in zip(a, a[1:]))


@pytest.mark.parametrize("n", [5, 8])
def test_pinching_preserved_on_perturbed_sphere(n):
    params = PinchingParams(2, default_alpha(n))
    st = pf.build_perturbed_sphere(0.05, 2, n, 1.0, 128, math.pi / 2 - 0.1)
    pf.check_pinched(st, params)
    ds = float(np.max(st.components[0].cache["seg"]))
    ev = pf.evolve(st, 0.05, params, output_dt=0.0025)
    for r in ev.series:
        assert r.supQ <= 10 * ds**2 * (r.maxH**2 + 1)


def test_monitor_flags_before_derivative_start():
    st = pf.build_geodesic_sphere(1.0, 8, 1.0, 64)
    rec = pf.monitors(st, P8, derivative_start=0.1)
    assert "before-lambda0" in rec.flags and math.isnan(rec.gradRatio)
    assert "no-neck" in rec.flags


def test_snapshot_round_trip(tmp_path):
    st = pf.build_dumbbell(0.4, 4.6, 8, 1.0, 128)
    path = tmp_path / "s.json"
    pf.write_snapshot(path, st, P8)
    back = pf.read_snapshot(path)
    assert back.n == 8 and back.components[0].topology == pf.ARC
    assert np.max(np.abs(back.components[0].nodes - st.components[0].nodes)) < 1e-13


def test_output_clock():
    clk = pf.OutputClock(0.1, [0.05])
    assert clk.next_after(0.0) == pytest.approx(0.05)
    assert clk.next_after(0.05) == pytest.approx(0.1)
    dt, due = clk.clip(0.07, 0.1)
    assert due and dt == pytest.approx(0.03)
    assert clk.clip(0.0, 0.01) == (0.01, False)
