import math

import numpy as np
import pytest

from meanfield.diagnostics import concentration_report
from meanfield.functional import Params, energy_values, residual_values
from meanfield.minimax import (
    MinimaxOptions,
    NoNegativeEndpointError,
    Path,
    StagnationError,
    deform_step,
    find_negative_endpoint,
    init_path,
    path_max,
    refine_critical,
    reparametrize,
    run_minimax,
)
from meanfield.torus import MeanZeroField, TorusGrid, random_bandlimited, spectral_energy_values

G128 = TorusGrid(128)


def e_norm(u):
    return math.sqrt(spectral_energy_values(u.grid, u.values))


@pytest.fixture(scope="module")
def endpoint_30_5():
    return find_negative_endpoint(Params(30, 5), G128)


def test_options_validation():
    for bad in ({"K": 4}, {"step0": 0}, {"band": 0.6}, {"band": 0}, {"grad_tol": 0}, {"seeds": ()}, {"seeds": (1, -1)}):
        with pytest.raises(ValueError):
            MinimaxOptions(**bad)


def test_negative_endpoint_signs(endpoint_30_5):
    p = Params(30, 5)
    u = endpoint_30_5
    assert energy_values(G128, u.values, p) < 0 and e_norm(u) >= 1
    assert u.values.max() > -u.values.min()  # + bubble
    v = find_negative_endpoint(p.swapped(), G128)
    assert energy_values(G128, v.values, p.swapped()) < 0
    assert np.array_equal(v.values, -u.values)
    with pytest.raises(NoNegativeEndpointError):
        find_negative_endpoint(Params(10, 10), G128)


def test_negative_endpoint_fails_when_unresolvable():
    with pytest.raises(NoNegativeEndpointError, match="scanned"):
        find_negative_endpoint(Params(8 * math.pi + 0.05, 0), TorusGrid(32))


def test_init_path(endpoint_30_5):
    path = init_path(endpoint_30_5, 24)
    assert path.K == 24
    assert not np.any(path.nodes[0].values)
    assert np.array_equal(path.nodes[-1].values, endpoint_30_5.values)
    assert energy_values(G128, path.nodes[12].values, Params(30, 5)) > 0
    with pytest.raises(ValueError):
        init_path(endpoint_30_5, 6)


def test_deform_step_endpoints_and_descent(endpoint_30_5):
    p = Params(30, 5)
    path = init_path(endpoint_30_5, 24)
    opts = MinimaxOptions()
    tops = [path_max(path, p)[0]]
    for _ in range(10):
        new = deform_step(path, p, opts)
        assert new.nodes[0] is path.nodes[0] and new.nodes[-1] is path.nodes[-1]
        for u in new.nodes:
            assert abs(u.mean()) <= 1e-12 * (1 + np.max(np.abs(u.values)))
        path = new
        tops.append(path_max(path, p)[0])
    assert all(b < a for a, b in zip(tops, tops[1:]))


def test_deform_step_leaves_critical_top_unchanged(endpoint_30_5):
    nodes = [G128.zeros() for _ in range(24)] + [endpoint_30_5]
    path = Path(nodes)
    new = deform_step(path, Params(30, 5), MinimaxOptions())
    for a, b in zip(path.nodes, new.nodes):
        assert np.array_equal(a.values, b.values)


def test_reparametrize_never_raises_path_max(endpoint_30_5):
    p = Params(30, 5)
    path = init_path(endpoint_30_5, 24)
    for _ in range(3):
        path = deform_step(path, p, MinimaxOptions())
    new = reparametrize(path, p)
    assert path_max(new, p)[0] <= path_max(path, p)[0]
    assert new.nodes[0] is path.nodes[0] and new.nodes[-1] is path.nodes[-1]


def test_path_requires_zero_start(endpoint_30_5):
    with pytest.raises(ValueError):
        Path([endpoint_30_5] * 10)


def test_reference_run(ref_run):
    assert ref_run.converged and ref_run.c_est > 0
    assert ref_run.c_est == ref_run.history[-1][0]
    e = [h[0] for h in ref_run.history]
    assert all(b <= a for a, b in zip(e, e[1:]))
    assert ref_run.history[-1][1] < MinimaxOptions().grad_tol


def test_c_est_dominates_first_node_beyond_rho(ref_run, ref_params):
    for path in (init_path(ref_run.path.endpoint, 24), ref_run.path):
        norms = path.norms()
        j = int(np.argmax(norms >= 0.1))
        assert norms[j] >= 0.1
        assert ref_run.c_est >= energy_values(G128, path.nodes[j].values, ref_params)


def test_refined_solution(ref_run, ref_params):
    u, r = ref_run.refined
    assert r <= 1e-8
    assert e_norm(u) >= 0.1
    assert energy_values(G128, u.values, ref_params) > 0
    assert abs(u.mean()) <= 1e-12 * (1 + np.max(np.abs(u.values)))
    assert math.sqrt(np.mean(residual_values(G128, u.values, ref_params) ** 2)) == pytest.approx(r, rel=1e-12)
    assert concentration_report(u, ref_params).classification == "compact"
    # fixed point of a further refinement
    v, r2 = refine_critical(u, ref_params, 1e-8)
    assert np.array_equal(v.values, u.values) and r2 == r


def test_refine_zero_is_trivial():
    u, r = refine_critical(G128.zeros(), Params(30, 5), 1e-8)
    assert r == 0.0 and not np.any(u.values)


def test_refine_reports_budget_exhaustion(caplog, ref_params):
    u0 = random_bandlimited(G128, np.random.default_rng(3), amplitude=3.0)
    with caplog.at_level("WARNING"):
        u, r = refine_critical(u0, ref_params, 1e-14, max_iter=1)
    assert r > 1e-14 and "budget" in caplog.text


def test_mountain_geometry(endpoint_30_5):
    p = Params(30, 5)
    rng = np.random.default_rng(7)
    for _ in range(50):
        phi = random_bandlimited(G128, rng, kmax=6)
        phi = MeanZeroField(G128, phi.values * (0.05 / e_norm(phi)))
        assert energy_values(G128, phi.values, p) > 0
    assert energy_values(G128, endpoint_30_5.values, p) < 0


def test_mirror_run_matches_by_symmetry(ref_run):
    res = run_minimax(Params(5, 30), G128)
    assert res.converged
    assert res.c_est == pytest.approx(ref_run.c_est, rel=1e-10)


def test_run_near_the_saddle_node_edge():
    # (35, 3) sits close to the region's boundary; its saddle is low and the
    # path maximum falls between nodes early on
    p = Params(35, 3)
    res = run_minimax(p, G128)
    assert res.converged and res.c_est > 0
    u, r = refine_critical(res.argmax, p, 1e-8)
    assert r <= 1e-8 and energy_values(G128, u.values, p) > 0


def test_determinism(ref_params, endpoint_30_5):
    opts = MinimaxOptions(max_iters=5)
    a = run_minimax(ref_params, G128, opts, endpoint=endpoint_30_5)
    b = run_minimax(ref_params, G128, opts, endpoint=endpoint_30_5)
    assert a.history == b.history
    assert np.array_equal(a.argmax.values, b.argmax.values)


def test_nonconvergence_is_reported(ref_params, endpoint_30_5):
    res = run_minimax(ref_params, G128, MinimaxOptions(max_iters=2, seeds=(1.0,)), endpoint=endpoint_30_5)
    assert not res.converged and len(res.history) == 3


def test_skips_seeds_with_nonnegative_endpoint(ref_params, endpoint_30_5):
    res = run_minimax(ref_params, G128, MinimaxOptions(seeds=(0.1,)), endpoint=endpoint_30_5)
    assert not res.converged and res.history == []


def test_stagnation_moves_to_next_seed(monkeypatch, ref_params, endpoint_30_5):
    import meanfield.minimax as mm

    calls = []
    real = mm.deform_step

    def flaky(path, p, opts):
        calls.append(1)
        if len(calls) == 1:
            raise StagnationError("forced")
        return real(path, p, opts)

    monkeypatch.setattr(mm, "deform_step", flaky)
    res = run_minimax(ref_params, G128, MinimaxOptions(seeds=(1.0, 1.0)), endpoint=endpoint_30_5)
    assert res.stagnated_seeds == [1.0] and res.converged
