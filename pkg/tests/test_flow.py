import math

import numpy as np
import pytest

import oracle
from reggeflow import flow, models
from reggeflow.complex import MetricAssignment, build_complex
from reggeflow.curvature import deficit_angles
from reggeflow.errors import MatrixSingular, NonRealizable, NotCompact
from reggeflow.flow import FlowConfig, Termination

PAIR_SLOTS = [(1, 2), (0, 2), (0, 1), (0, 3), (1, 3), (2, 3), (0, 4), (1, 4), (2, 4)]


def _pair(points):
    top = build_complex([(0, 1, 2, 3), (0, 1, 2, 4)])
    m = MetricAssignment(np.array([np.sum((points[u] - points[v]) ** 2) for u, v in top.edges]))
    return top, m, top.triangle_index[(0, 1, 2)]


def _random_pair(rng):
    while True:
        pts = np.vstack([rng.uniform(-1, 1, size=(3, 3)), rng.uniform(-0.4, 0.4, size=(2, 3))])
        pts[:3, 2] = 0.0
        pts[3, 2] = rng.uniform(0.4, 1.0)
        pts[4, 2] = -rng.uniform(0.4, 1.0)
        if oracle.triangle_area(pts[:3]) > 0.2:
            return pts


# -- ∂λ/∂ℓ ---------------------------------------------------------------------------------

def test_dual_length_jacobian_matches_complex_step_oracle(rng):
    for _ in range(30):
        pts = _random_pair(rng)
        top, m, t = _pair(pts)
        jac = flow.dual_length_jacobian(top, m, t)
        assert len(jac) == 9
        fd = np.array([jac[top.edge_id(*s)] for s in PAIR_SLOTS])
        lengths = np.sqrt([np.sum((pts[i] - pts[j]) ** 2) for i, j in PAIR_SLOTS])
        exact = oracle.pair_lambda_gradient(lengths)
        assert np.linalg.norm(fd - exact) <= 1e-5 * np.linalg.norm(exact)


def test_complex_step_jacobian_matches_oracle(rng):
    for _ in range(30):
        pts = _random_pair(rng)
        top, m, t = _pair(pts)
        jac = flow.dual_length_jacobian(top, m, t, derivative="complex_step")
        cs = np.array([jac[top.edge_id(*s)] for s in PAIR_SLOTS])
        lengths = np.sqrt([np.sum((pts[i] - pts[j]) ** 2) for i, j in PAIR_SLOTS])
        exact = oracle.pair_lambda_gradient(lengths)
        np.testing.assert_allclose(cs, exact, rtol=1e-9, atol=1e-12)


def test_unknown_derivative_method_rejected(pcells):
    top, m = pcells[3]
    with pytest.raises(ValueError):
        flow.edge_length_rates(top, m.lengths, derivative="forward")
    with pytest.raises(ValueError):
        FlowConfig(derivative="forward")


def test_complex_step_rates_are_exact_on_600_cell(pcells):
    top, m = pcells[5]
    rates = flow.edge_length_rates(top, m.lengths, derivative="complex_step")
    np.testing.assert_allclose(rates, models.PCellModel(5).ell_sq_rate / 2.0, rtol=1e-13)


def test_regular_pair_scaling_derivative():
    top = build_complex([(0, 1, 2, 3), (0, 1, 2, 4)])
    m = MetricAssignment(np.ones(top.n_edges))
    jac = flow.dual_length_jacobian(top, m, top.triangle_index[(0, 1, 2)])
    # λ(c) = (√6/6)·c along uniform scaling, so the nine partials sum to √6/6
    assert sum(jac.values()) == pytest.approx(math.sqrt(6) / 6, rel=1e-9)


def test_jacobian_is_local(pcells):
    top, m = pcells[5]
    jac = flow.dual_length_jacobian(top, m, 17)
    tets = top.triangle_tets[17]
    allowed = set(top.tet_edges[tets[0]]) | set(top.tet_edges[tets[1]])
    assert set(jac) == allowed


def test_boundary_triangle_has_no_dual_jacobian():
    top = build_complex([(0, 1, 2, 3)])
    with pytest.raises(NotCompact):
        flow.dual_length_jacobian(top, MetricAssignment(np.ones(6)), 0)


def test_jacobian_on_flat_pair_raises_non_realizable():
    top = build_complex([(0, 1, 2, 3), (0, 1, 2, 4)])
    pts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0.3, 0.3, 0.0], [0.2, 0.2, -0.5]])
    m = MetricAssignment(np.array([np.sum((pts[u] - pts[v]) ** 2) for u, v in top.edges]))
    with pytest.raises(NonRealizable):
        flow.dual_length_jacobian(top, m, top.triangle_index[(0, 1, 2)])


# -- the linear system -------------------------------------------------------------------

def test_600_cell_row_sums(pcells):
    top, m = pcells[5]
    sys_ = flow.assemble_rrf_system(top, m)
    rows = np.asarray(sys_.M.sum(axis=1)).ravel()
    np.testing.assert_allclose(rows, 2 * math.sqrt(2) * 5 / 24, rtol=1e-8)
    np.testing.assert_allclose(sys_.b, -4 * deficit_angles(top, m), rtol=1e-15)


def test_mass_matrix_sparsity(pcells):
    top, m = pcells[5]
    M = flow.assemble_rrf_system(top, m).M.tocsr()
    for e in range(0, top.n_edges, 37):
        support = set()
        for k in top.edge_tets[e]:
            for t in top.tet_triangles[k]:
                for k2 in top.triangle_tets[t]:
                    support |= set(top.tet_edges[k2])
        cols = set(M.indices[M.indptr[e]:M.indptr[e + 1]])
        assert cols <= support


def test_flat_lattice_is_a_fixed_point(bcc):
    sys_ = flow.assemble_rrf_system(bcc.top, bcc.metric())
    assert np.linalg.norm(sys_.b) < 1e-12
    rates = flow.edge_length_rates(bcc.top, bcc.metric().lengths)
    assert np.all(rates == 0.0)


def test_flat_lattice_mass_matrix_has_null_modes(bcc):
    # the reason flat states bypass the solve: M itself is singular there
    M = flow.assemble_rrf_system(bcc.top, bcc.metric()).M.toarray()
    s = np.linalg.svd(M, compute_uv=False)
    assert s[-1] < 1e-12 * s[0]


@pytest.mark.parametrize("p", [3, 5])
def test_uniform_rates_match_closed_form(pcells, p):
    top, m = pcells[p]
    rates = flow.edge_length_rates(top, m.lengths)
    expected = models.PCellModel(p).ell_sq_rate / 2.0  # d(ℓ²)/dt = 2ℓℓ̇ at ℓ = 1
    np.testing.assert_allclose(rates, expected, rtol=1e-6)
    assert np.ptp(rates) < 1e-9 * abs(expected)


def test_sixteen_cell_mass_matrix_is_singular(pcells):
    top, m = pcells[4]
    with pytest.raises(MatrixSingular):
        flow.edge_length_rates(top, m.lengths)


def test_rates_reject_bad_lengths(pcells):
    top, m = pcells[3]
    bad = m.lengths.copy()
    bad[0] = -1.0
    with pytest.raises(NonRealizable):
        flow.edge_length_rates(top, bad)


# -- integrators ---------------------------------------------------------------------------

def test_flow_config_validation():
    FlowConfig()
    with pytest.raises(ValueError):
        FlowConfig(integrator="leapfrog")
    with pytest.raises(ValueError):
        FlowConfig(dt_min=1e-2, dt_initial=1e-3)
    with pytest.raises(ValueError):
        FlowConfig(rel_tol=0.0)
    with pytest.raises(ValueError):
        FlowConfig(record_every=0)
    with pytest.raises(ValueError):
        FlowConfig(stop_min_edge_fraction=1.0)


def test_euler_step_definition(pcells):
    top, m = pcells[5]
    m = models.perturb_metric(m, 0.01, seed=1)
    dt = 1e-4
    new = flow.step(top, m, FlowConfig(integrator="explicit_euler"), dt=dt)
    expected = m.lengths + dt * flow.edge_length_rates(top, m.lengths)
    np.testing.assert_allclose(new.lengths, expected, rtol=1e-15)
    assert new.time == pytest.approx(dt)


def test_rk4_step_on_five_cell(pcells):
    top, m = pcells[3]
    model = models.PCellModel(3)
    dt = 1e-3
    new = flow.step(top, m, FlowConfig(integrator="rk4"), dt=dt)
    ell_sq, _ = models.pcell_closed_form(model, dt)
    np.testing.assert_allclose(new.lengths_sq, ell_sq, rtol=1e-8)


def test_flat_lattice_step_leaves_state_unchanged(bcc):
    m = bcc.metric()
    new = flow.step(bcc.top, m, FlowConfig())
    np.testing.assert_array_equal(new.lengths_sq, m.lengths_sq)


# -- trajectories ----------------------------------------------------------------------------

def test_five_cell_rk45_matches_closed_form(pcells):
    top, m = pcells[3]
    model = models.PCellModel(3)
    t_half = 0.5 * model.extinction_time
    traj = flow.run_flow(top, m, FlowConfig(t_end=t_half, rel_tol=1e-10))
    assert traj.termination is Termination.REACHED_T_END
    assert traj.final.t == pytest.approx(t_half, rel=1e-14)
    for snap in traj.snapshots:
        ell_sq, _ = models.pcell_closed_form(model, snap.t)
        np.testing.assert_allclose(snap.metric.lengths_sq, ell_sq, rtol=1e-8)
        assert snap.max_len - snap.min_len < 1e-9
    assert np.all(np.diff(traj.times) > 0)


def test_five_cell_edge_collapse(pcells):
    top, m = pcells[3]
    model = models.PCellModel(3)
    frac = 0.5
    traj = flow.run_flow(top, m, FlowConfig(t_end=1.0, stop_min_edge_fraction=frac))
    assert traj.termination is Termination.EDGE_COLLAPSE
    # ℓ² = 1 − t/T falls below frac² at t = (1 − frac²)·T
    assert (1 - frac**2) * model.extinction_time <= traj.final.t < model.extinction_time
    lens = np.array([s.metric.lengths for s in traj.snapshots])
    assert np.all(np.diff(lens, axis=0) < 0)


def test_euler_overshoot_is_non_realizable(pcells):
    top, m = pcells[3]
    cfg = FlowConfig(integrator="explicit_euler", dt_initial=1e-2, dt_max=1e-2,
                     t_end=1.0, stop_min_edge_fraction=0.0)
    traj = flow.run_flow(top, m, cfg)
    assert traj.termination is Termination.NONREALIZABLE
    with pytest.raises(NonRealizable):
        flow.run_flow(top, m, FlowConfig(integrator="explicit_euler", dt_initial=1e-2, dt_max=1e-2,
                                         t_end=1.0, stop_min_edge_fraction=0.0,
                                         stop_on_nonrealizable=False))


def test_singular_mass_matrix_terminates(pcells):
    top, m = pcells[4]
    traj = flow.run_flow(top, m, FlowConfig(t_end=0.01))
    assert traj.termination is Termination.MATRIX_SINGULAR
    assert len(traj.snapshots) == 1


def test_step_too_small(pcells):
    top, m = pcells[3]
    m = models.perturb_metric(m, 0.05, seed=2)
    cfg = FlowConfig(dt_initial=5e-3, dt_min=5e-3, dt_max=5e-3, rel_tol=1e-14, abs_tol=1e-16, t_end=0.01)
    traj = flow.run_flow(top, m, cfg)
    assert traj.termination is Termination.STEP_TOO_SMALL


def test_flat_run_reaches_end_unchanged(bcc):
    m = bcc.metric()
    traj = flow.run_flow(bcc.top, m, FlowConfig(t_end=1.0))
    assert traj.termination is Termination.REACHED_T_END
    for snap in traj.snapshots:
        np.testing.assert_array_equal(snap.metric.lengths_sq, m.lengths_sq)
    assert traj.final.t == pytest.approx(1.0)


def test_record_every_and_determinism(pcells):
    top, m = pcells[3]
    m = models.perturb_metric(m, 0.02, seed=3)
    cfg = FlowConfig(t_end=0.004, record_every=3)
    a = flow.run_flow(top, m, cfg)
    b = flow.run_flow(top, m, cfg)
    assert a.steps_accepted == b.steps_accepted
    assert len(a.snapshots) == len(b.snapshots)
    for sa, sb in zip(a.snapshots, b.snapshots):
        assert sa.t == sb.t
        assert np.array_equal(sa.metric.lengths_sq, sb.metric.lengths_sq)
    assert len(a.snapshots) == 1 + math.ceil(a.steps_accepted / 3)
    assert a.final.t == pytest.approx(0.004)


def test_run_flow_needs_closed_complex():
    top = build_complex([(0, 1, 2, 3)])
    with pytest.raises(NotCompact):
        flow.run_flow(top, MetricAssignment(np.ones(6)), FlowConfig())


# -- stability ---------------------------------------------------------------------------------

def test_five_cell_spectrum_and_scaling():
    top, m = models.generate_pcell_lattice(3)
    _, m2 = models.generate_pcell_lattice(3, ell=2.0)
    r1 = flow.jacobian_spectrum(top, m)
    r2 = flow.jacobian_spectrum(top, m2)
    assert len(r1.eigenvalues) == 10
    assert np.all(np.diff(r1.eigenvalues.real) <= 0)
    np.testing.assert_allclose(r2.eigenvalues * 4.0, r1.eigenvalues, rtol=1e-6)
    # ℓ̇ ∝ −1/ℓ on the uniform mode, whose eigenvalue is therefore positive
    assert r1.n_positive >= 1


def test_flat_spectrum_is_undefined(bcc):
    m = bcc.metric()
    assert np.linalg.norm(flow.edge_length_rates(bcc.top, m.lengths)) == 0.0
    with pytest.raises(MatrixSingular):
        flow.jacobian_spectrum(bcc.top, m)
