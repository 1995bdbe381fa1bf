import numpy as np
import pytest

import fracid as fr
from conftest import make_inverse


@pytest.fixture(scope="module")
def coarse_inverse(coarse1d):
    op = fr.MeasurementOperator(
        coarse1d["problem"], coarse1d["sources"], coarse1d["weight"], "right", kind="average"
    )
    clean = fr.forward_map(
        coarse1d["problem"], coarse1d["q_exact"], coarse1d["sources"], coarse1d["weight"], "right"
    )
    return coarse1d, op, clean


def test_objective_zero_at_exact_data(coarse_inverse):
    s, op, clean = coarse_inverse
    inv = fr.InverseProblem(op, clean, fr.ObjectiveConfig(mu=0.0, q_max=1.0))
    assert inv.objective(s["q_exact"]) <= 1e-12


def test_objective_at_zero_coefficient(coarse_inverse):
    s, op, clean = coarse_inverse
    inv = fr.InverseProblem(op, clean, fr.ObjectiveConfig(mu=0.5, q_max=1.0))
    F0 = op.evaluate(np.zeros(s["x"].size))[0]
    expect = 0.5 * float((F0 - clean.stretched()) @ (F0 - clean.stretched()))
    # penalty vanishes at q = 0
    assert inv.objective(np.zeros(s["x"].size)) == pytest.approx(expect, rel=1e-12)


def test_objective_general_exponents(coarse_inverse):
    s, op, clean = coarse_inverse
    noisy = fr.add_noise(clean, 1e-3, seed=2)
    inv = fr.InverseProblem(op, noisy, fr.ObjectiveConfig(mu=1e-3, s=1.5, r=3.0, q_max=1.0))
    q = s["q_exact"]
    measured = op.evaluate(q)[0]
    res = measured - noisy.stretched()
    expect = np.sum(np.abs(res) ** 1.5) / 1.5 + 1e-3 / 3.0 * float(
        s["problem"].fem.lumped @ np.abs(q) ** 3
    )
    assert inv.objective(q) == pytest.approx(expect, rel=1e-12)
    with pytest.raises(ValueError):
        inv.gradient(q)


def test_gradient_zero_residual(coarse_inverse):
    s, op, clean = coarse_inverse
    inv = fr.InverseProblem(op, clean, fr.ObjectiveConfig(mu=0.0, q_max=1.0))
    g = inv.gradient(s["q_exact"])
    assert np.abs(g).max() < 1e-10


def test_gradient_penalty_only(coarse_inverse):
    s, op, clean = coarse_inverse
    mu = 0.37
    inv = fr.InverseProblem(op, clean, fr.ObjectiveConfig(mu=mu, q_max=1.0))
    g = inv.gradient(s["q_exact"])
    assert np.abs(g - mu * s["q_exact"]).max() < 1e-12 * mu


def test_gradient_matches_finite_differences(coarse_inverse):
    s, op, clean = coarse_inverse
    inv, _ = make_inverse(op, clean, 1e-3, seed=3, q_max=1.0)
    rng = np.random.default_rng(4)
    q = np.clip(s["q_exact"] + 0.05 * rng.standard_normal(s["x"].size), 0, None)
    g = inv.gradient(q)
    for _ in range(3):
        dq = rng.standard_normal(s["x"].size)
        gd = s["problem"].fem.inner(g, dq)
        best = np.inf
        for h in (1e-3, 1e-4, 1e-5):
            fd = (inv.objective(q + h * dq) - inv.objective(q - h * dq)) / (2 * h)
            best = min(best, abs(fd - gd) / abs(fd))
        assert best < 1e-3


def test_sensitivity_zero_and_linearity(coarse_inverse):
    s, op, clean = coarse_inverse
    inv, _ = make_inverse(op, clean, 1e-3, seed=5, q_max=1.0)
    q = s["q_exact"]
    zero = inv.sensitivity_directional(q, np.zeros_like(q))
    assert np.all(zero == 0)
    rng = np.random.default_rng(6)
    dq = rng.standard_normal(q.size)
    s1 = inv.sensitivity_directional(q, dq)
    s2 = inv.sensitivity_directional(q, 2.0 * dq)
    assert np.abs(s2 - 2 * s1).max() <= 1e-12 * np.abs(s1).max()


def test_sensitivity_matches_forward_differences(coarse_inverse):
    s, op, clean = coarse_inverse
    inv, _ = make_inverse(op, clean, 1e-3, seed=7, q_max=1.0)
    rng = np.random.default_rng(8)
    q = np.clip(s["q_exact"] + 0.03 * rng.standard_normal(s["x"].size), 0, None)
    dq = rng.standard_normal(q.size)
    sens = inv.sensitivity_directional(q, dq)
    h = 1e-4
    fd = (op.evaluate(q + h * dq)[0] - op.evaluate(q - h * dq)[0]) / (2 * h)
    assert np.abs(sens - fd).max() < 1e-3 * np.abs(fd).max()


def test_duality_identity(coarse_inverse):
    s, op, clean = coarse_inverse
    inv, _ = make_inverse(op, clean, 1e-3, seed=9, q_max=1.0)
    rng = np.random.default_rng(10)
    for _ in range(3):
        q = np.clip(s["q_exact"] + 0.05 * rng.standard_normal(s["x"].size), 0, None)
        dq = rng.standard_normal(q.size)
        measured, states, stepping = op.evaluate(q)
        res = inv.residual(measured)
        g = inv._gradient_from(q, states, res, stepping)
        S = inv.sensitivity_directional(q, dq, states=states, stepping=stepping)
        lhs = float(res @ S)
        rhs = s["problem"].fem.inner(g - inv.cfg.mu * q, dq)
        assert abs(lhs - rhs) / max(abs(lhs), abs(rhs)) < 1e-6


def test_cgm_warm_start_is_stationary(coarse_inverse):
    s, op, clean = coarse_inverse
    inv = fr.InverseProblem(op, clean, fr.ObjectiveConfig(mu=0.0, q_max=1.0))
    result = inv.run_cgm(q0=s["q_exact"])
    assert result.converged
    assert result.iterations <= 2
    assert result.J <= 1e-10


def test_cgm_monotone_and_projected(coarse_inverse):
    s, op, clean = coarse_inverse
    inv, _ = make_inverse(op, clean, 1e-3, seed=11, q_max=0.5)
    result = inv.run_cgm()
    J = np.array(result.log.J)
    assert np.all(np.diff(J) <= 1e-12)
    assert result.q_map.min() >= 0.0
    assert result.q_map.max() <= 0.5
    # log columns present and aligned
    rows = list(result.log.rows())
    assert len(rows) == result.iterations
    assert rows[0][0] == 0


def test_cgm_noiseless_reconstruction(coarse_inverse):
    s, op, clean = coarse_inverse
    inv = fr.InverseProblem(op, clean, fr.ObjectiveConfig(mu=0.0, q_max=1.0))
    result = inv.run_cgm()
    r_e = fr.relative_error(result.q_map, s["q_exact"], s["problem"].fem)
    assert r_e < 0.02  # coarse mesh, N=3 sources


def test_example2_within_twice_example1(desk1d, ex1_operator):
    s = desk1d
    op1, clean1 = ex1_operator
    inv1, _ = make_inverse(op1, clean1, 1e-4, seed=1001)
    r1 = inv1.run_cgm()
    e1 = fr.relative_error(r1.q_map, s["q_exact"], s["problem"].fem)

    q2 = s["x"] * (1 - s["x"]) ** 2
    op2 = fr.MeasurementOperator(s["problem"], s["sources"], s["weight"], "left", kind="average")
    clean2 = fr.forward_map(s["problem"], q2, s["sources"], s["weight"], "left")
    inv2, _ = make_inverse(op2, clean2, 1e-4, seed=1001, q_max=2 * q2.max())
    r2 = inv2.run_cgm()
    e2 = fr.relative_error(r2.q_map, q2, s["problem"].fem)
    assert e2 <= 2.0 * e1


def test_relative_error_contract(coarse1d):
    fem = coarse1d["problem"].fem
    q = coarse1d["x"] * (1 - coarse1d["x"])
    assert fr.relative_error(q, q, fem) == 0.0
    assert fr.relative_error(2 * q, q, fem) == pytest.approx(1.0, rel=1e-12)
    # constant offset against a closed-form norm
    mesh = fr.build_mesh(1, 300)
    fem300 = fr.ForwardProblem(mesh, fr.TemporalGrid(T=1.0, nt=4, alpha=0.5)).fem
    x = mesh.nodes[:, 0]
    qx = x * (1 - x)
    expect = 0.01 / np.sqrt(1.0 / 30.0)
    assert fr.relative_error(qx + 0.01, qx, fem300) == pytest.approx(expect, rel=1e-3)
    with pytest.raises(ValueError):
        fr.relative_error(q, np.zeros_like(q), fem)


def test_mu_rules():
    assert fr.mu_from_rule("delta", 0.01) == pytest.approx(0.01)
    assert fr.mu_from_rule("delta_3_2", 0.01) == pytest.approx(0.001)
    assert fr.mu_from_rule("delta_1_2", 0.01) == pytest.approx(0.1)
    assert fr.mu_from_rule("delta_2", 0.01) == pytest.approx(1e-4)
    assert fr.mu_from_rule("explicit", 0.01, 5.0) == 5.0
    with pytest.raises(ValueError):
        fr.mu_from_rule("explicit", 0.01)
    with pytest.raises(ValueError):
        fr.mu_from_rule("cube", 0.01)


def test_objective_config_validation():
    with pytest.raises(ValueError):
        fr.ObjectiveConfig(mu=-1.0)
    with pytest.raises(ValueError):
        fr.ObjectiveConfig(mu=1.0, s=0.5)
    with pytest.raises(ValueError):
        fr.ObjectiveConfig(mu=1.0, r=1.0)
    cfg = fr.ObjectiveConfig(mu=1.0, q_min=0.0, q_max=0.5)
    assert np.all(cfg.project(np.array([-1.0, 0.2, 3.0])) == [0.0, 0.2, 0.5])
