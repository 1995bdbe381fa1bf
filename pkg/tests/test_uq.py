import numpy as np
import pytest
from scipy.stats import chi2

import fracid as fr
from fracid.sources import SourceSystem


@pytest.fixture(scope="module")
def small_posterior(coarse1d):
    s = coarse1d
    op = fr.MeasurementOperator(s["problem"], s["sources"], s["weight"], "right", kind="average")
    clean = fr.forward_map(s["problem"], s["q_exact"], s["sources"], s["weight"], "right")
    noisy = fr.add_noise(clean, 1e-3, seed=21)
    mu = fr.mu_from_rule("delta_3_2", noisy.delta)
    inv = fr.InverseProblem(op, noisy, fr.ObjectiveConfig(mu=mu, q_max=1.0))
    result = inv.run_cgm()
    P = fr.assemble_jacobian(op, result.q_map)
    model = fr.PosteriorModel.build(result.q_map, P, mu, noisy.delta)
    return s, op, inv, result, model


def test_jacobian_row_vs_column_assembly(small_posterior):
    s, op, inv, result, model = small_posterior
    cols = fr.assemble_jacobian_columns(op, result.q_map)
    scale = np.abs(model.P).max()
    assert np.abs(model.P - cols).max() < 1e-6 * scale


def test_jacobian_action_matches_sensitivity(small_posterior):
    s, op, inv, result, model = small_posterior
    rng = np.random.default_rng(0)
    dq = rng.standard_normal(model.dim)
    sens = inv.sensitivity_directional(result.q_map, dq)
    assert np.abs(model.P @ dq - sens).max() < 1e-6 * np.abs(sens).max()


def test_jacobian_fd_spot_checks(small_posterior):
    s, op, inv, result, model = small_posterior
    rng = np.random.default_rng(1)
    h = 1e-5
    for m in rng.choice(model.dim, size=5, replace=False):
        dq = np.zeros(model.dim)
        dq[m] = 1.0
        fd = (op.evaluate(result.q_map + h * dq)[0] - op.evaluate(result.q_map - h * dq)[0]) / (2 * h)
        denom = max(np.abs(fd).max(), 1e-300)
        assert np.abs(model.P[:, m] - fd).max() < 1e-3 * denom


def test_jacobian_columns_vanish_without_state():
    # sharply localized source over a short horizon: columns far from the
    # support are orders of magnitude below the dominant ones
    mesh = fr.build_mesh(1, 60)
    grid = fr.TemporalGrid(T=0.02, nt=30, alpha=0.3)
    problem = fr.ForwardProblem(mesh, grid, fr.DiffusionTensor(1.0))
    x = mesh.nodes[:, 0]
    hat = np.clip(1 - np.abs(x - 0.1) / 0.1, 0, None)
    srcs = SourceSystem(
        kind="trig", N=1, phis=hat[None, :], v1=grid.times.copy(),
        v2=fr.caputo_apply(grid.times, grid), labels=("hat",),
    )
    w = fr.WeightFunction.from_name("one_minus_t")
    op = fr.MeasurementOperator(problem, srcs, w, "left", kind="average")
    P = fr.assemble_jacobian(op, np.zeros_like(x))
    col = np.abs(P).max(axis=0)
    assert col[x > 0.7].max() < 0.1 * col.max()


def test_posterior_covariance_limits():
    M = 12
    delta, mu = 0.01, 0.5
    C, L = fr.posterior_covariance(np.zeros((4, M)), mu, delta)
    assert np.abs(C - (delta**2 / mu) * np.eye(M)).max() < 1e-15
    assert np.abs(L @ L.T - C).max() < 1e-15

    rng = np.random.default_rng(2)
    P = rng.standard_normal((4, M))
    big_mu = 1e6 * np.linalg.norm(P.T @ P, 2)
    C2, _ = fr.posterior_covariance(P, big_mu, delta)
    assert np.abs(C2 - (delta**2 / big_mu) * np.eye(M)).max() < 1e-3 * delta**2 / big_mu
    with pytest.raises(ValueError):
        fr.posterior_covariance(P, 0.0, delta)
    with pytest.raises(ValueError):
        fr.posterior_covariance(P, 1.0, 0.0)


def test_eigenvalue_identity_and_definiteness(small_posterior):
    *_, model = small_posterior
    assert model.eigen_identity_error(k=5) < 1e-8
    eig = np.linalg.eigvalsh(model.cov)
    floor = model.delta**2 / (model.mu + model.lambda_ptp.max())
    assert eig.min() >= floor - 1e-12


def test_sampler_isotropic_variances():
    M = 25
    c = 0.3
    L = np.sqrt(c) * np.eye(M)
    model = fr.PosteriorModel(
        q_map=np.zeros(M), P=np.zeros((2, M)), mu=1.0, delta=1.0,
        cov=c * np.eye(M), chol_lower=L, lambda_ptp=np.zeros(M),
    )
    ens = fr.sample_posterior(model, 10000, seed=3)
    var = ens.samples.var(axis=0, ddof=1)
    assert np.abs(var - c).max() < 0.05 * c


def test_sampler_determinism_and_moments(small_posterior):
    *_, model = small_posterior
    a = fr.sample_posterior(model, 500, seed=7)
    b = fr.sample_posterior(model, 500, seed=7)
    assert np.array_equal(a.samples, b.samples)
    ens = fr.sample_posterior(model, 10000, seed=8, keep_samples=False)
    assert ens.samples is None
    assert np.linalg.norm(ens.mean - model.q_map) <= 3 * np.sqrt(np.trace(model.cov) / 10000)
    rel = np.linalg.norm(ens.cov - model.cov) / np.linalg.norm(model.cov)
    assert rel < 0.12  # full-dimension floor ~ sqrt(M/Ne)
    with pytest.raises(ValueError):
        fr.sample_posterior(model, 0)


def test_chi2_quantile_against_scipy():
    for alpha, dof in ((0.05, 1), (0.05, 10), (0.01, 301), (0.5, 2601)):
        mine = fr.chi2_quantile(alpha, dof)
        ref = chi2.ppf(1 - alpha, dof)
        assert mine == pytest.approx(ref, rel=1e-9)
    assert fr.chi2_quantile(0.05, 1) == pytest.approx(3.841, abs=5e-4)
    with pytest.raises(ValueError):
        fr.chi2_quantile(0.0, 3)


def test_confidence_interval_scalings(small_posterior):
    *_, model = small_posterior
    ci1 = fr.confidence_interval(model, 0.95, 1000)
    ci2 = fr.confidence_interval(model, 0.95, 2000)
    assert np.allclose(ci1.axis_lengths / ci2.axis_lengths, np.sqrt(2.0))
    assert np.allclose(ci1.halfwidths / ci2.halfwidths, np.sqrt(2.0))
    # axes sorted descending, formula value on the weakest direction
    assert np.all(np.diff(ci1.axis_lengths) <= 1e-18)
    expect_top = model.delta * np.sqrt(ci1.chi2 / (1000 * (model.mu + model.lambda_ptp.min())))
    assert ci1.axis_lengths[0] == pytest.approx(expect_top, rel=1e-12)
    with pytest.raises(ValueError):
        fr.confidence_interval(model, 1.0, 100)
    with pytest.raises(ValueError):
        fr.confidence_interval(model, 0.95, 0)


def test_confidence_monotone_in_mu_and_delta(small_posterior):
    *_, model = small_posterior
    base = fr.confidence_interval(model, 0.95, 1000).axis_lengths
    stronger = fr.PosteriorModel.build(model.q_map, model.P, model.mu * 3, model.delta)
    assert np.all(fr.confidence_interval(stronger, 0.95, 1000).axis_lengths < base)
    quieter = fr.PosteriorModel.build(model.q_map, model.P, model.mu, model.delta / 2)
    assert np.all(fr.confidence_interval(quieter, 0.95, 1000).axis_lengths < base)


def test_skewness_symmetric_zero(coarse1d):
    s = coarse1d
    rep = fr.skewness(s["x"] * (1 - s["x"]), s["mesh"], s["problem"].fem)
    assert abs(rep.beta[0]) < 1e-12


def test_skewness_triangular_against_dense_oracle():
    mesh = fr.build_mesh(1, 300)
    fem = fr.ForwardProblem(mesh, fr.TemporalGrid(T=1.0, nt=4, alpha=0.5)).fem
    x = mesh.nodes[:, 0]
    peak = 0.25
    tri = np.where(x <= peak, x / peak, (1 - x) / (1 - peak))
    rep = fr.skewness(tri, mesh, fem)
    assert rep.beta[0] > 0
    # dense-quadrature oracle of the same piecewise-linear density
    xx = np.linspace(0, 1, 30001)
    dens = np.interp(xx, x, tri)
    dens /= np.trapezoid(dens, xx)
    mean = np.trapezoid(xx * dens, xx)
    sd = np.sqrt(np.trapezoid((xx - mean) ** 2 * dens, xx))
    third = np.trapezoid((xx - mean) ** 3 * dens, xx)
    assert rep.beta[0] == pytest.approx(third / sd**3, rel=1e-3)


def test_skewness_reflection_antisymmetry(coarse1d):
    s = coarse1d
    rng = np.random.default_rng(5)
    q = np.clip(rng.random(s["x"].size), 0.01, None)
    a = fr.skewness(q, s["mesh"], s["problem"].fem).beta[0]
    b = fr.skewness(q[::-1], s["mesh"], s["problem"].fem).beta[0]
    assert a + b == pytest.approx(0.0, abs=1e-10)


def test_skewness_2d_marginals_of_product_density():
    mesh = fr.build_mesh(2, 30)
    fem = fr.ForwardProblem(mesh, fr.TemporalGrid(T=1.0, nt=4, alpha=0.5)).fem
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    peak = 0.25
    fx = np.where(x <= peak, x / peak, (1 - x) / (1 - peak))
    gy = y * (1 - y)
    rep = fr.skewness(fx * gy, mesh, fem)
    assert rep.axes == ("x", "y")
    assert rep.beta[0] > 0.1  # skewed marginal in x
    assert abs(rep.beta[1]) < 1e-10  # symmetric marginal in y

    mesh1 = fr.build_mesh(1, 30)
    fem1 = fr.ForwardProblem(mesh1, fr.TemporalGrid(T=1.0, nt=4, alpha=0.5)).fem
    fx1 = np.where(mesh1.nodes[:, 0] <= peak, mesh1.nodes[:, 0] / peak, (1 - mesh1.nodes[:, 0]) / (1 - peak))
    ref = fr.skewness(fx1, mesh1, fem1)
    assert rep.beta[0] == pytest.approx(ref.beta[0], rel=1e-12)


def test_skewness_rejects_bad_fields(coarse1d):
    s = coarse1d
    with pytest.raises(ValueError):
        fr.skewness(np.zeros(s["x"].size), s["mesh"], s["problem"].fem)
    with pytest.raises(ValueError):
        fr.skewness(-np.ones(s["x"].size), s["mesh"], s["problem"].fem)


def test_skewness_json(tmp_path, coarse1d):
    s = coarse1d
    rep = fr.skewness(s["q_exact"], s["mesh"], s["problem"].fem)
    path = tmp_path / "skew.json"
    rep.to_json(path)
    import json

    doc = json.loads(path.read_text())
    assert doc["axes"] == ["x"]
    assert doc["skewness"][0] == pytest.approx(rep.beta[0])
