"""Self-contained verification checks with a machine-readable report.

Every check runs a small, fast configuration of the numerical machinery and
asserts an independently computable property (analytic value, exact identity,
convergence order, or statistical bound). Each check also accepts fault flags
that deliberately corrupt one ingredient; a healthy checker must then report a
failure, which is how the test suite verifies the checks have teeth.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma

from .fem import DiffusionTensor
from .inversion import InverseProblem, ObjectiveConfig
from .measure import MeasurementOperator, WeightFunction, add_noise, forward_map
from .mesh import build_mesh
from .solver import ForwardProblem, solve_tfde
from .sources import build_source_system
from .timefrac import TemporalGrid, caputo_apply, caputo_weights
from .uq import PosteriorModel, sample_posterior


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


@dataclass
class ValidationReport:
    checks: list[CheckResult]

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_json(self, path=None):
        doc = {
            "all_passed": self.all_passed,
            "checks": [
                {"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks
            ],
        }
        if path is None:
            return json.dumps(doc, indent=2)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")


def _check_caputo_weights(faults) -> CheckResult:
    grid = TemporalGrid(T=1.0, nt=100, alpha=0.3)
    w = caputo_weights(grid)
    b = w.b.copy()
    if "weights_reversed" in faults:
        b = b[::-1]
    msgs = []
    if abs(b[0] - 1.0) > 1e-12:
        msgs.append(f"b_0 = {b[0]:.3e} != 1")
    if not np.all(np.diff(b) < 0):
        msgs.append("b_k not strictly decreasing")
    if b.min() <= 0:
        msgs.append("b_k not positive")
    tel = abs(b.sum() - grid.nt ** (1 - grid.alpha))
    if tel > 1e-12:
        msgs.append(f"telescoping sum off by {tel:.2e}")
    ok = not msgs
    return CheckResult("caputo_weights", ok, "; ".join(msgs) if msgs else "b_0=1, monotone, telescoping to 1e-12")


def _check_caputo_analytic(faults) -> CheckResult:
    grid = TemporalGrid(T=1.0, nt=200, alpha=0.5)
    t = grid.times
    lin = caputo_apply(t, grid)
    exact_lin = t[1:] ** 0.5 / gamma(1.5)
    err_lin = np.abs(lin[1:] - exact_lin).max()
    quad = caputo_apply(t**2, grid)
    exact_quad = 2.0 * t[-1] ** 1.5 / gamma(2.5)
    err_quad = abs(quad[-1] - exact_quad) / exact_quad
    ok = err_lin < 1e-12 and err_quad < 2e-3
    return CheckResult(
        "caputo_analytic",
        ok,
        f"linear exact to {err_lin:.1e}; t^2 rel err {err_quad:.1e} at nt=200",
    )


def _check_fem_consistency(faults) -> CheckResult:
    mesh = build_mesh(1, 8)
    prob = ForwardProblem(mesh, TemporalGrid(T=1.0, nt=4, alpha=0.5), DiffusionTensor(1.0))
    fem = prob.fem
    msgs = []
    if abs(fem.mass.sum() - 1.0) > 1e-12:
        msgs.append("mass total != |domain|")
    if np.abs(fem.stiffness @ np.ones(mesh.num_nodes)).max() > 1e-12:
        msgs.append("constants not in stiffness kernel")
    R1 = fem.reaction(np.ones(mesh.num_nodes))
    if np.abs((R1 - fem.mass).toarray()).max() > 1e-14:
        msgs.append("reaction(1) != mass")
    return CheckResult("fem_consistency", not msgs, "; ".join(msgs) or "mass/stiffness/reaction identities hold")


def _check_manufactured_order(faults) -> CheckResult:
    alpha = 0.4
    mesh = build_mesh(1, 120)
    x = mesh.nodes[:, 0]
    errs = []
    for nt in (20, 40):
        grid = TemporalGrid(T=1.0, nt=nt, alpha=alpha)
        t = grid.times
        prob = ForwardProblem(mesh, grid, DiffusionTensor(1.0))
        src = (
            np.outer(gamma(3) / gamma(3 - alpha) * t ** (2 - alpha), x * (1 - x))
            + np.outer(t**2, 2 * np.ones_like(x))
            + np.outer(t**2, x * (1 - x))
        )
        fld = solve_tfde(mesh, grid, prob.tensor, np.ones_like(x), source=src, problem=prob)
        ref = t[-1] ** 2 * x * (1 - x)
        errs.append(prob.fem.norm_l2(fld.values[-1] - ref) / prob.fem.norm_l2(ref))
    slope = np.log(errs[0] / errs[1]) / np.log(2.0)
    ok = (2 - alpha - 0.35) < slope < (2 - alpha + 0.35)
    return CheckResult("manufactured_order", ok, f"observed temporal order {slope:.2f} (target {2-alpha:.2f})")


def _check_adjoint_reversal(faults) -> CheckResult:
    mesh = build_mesh(1, 40)
    grid = TemporalGrid(T=1.0, nt=30, alpha=0.6)
    prob = ForwardProblem(mesh, grid, DiffusionTensor(1.0))
    q = 0.5 + 0.3 * mesh.nodes[:, 0]
    data = np.zeros((grid.nt + 1, mesh.num_nodes))
    data[:, mesh.segments["right"]] = (1.0 - grid.times)[:, None]
    adj = solve_tfde(mesh, grid, prob.tensor, q, dirichlet=data, mode="adjoint", problem=prob)
    # direct assembly of the reversed problem
    stepping = prob.stepping(q)
    bvals = data[::-1].copy()
    rev = stepping._loop(np.zeros((grid.nt, len(mesh.interior), 1)), bvals=bvals)[:, :, 0]
    gap = np.abs(adj.values - rev[::-1]).max()
    ok = gap <= 1e-14
    return CheckResult("adjoint_time_reversal", ok, f"reversal round trip max dev {gap:.2e}")


def _build_small_inverse(faults):
    mesh = build_mesh(1, 60)
    grid = TemporalGrid(T=1.0, nt=30, alpha=0.3)
    prob = ForwardProblem(mesh, grid, DiffusionTensor(1.0))
    x = mesh.nodes[:, 0]
    q_exact = x**2 * (1 - x**2)
    srcs = build_source_system(mesh, grid, "trig", 3)
    w = WeightFunction.from_name("one_minus_t")
    op = MeasurementOperator(prob, srcs, w, "right", kind="average")
    clean = forward_map(prob, q_exact, srcs, w, "right")
    noisy = add_noise(clean, 1e-3, seed=12)
    cfg = ObjectiveConfig(mu=1e-6, q_min=0.0, q_max=1.0)
    return prob, op, InverseProblem(op, noisy, cfg), q_exact


def _check_gradient_fd(faults) -> CheckResult:
    prob, op, inv, q_exact = _build_small_inverse(faults)
    rng = np.random.default_rng(0)
    q = np.clip(q_exact + 0.05 * rng.standard_normal(q_exact.size), 0, None)
    dq = rng.standard_normal(q_exact.size)
    measured, states, stepping = op.evaluate(q)
    res = inv.residual(measured)
    g = inv._gradient_from(q, states, res, stepping)
    if "adjoint_sign_flip" in faults:
        g = -g + 2 * inv.cfg.mu * q  # flips the data-term part only
    gd = prob.fem.inner(g, dq)

    def J(qv):
        m, _, _ = op.evaluate(qv)
        r = inv.residual(m)
        return inv.misfit(r) + inv.penalty(qv)

    best = np.inf
    for h in (1e-3, 1e-4, 1e-5):
        fd = (J(q + h * dq) - J(q - h * dq)) / (2 * h)
        best = min(best, abs(fd - gd) / max(abs(fd), 1e-300))
    ok = best < 1e-3
    return CheckResult("gradient_fd", ok, f"best-h relative error {best:.2e}")


def _check_duality(faults) -> CheckResult:
    prob, op, inv, q_exact = _build_small_inverse(faults)
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(3):
        q = np.clip(q_exact + 0.05 * rng.standard_normal(q_exact.size), 0, None)
        dq = rng.standard_normal(q_exact.size)
        measured, states, stepping = op.evaluate(q)
        res = inv.residual(measured)
        g = inv._gradient_from(q, states, res, stepping)
        S = inv.sensitivity_directional(q, dq, states=states, stepping=stepping)
        lhs = float(res @ S)
        rhs = prob.fem.inner(g - inv.cfg.mu * q, dq)
        worst = max(worst, abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1e-300))
    ok = worst < 1e-6
    return CheckResult("duality_identity", ok, f"max relative gap {worst:.2e}")


def _check_max_principle(faults) -> CheckResult:
    mesh = build_mesh(1, 80)
    grid = TemporalGrid(T=1.0, nt=40, alpha=0.4)
    prob = ForwardProblem(mesh, grid, DiffusionTensor(1.0))
    srcs = build_source_system(mesh, grid, "trig", 1)
    from .solver import SeparableSource

    fld = solve_tfde(
        mesh,
        grid,
        prob.tensor,
        0.5 * np.ones(mesh.num_nodes),
        source=SeparableSource(phi=srcs.phis[0], v=srcs.v1),
        problem=prob,
    )
    mn = fld.values.min()
    ok = mn >= -1e-10
    return CheckResult("max_principle", ok, f"min nodal value {mn:.2e}")


def _check_sampler_moments(faults) -> CheckResult:
    rng = np.random.default_rng(3)
    P = rng.standard_normal((6, 9))
    model = PosteriorModel.build(np.zeros(9), P, mu=0.5, delta=0.1)
    ens = sample_posterior(model, 10000, seed=4, keep_samples=False)
    fro = np.linalg.norm(ens.cov - model.cov) / np.linalg.norm(model.cov)
    mean_dev = np.linalg.norm(ens.mean - model.q_map)
    bound = 3 * np.sqrt(np.trace(model.cov) / 10000)
    ok = fro < 0.05 and mean_dev <= bound
    return CheckResult(
        "sampler_moments", ok, f"cov rel-Frobenius {fro:.3f}, mean dev {mean_dev:.2e} (bound {bound:.2e})"
    )


def _check_stability(faults) -> CheckResult:
    ratios = []
    for n in (60, 120):
        mesh = build_mesh(1, n)
        grid = TemporalGrid(T=1.0, nt=40, alpha=0.5)
        prob = ForwardProblem(mesh, grid, DiffusionTensor(1.0))
        x = mesh.nodes[:, 0]
        phi = np.sin(np.pi * x)
        from .solver import SeparableSource

        fld = solve_tfde(
            mesh,
            grid,
            prob.tensor,
            np.zeros_like(x),
            source=SeparableSource(phi=phi, v=grid.times),
            problem=prob,
        )
        omega = grid.trapezoid_weights()
        energy = np.sqrt(
            sum(
                w * float(fld.values[n_] @ ((prob.fem.stiffness + prob.fem.mass) @ fld.values[n_]))
                for n_, w in enumerate(omega)
            )
        )
        rhs = np.sqrt(sum(w * prob.fem.inner(phi, phi) * v**2 for w, v in zip(omega, grid.times)))
        ratios.append(energy / rhs)
    drift = abs(ratios[1] - ratios[0]) / ratios[0]
    ok = drift < 0.2
    return CheckResult("stability_refinement", ok, f"energy/source ratios {ratios[0]:.3f}->{ratios[1]:.3f} drift {drift:.1%}")


_CHECKS = (
    _check_caputo_weights,
    _check_caputo_analytic,
    _check_fem_consistency,
    _check_manufactured_order,
    _check_adjoint_reversal,
    _check_gradient_fd,
    _check_duality,
    _check_max_principle,
    _check_sampler_moments,
    _check_stability,
)


def validate_suite(faults: tuple[str, ...] = ()) -> ValidationReport:
    """Run all checks; fault flags corrupt specific ingredients on purpose."""
    faults = tuple(faults)
    results = [check(faults) for check in _CHECKS]
    return ValidationReport(checks=results)
