"""Variational inversion: objective, adjoint gradient, and projected CGM.

The s = r = 2 functional

    J(q) = ½ ‖F(q) − Φ^δ‖₂² + (μ/2) ‖q‖²_{L²(Ω)}

is minimized by a Fletcher–Reeves conjugate-gradient iteration whose step
length comes from the Gauss–Newton quadratic model evaluated with one batch of
sensitivity solves per iteration:

    γ_k = ‖J'(q_k)‖² / ‖J'(q_{k-1})‖²  (γ₀ = 0),
    d_k = −J'(q_k) + γ_k d_{k-1},
    β_k = −(Σ_ij r_ij S_ij(d_k) + μ (q_k, d_k)) / (Σ_ij S_ij(d_k)² + μ (d_k, d_k)),
    q_{k+1} = Π_{[q_min, q_max]}(q_k + β_k d_k),

stopping when E_k = ‖q_{k+1} − q_k‖_∞ drops below a threshold. The gradient is
assembled through the exact transpose of the (sensitivity solve → flux
quadrature) path, so the directional derivative identity

    Σ_ij r_ij · S_ij(δq) = ∫ (J'(q) − μ q) δq dx

holds to round-off, and β_k would decrease the quadratic model exactly; a
step that still increases the nonlinear J is halved until it does not.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SolverError
from .fem import as_values
from .measure import DirectFluxData, MeasurementMatrix, MeasurementOperator

MU_RULES = ("delta_1_2", "delta", "delta_3_2", "delta_2", "explicit")


def mu_from_rule(rule: str, delta: float, explicit: float | None = None) -> float:
    """Regularization weight from the noise-level power rules."""
    if rule == "explicit":
        if explicit is None:
            raise ValueError("explicit mu rule needs a value")
        return float(explicit)
    powers = {"delta_1_2": 0.5, "delta": 1.0, "delta_3_2": 1.5, "delta_2": 2.0}
    if rule not in powers:
        raise ValueError(f"unknown mu rule {rule!r}; options: {MU_RULES}")
    return float(delta) ** powers[rule]


@dataclass
class ObjectiveConfig:
    """Regularization setup: weight μ and the (s, r) exponents.

    Optimization supports s = r = 2 only; other exponents are allowed for
    objective evaluation.
    """

    mu: float
    s: float = 2.0
    r: float = 2.0
    q_min: float = 0.0
    q_max: float = np.inf

    def __post_init__(self):
        if self.mu < 0:
            raise ValueError("mu must be nonnegative")
        if self.s < 1:
            raise ValueError("s must be >= 1")
        if self.r <= 1:
            raise ValueError("r must be > 1")

    def project(self, q: np.ndarray) -> np.ndarray:
        return np.clip(q, self.q_min, self.q_max)


@dataclass
class CgmLog:
    """Per-iteration history mirroring the CSV columns."""

    iteration: list[int] = field(default_factory=list)
    J: list[float] = field(default_factory=list)
    grad_norm: list[float] = field(default_factory=list)
    E_k: list[float] = field(default_factory=list)
    beta: list[float] = field(default_factory=list)
    gamma: list[float] = field(default_factory=list)

    def append(self, k, J, gnorm, ek, beta, gamma):
        self.iteration.append(int(k))
        self.J.append(float(J))
        self.grad_norm.append(float(gnorm))
        self.E_k.append(float(ek))
        self.beta.append(float(beta))
        self.gamma.append(float(gamma))

    def rows(self):
        return zip(self.iteration, self.J, self.grad_norm, self.E_k, self.beta, self.gamma)


@dataclass
class CgmResult:
    q_map: np.ndarray
    converged: bool
    iterations: int
    J: float
    J0: float
    log: CgmLog
    stop_reason: str


class InverseProblem:
    """Objective/gradient/step machinery bound to one operator and data set."""

    def __init__(self, op: MeasurementOperator, data, cfg: ObjectiveConfig):
        self.op = op
        self.cfg = cfg
        self.fem = op.problem.fem
        if op.kind == "average":
            if not isinstance(data, MeasurementMatrix):
                raise TypeError("average-flux inversion expects a MeasurementMatrix")
            self.target = data.stretched()
        else:
            if not isinstance(data, DirectFluxData):
                raise TypeError("direct-flux inversion expects DirectFluxData")
            self.target = data.values.reshape(2 * data.N, *data.values.shape[2:])
        self.data = data

    # -- pieces ------------------------------------------------------------

    def residual(self, measured: np.ndarray) -> np.ndarray:
        return measured - self.target

    def misfit(self, res: np.ndarray) -> float:
        return 0.5 * float(np.sum(res * res))

    def penalty(self, q: np.ndarray) -> float:
        if self.cfg.r == 2.0:
            return 0.5 * self.cfg.mu * self.fem.inner(q, q)
        return (self.cfg.mu / self.cfg.r) * self.fem.nodal_lr_power(q, self.cfg.r)

    def objective(self, q) -> float:
        """J(q) for the configured exponents (s ≠ 2 on average data only)."""
        qv = as_values(q)
        measured, _, _ = self.op.evaluate(qv)
        res = self.residual(measured)
        if self.cfg.s == 2.0:
            return self.misfit(res) + self.penalty(qv)
        if self.op.kind != "average":
            raise ValueError("s != 2 objectives are defined for average-flux data only")
        return float(np.sum(np.abs(res) ** self.cfg.s)) / self.cfg.s + self.penalty(qv)

    def _gradient_from(self, qv, states, res, stepping) -> np.ndarray:
        """L² gradient via the exact transpose of the measurement path."""
        func = self.op.functional
        if self.op.kind == "average":
            loads = func.avg_loads[:, :, None]
            pi = stepping.dual_load_solve(loads)[:, :, 0]
            weighted = np.einsum("nmc,c->nm", states, res)
            dual = -self.fem.pair_dual(weighted, pi)
        else:
            loads = func.trace_dual_loads(res.transpose(1, 2, 0))
            pi = stepping.dual_load_solve(loads)
            M = states.shape[1]
            dual = -self.fem.pair_dual(
                states.transpose(0, 2, 1).reshape(-1, M), pi.transpose(0, 2, 1).reshape(-1, M)
            )
        dual += self.cfg.mu * (self.fem.mass @ qv)
        return self.fem.riesz(dual)

    def gradient(self, q) -> np.ndarray:
        """J'(q) as a nodal function (the L² Riesz representative)."""
        if self.cfg.s != 2.0 or self.cfg.r != 2.0:
            raise ValueError("gradients are implemented for s = r = 2 only")
        qv = as_values(q)
        measured, states, stepping = self.op.evaluate(qv)
        return self._gradient_from(qv, states, self.residual(measured), stepping)

    def sensitivity_directional(self, q, dq, states=None, stepping=None) -> np.ndarray:
        """Directional measurement derivatives F'(q)[δq] per measurement.

        Returns the stretched (2N,) vector for average data or the
        (2N, nb, nt+1) trace perturbations for direct data.
        """
        qv = as_values(q)
        dqv = as_values(dq)
        if stepping is None:
            stepping = self.op.stepping(qv)
        if states is None:
            states = self.op.solve_states(stepping)
        thetas = stepping.solve_reaction_sources(dqv, states)
        return self.op.measure_states(thetas)

    def _data_inner(self, a, b) -> float:
        return float(np.sum(a * b))

    # -- Fletcher–Reeves CGM with Gauss–Newton step ---------------------------

    def run_cgm(
        self,
        q0=None,
        eps: float = 1e-6,
        max_iter: int = 200,
        max_backtracks: int = 40,
        stall_rel: float = 5e-3,
    ) -> CgmResult:
        """Minimize J from q0 (default zero field) to the MAP point.

        Stops when E_k = ‖q_{k+1} − q_k‖_∞ ≤ eps, when the Gauss–Newton
        model predicts a relative objective decrease below ``stall_rel``
        (further steps would chase structure the functional no longer
        resolves), or after ``max_iter`` iterations.
        """
        fem = self.fem
        M = fem.mesh.num_nodes
        qv = self.cfg.project(np.zeros(M) if q0 is None else as_values(q0).copy())

        measured, states, stepping = self.op.evaluate(qv)
        res = self.residual(measured)
        J = self.misfit(res) + self.penalty(qv)
        J0 = J
        best_q, best_J = qv.copy(), J
        log = CgmLog()
        gnorm2_prev = None
        d_prev = None
        converged = False
        reason = "max_iter"

        for k in range(max_iter):
            g = self._gradient_from(qv, states, res, stepping)
            gnorm2 = fem.inner(g, g)
            if gnorm2 == 0.0:
                converged, reason = True, "zero gradient"
                break
            if k == 0 or gnorm2 > 100.0 * gnorm2_prev:
                gamma = 0.0  # fresh descent step (safeguarded restart)
            else:
                gamma = gnorm2 / gnorm2_prev
            d = -g if gamma == 0.0 or d_prev is None else -g + gamma * d_prev

            S = self.op.measure_states(stepping.solve_reaction_sources(d, states))
            num = self._data_inner(res, S) + self.cfg.mu * fem.inner(qv, d)
            den = self._data_inner(S, S) + self.cfg.mu * fem.inner(d, d)
            beta = -num / den if den > 0 else np.nan
            if not np.isfinite(beta):
                raise SolverError(
                    f"non-finite step length at iteration {k}: num={num:.3e}, den={den:.3e}"
                )
            predicted_drop = num * num / (2.0 * den)
            if J > 0 and predicted_drop < stall_rel * J:
                converged, reason = True, "model stagnation"
                break

            accepted = False
            beta_eff = beta
            for _ in range(max_backtracks):
                q_new = self.cfg.project(qv + beta_eff * d)
                measured_new, states_new, stepping_new = self.op.evaluate(q_new)
                res_new = self.residual(measured_new)
                J_new = self.misfit(res_new) + self.penalty(q_new)
                if J_new <= J + 1e-12:
                    accepted = True
                    break
                beta_eff *= 0.5
            if not accepted:
                reason = "no decrease"
                break

            E_k = float(np.abs(q_new - qv).max())
            log.append(k, J_new, np.sqrt(gnorm2), E_k, beta_eff, gamma)

            qv, J, res, states, stepping = q_new, J_new, res_new, states_new, stepping_new
            if J < best_J:
                best_J, best_q = J, qv.copy()
            gnorm2_prev, d_prev = gnorm2, d
            if E_k <= eps:
                converged, reason = True, "step size"
                break

        iterations = len(log.iteration)
        return CgmResult(
            q_map=best_q,
            converged=converged,
            iterations=iterations,
            J=best_J,
            J0=J0,
            log=log,
            stop_reason=reason,
        )


def relative_error(estimate, truth, fem) -> float:
    """Relative L² error ‖q̂ − q‖ / ‖q‖ by FEM quadrature."""
    est = as_values(estimate)
    tru = as_values(truth)
    denom = fem.norm_l2(tru)
    if denom == 0.0:
        raise ValueError("relative error is undefined for a zero reference field")
    return fem.norm_l2(est - tru) / denom
