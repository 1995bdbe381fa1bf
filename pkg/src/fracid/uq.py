"""Laplace-approximation posterior at the MAP point and its statistics.

With P the Jacobian of the (stretched) measurement map at q_MAP, noise
variance δ², and regularization weight μ, the Gaussian posterior has

    C_MAP = ( μ/δ² · I + 1/δ² · PᵀP )⁻¹ = δ² (μ I + PᵀP)⁻¹,
    λ_j(C_MAP) = δ² / (μ + λ_j(PᵀP)),

sampled through the lower Cholesky factor C_MAP = L Lᵀ as q = q_MAP + L z,
z ~ N(0, I). Confidence ellipsoids for the n-sample posterior mean have axis
lengths δ·sqrt(χ²_α(M) / (n (μ + λ_j(PᵀP)))), and the coordinate projection
onto node m has half-width sqrt(χ²_α(M)·(C_MAP)_mm / n).

Skewness treats a nonnegative coefficient field, normalized by its integral,
as the density of a hypothetical random position and reports the third
standardized moment (per marginal axis in 2D).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
from scipy.special import gammainc

from .fem import FemOperators, as_values
from .measure import MeasurementOperator
from .mesh import SpatialMesh


def chi2_quantile(alpha: float, dof: int) -> float:
    """Upper-α quantile of the chi-square law with ``dof`` degrees of freedom.

    Inverted by bisection on the regularized lower incomplete gamma function
    P(dof/2, x/2) = 1 − α.
    """
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie strictly between 0 and 1")
    if dof < 1:
        raise ValueError("dof must be a positive integer")
    target = 1.0 - alpha
    lo, hi = 0.0, float(dof) + 10.0
    while gammainc(dof / 2.0, hi / 2.0) < target:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if gammainc(dof / 2.0, mid / 2.0) < target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-13 * max(1.0, hi):
            break
    return 0.5 * (lo + hi)


def assemble_jacobian(op: MeasurementOperator, q_map) -> np.ndarray:
    """Jacobian P of the stretched measurement map at q_MAP, shape (2N, M).

    One transpose (adjoint) solve against the measurement functional plus the
    2N direct states; row c equals −Σ_n pairing of u_c^n with the adjoint
    state, which matches the sensitivity-solve columns to round-off.
    """
    if op.kind != "average":
        raise ValueError("the posterior Jacobian is defined for average-flux data")
    qv = as_values(q_map)
    stepping = op.stepping(qv)
    states = op.solve_states(stepping)
    pi = stepping.dual_load_solve(op.functional.avg_loads[:, :, None])[:, :, 0]
    fem = op.problem.fem
    rows = [-fem.pair_dual(states[:, :, c], pi) for c in range(states.shape[2])]
    return np.vstack(rows)


def assemble_jacobian_columns(op: MeasurementOperator, q_map) -> np.ndarray:
    """Column-wise Jacobian via one sensitivity solve per node (test oracle)."""
    qv = as_values(q_map)
    stepping = op.stepping(qv)
    states = op.solve_states(stepping)
    M = op.problem.mesh.num_nodes
    cols = np.empty((M, 2 * op.sources.N))
    for m in range(M):
        dq = np.zeros(M)
        dq[m] = 1.0
        thetas = stepping.solve_reaction_sources(dq, states)
        cols[m] = op.measure_states(thetas)
    return cols.T


def posterior_covariance(P: np.ndarray, mu: float, delta: float):
    """(C_MAP, lower Cholesky factor L) from the Gauss–Newton precision."""
    if mu <= 0:
        raise ValueError("posterior covariance needs mu > 0")
    if delta <= 0:
        raise ValueError("posterior covariance needs delta > 0")
    M = P.shape[1]
    precision = mu * np.eye(M) + P.T @ P
    c, low = sla.cho_factor(precision, lower=True)
    C = delta**2 * sla.cho_solve((c, low), np.eye(M))
    C = 0.5 * (C + C.T)
    L = sla.cholesky(C, lower=True)
    return C, L


@dataclass
class PosteriorModel:
    """Gaussian posterior N(q_MAP, C_MAP) with its factor and spectrum."""

    q_map: np.ndarray
    P: np.ndarray
    mu: float
    delta: float
    cov: np.ndarray
    chol_lower: np.ndarray
    lambda_ptp: np.ndarray = field(repr=False)  # eigenvalues of PᵀP, descending

    @classmethod
    def build(cls, q_map, P: np.ndarray, mu: float, delta: float) -> "PosteriorModel":
        C, L = posterior_covariance(P, mu, delta)
        sv = sla.svdvals(P)
        lam = np.zeros(P.shape[1])
        lam[: len(sv)] = sv**2
        return cls(
            q_map=as_values(q_map).copy(),
            P=P,
            mu=float(mu),
            delta=float(delta),
            cov=C,
            chol_lower=L,
            lambda_ptp=lam,
        )

    @property
    def dim(self) -> int:
        return self.q_map.shape[0]

    def eigen_identity_error(self, k: int = 5) -> float:
        """Max relative mismatch of λ_j(C) = δ²/(μ+λ_j(PᵀP)) on extreme pairs."""
        eig_c = np.sort(sla.eigvalsh(self.cov))[::-1]
        pred = np.sort(self.delta**2 / (self.mu + self.lambda_ptp))[::-1]
        take = np.r_[np.arange(k), np.arange(self.dim - k, self.dim)]
        return float(np.max(np.abs(eig_c[take] - pred[take]) / pred[take]))


@dataclass
class PosteriorEnsemble:
    """Sample ensemble with running mean/covariance bookkeeping."""

    mean: np.ndarray
    cov: np.ndarray
    Ne: int
    seed: int | None
    samples: np.ndarray | None = None


def sample_posterior(
    model: PosteriorModel,
    Ne: int,
    seed: int | None = None,
    keep_samples: bool = True,
    block: int = 1000,
) -> PosteriorEnsemble:
    """Draw Ne posterior samples q = q_MAP + L z, z ~ N(0, I).

    Mean and covariance are accumulated incrementally over blocks, so large
    ensembles can be drawn with ``keep_samples=False``.
    """
    if Ne < 1:
        raise ValueError("Ne must be at least 1")
    rng = np.random.default_rng(seed)
    M = model.dim
    s1 = np.zeros(M)
    s2 = np.zeros((M, M))
    kept = np.empty((Ne, M)) if keep_samples else None
    done = 0
    while done < Ne:
        nb = min(block, Ne - done)
        z = rng.standard_normal((nb, M))
        x = model.q_map[None, :] + z @ model.chol_lower.T
        s1 += x.sum(axis=0)
        s2 += x.T @ x
        if kept is not None:
            kept[done : done + nb] = x
        done += nb
    mean = s1 / Ne
    if Ne > 1:
        cov = (s2 - Ne * np.outer(mean, mean)) / (Ne - 1)
    else:
        cov = np.zeros((M, M))
    return PosteriorEnsemble(mean=mean, cov=cov, Ne=Ne, seed=seed, samples=kept)


@dataclass
class ConfidenceReport:
    """Ellipsoid axis lengths and per-node half-widths for the n-sample mean."""

    confidence: float
    n: int
    chi2: float
    axis_lengths: np.ndarray  # descending
    halfwidths: np.ndarray  # per node


def confidence_interval(model: PosteriorModel, confidence: float, n: int) -> ConfidenceReport:
    """Confidence region of the posterior mean after n samples."""
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie strictly between 0 and 1")
    if n < 1:
        raise ValueError("sample count n must be at least 1")
    alpha = 1.0 - confidence
    x2 = chi2_quantile(alpha, model.dim)
    lam = np.sort(model.lambda_ptp)  # ascending -> axis lengths descending
    axes = model.delta * np.sqrt(x2 / (n * (model.mu + lam)))
    halfwidths = np.sqrt(x2 * np.clip(np.diag(model.cov), 0.0, None) / n)
    return ConfidenceReport(
        confidence=confidence, n=n, chi2=x2, axis_lengths=axes, halfwidths=halfwidths
    )


@dataclass
class SkewnessReport:
    """Third standardized moment of the normalized field, per axis."""

    axes: tuple[str, ...]
    beta: tuple[float, ...]
    mean: tuple[float, ...]
    sd: tuple[float, ...]
    third_moment: tuple[float, ...]

    def to_json(self, path=None):
        doc = {
            "axes": list(self.axes),
            "skewness": list(self.beta),
            "mean": list(self.mean),
            "sd": list(self.sd),
            "third_central_moment": list(self.third_moment),
        }
        if path is None:
            return json.dumps(doc, indent=2)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")


def _moments(weights: np.ndarray, coords: np.ndarray):
    mean = float(weights @ coords)
    centered = coords - mean
    var = float(weights @ centered**2)
    third = float(weights @ centered**3)
    sd = np.sqrt(max(var, 0.0))
    if sd == 0.0:
        raise ValueError("degenerate density: zero standard deviation")
    return third / sd**3, mean, sd, third


def skewness(values, mesh: SpatialMesh, fem: FemOperators, axis: str | None = None) -> SkewnessReport:
    """Skewness of the normalized coefficient field.

    The field must be nonnegative (tiny negative round-off is clamped) with
    positive total mass; 2D fields report one coefficient per marginal axis
    obtained by integrating out the other coordinate with trapezoid weights.
    """
    v = as_values(values).astype(float).copy()
    scale = np.abs(v).max()
    if scale > 0:
        bad = v < -1e-10 * scale
        if np.any(bad):
            raise ValueError("skewness requires a nonnegative field")
    v = np.clip(v, 0.0, None)
    massw = fem.lumped * v
    total = massw.sum()
    if total <= 0:
        raise ValueError("skewness requires positive total mass")
    density = massw / total

    if mesh.dimension == 1:
        b, m, s, t = _moments(density, mesh.nodes[:, 0])
        return SkewnessReport(axes=("x",), beta=(b,), mean=(m,), sd=(s,), third_moment=(t,))

    npts = mesh.n + 1
    grid = density.reshape(npts, npts)  # (iy, ix)
    coords = np.linspace(0.0, 1.0, npts)
    reports = {}
    for name, marg in (("x", grid.sum(axis=0)), ("y", grid.sum(axis=1))):
        reports[name] = _moments(marg, coords)
    names = ("x", "y") if axis is None else (axis,)
    if any(n not in reports for n in names):
        raise ValueError(f"unknown axis {axis!r}")
    return SkewnessReport(
        axes=names,
        beta=tuple(reports[n][0] for n in names),
        mean=tuple(reports[n][1] for n in names),
        sd=tuple(reports[n][2] for n in names),
        third_moment=tuple(reports[n][3] for n in names),
    )
