"""The measurement map: weighted average boundary flux and direct flux traces.

For a coefficient q the measurement matrix Φ ∈ R^{2×N} collects

    φ_ij = ∫_{Λ×(0,T)} (∂u_j^i/∂ν_A) h ds dt,

one entry per source pair φ_j·v_i, evaluated by composite trapezoid quadrature
in time and nodal quadrature on Λ (point evaluation in 1D, trapezoid along
edges in 2D). The same machinery exposes the unweighted flux traces on
Λ×(0,T) — the data-rich alternative measurement — with the identical noise
model applied per sample.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .fem import as_values
from .flux import flux_matrix
from .mesh import SpatialMesh, segment_quadrature_weights
from .solver import ForwardProblem, Stepping
from .sources import SourceSystem


class WeightFunction:
    """Nonnegative measurement weight h(x, t) on the accessible boundary."""

    def __init__(self, func, name: str = "custom"):
        self.func = func
        self.name = name

    @classmethod
    def from_name(cls, name: str) -> "WeightFunction":
        key = name.strip().lower()
        if key in ("one_minus_t", "1-t"):
            return cls(lambda x, t: 1.0 - t, name="one_minus_t")
        if key in ("one", "1", "constant"):
            return cls(lambda x, t: np.ones_like(t), name="one")
        raise ValueError(f"unknown weight function {name!r}")

    def sample(self, coords: np.ndarray, times: np.ndarray) -> np.ndarray:
        """Values on boundary nodes × grid points, shape (nb, nt+1)."""
        nb = coords.shape[0]
        out = np.empty((nb, len(times)))
        for b in range(nb):
            out[b] = np.asarray(self.func(coords[b], times), dtype=float)
        if out.min() < -1e-12:
            raise ValueError(
                f"weight function {self.name!r} takes negative values "
                f"(min {out.min():.3e}); it must be nonnegative on its support"
            )
        return np.clip(out, 0.0, None)


@dataclass
class MeasurementMatrix:
    """Weighted-average flux data Φ with its noise bookkeeping.

    The stretched-vector ordering is row-major: (φ₁₁, …, φ₁N, φ₂₁, …, φ₂N).
    """

    values: np.ndarray  # (2, N)
    epsilon: float = 0.0
    delta: float = 0.0
    seed: int | None = None

    @property
    def N(self) -> int:
        return self.values.shape[1]

    def stretched(self) -> np.ndarray:
        return self.values.reshape(-1)

    def to_csv(self, path, header_lines: tuple[str, ...] = ()):
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["i", "j", "value"])
            for i in range(2):
                for j in range(self.N):
                    writer.writerow([i + 1, j + 1, repr(float(self.values[i, j]))])

    def to_json(self, path=None):
        doc = {
            "ordering": "stretched row-major (i=1 block first): phi_11..phi_1N, phi_21..phi_2N",
            "entries": self.values.tolist(),
            "epsilon": self.epsilon,
            "delta": self.delta,
            "seed": self.seed,
        }
        if path is None:
            return json.dumps(doc, indent=2)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")


@dataclass
class DirectFluxData:
    """Unweighted conormal flux traces per source pair on Λ×(0,T).

    ``values[i-1, j-1]`` is the (n_nodes, nt+1) trace of ∂u_j^i/∂ν_A. Every
    sample counts as one scalar measurement, so the misfit and the recorded
    noise level δ use the plain Euclidean norm over all samples; the
    quadrature weights are kept for L²(Λ×(0,T)) diagnostics.
    """

    values: np.ndarray  # (2, N, nb, nt+1)
    quad_weights: np.ndarray = field(repr=False)  # (nb, nt+1)
    epsilon: float = 0.0
    delta: float = 0.0
    seed: int | None = None

    @property
    def N(self) -> int:
        return self.values.shape[1]


class FluxFunctional:
    """Flux extraction + quadrature over a union of boundary segments."""

    def __init__(
        self,
        problem: ForwardProblem,
        segment,
        weight: WeightFunction | None = None,
    ):
        mesh = problem.mesh
        self.problem = problem
        self.segments = mesh.resolve_segments(segment)
        mats, weights, nodes = [], [], []
        for name in self.segments:
            mats.append(flux_matrix(mesh, problem.tensor, name))
            weights.append(segment_quadrature_weights(mesh, name))
            nodes.append(mesh.segments[name])
        self.E = sp.vstack(mats).tocsr()
        self.space_weights = np.concatenate(weights)
        self.nodes = np.concatenate(nodes)
        self.coords = mesh.nodes[self.nodes]
        self.omega = problem.grid.trapezoid_weights()
        self.weight = weight
        if weight is not None:
            self.h = weight.sample(self.coords, problem.grid.times)
        else:
            self.h = np.ones((len(self.nodes), problem.grid.nt + 1))
        # dual loads of the averaged functional: g^n = ω_n Eᵀ(s ⊙ h(·,t_n))
        sh = self.space_weights[:, None] * self.h * self.omega[None, :]
        self.avg_loads = (self.E.T @ sh).T  # (nt+1, M)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def average(self, states: np.ndarray) -> np.ndarray:
        """∫_{Λ×(0,T)} flux·h for each state column; states (nt+1, M, C)."""
        return np.einsum("nm,nmc->c", self.avg_loads, states)

    def traces(self, states: np.ndarray) -> np.ndarray:
        """Flux samples on Λ × time grid, shape (nb, nt+1, C)."""
        nt1, M, C = states.shape
        flat = states.transpose(1, 0, 2).reshape(M, nt1 * C)
        return (self.E @ flat).reshape(self.n_nodes, nt1, C)

    def trace_quad_weights(self) -> np.ndarray:
        """Quadrature weights of the discrete L²(Λ×(0,T)) inner product."""
        return self.space_weights[:, None] * self.omega[None, :]

    def trace_dual_loads(self, res: np.ndarray) -> np.ndarray:
        """Dual loads of the per-sample residual functional Σ res·trace.

        ``res`` is (nb, nt+1, C); returns (nt+1, M, C) loads whose pairing
        with states equals the plain sample sum Σ res·traces(states) per
        column (each trace sample is one scalar measurement).
        """
        nb, nt1, C = res.shape
        flat = (self.E.T @ res.reshape(nb, nt1 * C)).reshape(-1, nt1, C)
        return flat.transpose(1, 0, 2)


class MeasurementOperator:
    """Forward operator F: q ↦ data for one source system and data kind.

    kind ``"average"`` produces the 2×N weighted-average matrix; kind
    ``"direct"`` produces the unweighted flux traces.
    """

    def __init__(
        self,
        problem: ForwardProblem,
        sources: SourceSystem,
        weight: WeightFunction | None,
        segment,
        kind: str = "average",
    ):
        if kind not in ("average", "direct"):
            raise ValueError(f"unknown measurement kind {kind!r}")
        if kind == "average" and weight is None:
            raise ValueError("average-flux measurements need a weight function")
        self.problem = problem
        self.sources = sources
        self.kind = kind
        self.functional = FluxFunctional(problem, segment, weight if kind == "average" else None)
        self._phis_2n, self._v_2n = sources.stacked()

    @property
    def n_measurements(self) -> int:
        if self.kind == "average":
            return 2 * self.sources.N
        return 2 * self.sources.N * self.functional.n_nodes * (self.problem.grid.nt + 1)

    def stepping(self, q) -> Stepping:
        return self.problem.stepping(q)

    def solve_states(self, stepping: Stepping) -> np.ndarray:
        """The 2N direct states, shape (nt+1, M, 2N), stretched column order."""
        return stepping.solve_separable(self._phis_2n, self._v_2n)

    def measure_states(self, states: np.ndarray) -> np.ndarray:
        """Average: (2N,) stretched vector; direct: (2N, nb, nt+1) traces."""
        if self.kind == "average":
            return self.functional.average(states)
        return self.functional.traces(states).transpose(2, 0, 1)

    def evaluate(self, q, stepping: Stepping | None = None):
        """Measurements at q; returns (data, states, stepping) for reuse."""
        if stepping is None:
            stepping = self.stepping(q)
        states = self.solve_states(stepping)
        return self.measure_states(states), states, stepping


def forward_map(
    problem: ForwardProblem,
    q,
    sources: SourceSystem,
    weight: WeightFunction,
    segment,
) -> MeasurementMatrix:
    """Evaluate the weighted-average flux measurement matrix Φ(q)."""
    op = MeasurementOperator(problem, sources, weight, segment, kind="average")
    data, _, _ = op.evaluate(q)
    return MeasurementMatrix(values=data.reshape(2, sources.N))


def add_noise(
    clean: MeasurementMatrix,
    epsilon: float,
    seed: int | None = None,
    scale: str = "relative",
) -> MeasurementMatrix:
    """Perturb entries with i.i.d. standard normal draws ζ_ij at level ε.

    ``scale="relative"`` (default) perturbs each entry by its own magnitude,
    φ_ij·(1 + ε ζ_ij); ``scale="max"`` adds max|φ|·ε·ζ_ij uniformly. The
    relative scaling keeps every entry's information content at the nominal
    level ε — under the max scaling the smallest entries (two orders below
    the largest here) are drowned long before ε reaches 1e-3.

    Records δ = ‖Φ^δ − Φ‖₂ (stretched two-norm) on the result.
    """
    if epsilon < 0:
        raise ValueError("noise level must be nonnegative")
    if scale not in ("relative", "max"):
        raise ValueError(f"unknown noise scale {scale!r}")
    values = clean.values.copy()
    if epsilon > 0:
        rng = np.random.default_rng(seed)
        zeta = rng.standard_normal(values.shape)
        if scale == "max":
            values = values + np.abs(clean.values).max() * epsilon * zeta
        else:
            values = values * (1.0 + epsilon * zeta)
    delta = float(np.linalg.norm((values - clean.values).ravel()))
    return MeasurementMatrix(values=values, epsilon=epsilon, delta=delta, seed=seed)


def direct_flux_data(
    problem: ForwardProblem,
    q,
    sources: SourceSystem,
    segment,
) -> DirectFluxData:
    """Unweighted flux traces ∂u_j^i/∂ν_A on Λ×(0,T) for all source pairs."""
    op = MeasurementOperator(problem, sources, None, segment, kind="direct")
    data, _, _ = op.evaluate(q)
    traces = data.reshape(2, sources.N, op.functional.n_nodes, problem.grid.nt + 1)
    return DirectFluxData(values=traces, quad_weights=op.functional.trace_quad_weights())


def add_noise_direct(
    clean: DirectFluxData,
    epsilon: float,
    seed: int | None = None,
    scale: str = "relative",
) -> DirectFluxData:
    """Per-sample noise with the same rule as :func:`add_noise`.

    δ is the Euclidean norm of the perturbation over all samples, matching
    the per-sample misfit geometry of the direct-data inversion.
    """
    if epsilon < 0:
        raise ValueError("noise level must be nonnegative")
    if scale not in ("relative", "max"):
        raise ValueError(f"unknown noise scale {scale!r}")
    values = clean.values.copy()
    if epsilon > 0:
        rng = np.random.default_rng(seed)
        zeta = rng.standard_normal(values.shape)
        if scale == "max":
            values = values + np.abs(clean.values).max() * epsilon * zeta
        else:
            values = values * (1.0 + epsilon * zeta)
    diff = values - clean.values
    delta = float(np.linalg.norm(diff.ravel()))
    return DirectFluxData(
        values=values,
        quad_weights=clean.quad_weights,
        epsilon=epsilon,
        delta=delta,
        seed=seed,
    )
