"""Implicit L1 time stepping for the time-fractional diffusion equation.

The state solves

    D_t^α u − ∇·(A ∇u) + q u = f   in Ω×(0,T],   u=0 on ∂Ω,   u(·,0)=0,

discretized by Galerkin FEM in space and the L1 scheme in time. Each step
solves

    (c₀ M + K + R(q)) u^n = load^n − M·hist^n,
    hist^n = c₀ [ Σ_{k=1}^{n-1} (b_k − b_{k-1}) u^{n-k} − b_{n-1} u^0 ],

with one sparse factorization reused across all time levels and all
right-hand sides. Four solve variants share the engine:

* ``direct``: load from a source f (separable φ(x)v(t) or general nodal data);
* ``sensitivity``: load −R(δq)·u^n from a base state (the linearized state);
* ``second_order``: load −R(δq̃)·ϑ₁ − R(δq)·ϑ₂ from two first-order states;
* ``adjoint``: the time-reversed problem with boundary data imposed by
  row-pinning; solved forward in reversed time and returned re-indexed to
  physical time (terminal value at t=T is zero).

``dual_load_solve`` additionally exposes the exact transpose of the stepping:
because M, K, R are symmetric and the L1 history weights form a Toeplitz
convolution, the transposed space-time system is the same stepping run on
time-reversed dual loads. Gradient and Jacobian assemblies use it so that
coefficient-to-measurement derivatives match the sensitivity route to
round-off.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .errors import SolverError
from .fem import CoefficientField, DiffusionTensor, FemOperators, as_values
from .mesh import SpatialMesh
from .timefrac import CaputoWeights, TemporalGrid, caputo_weights


@dataclass
class SpaceTimeField:
    """Nodal space-time field u⁰..u^nt with its role tag.

    ``reversed_storage`` marks fields whose stored index n corresponds to
    physical time T − t_n; fields returned by the public solvers are always
    in physical indexing (flag False).
    """

    values: np.ndarray  # (nt+1, M)
    tag: str  # direct | sensitivity | second_order | adjoint
    reversed_storage: bool = False

    def check_invariants(self, atol: float = 0.0):
        if self.tag in ("direct", "sensitivity", "second_order"):
            if np.abs(self.values[0]).max() > atol:
                raise ValueError(f"{self.tag} field must start from zero initial data")
        elif self.tag == "adjoint":
            idx = 0 if self.reversed_storage else -1
            if np.abs(self.values[idx]).max() > atol:
                raise ValueError("adjoint field must vanish at physical time T")


@dataclass(frozen=True)
class SeparableSource:
    """Source φ(x)·v(t) given by nodal φ values and v samples."""

    phi: np.ndarray  # (M,)
    v: np.ndarray  # (nt+1,)


@dataclass(frozen=True)
class ReactionSource:
    """Source −δq·u(x,t) of the sensitivity equation."""

    dq: np.ndarray
    base: SpaceTimeField


@dataclass(frozen=True)
class SecondOrderSource:
    """Source −δq̃·ϑ[δq] − δq·ϑ[δq̃] of the second-order sensitivity equation."""

    dq1: np.ndarray
    theta1: SpaceTimeField
    dq2: np.ndarray
    theta2: SpaceTimeField


class ForwardProblem:
    """Mesh + time grid + diffusion tensor with cached FEM operators."""

    def __init__(self, mesh: SpatialMesh, grid: TemporalGrid, tensor: DiffusionTensor | None = None):
        self.mesh = mesh
        self.grid = grid
        self.tensor = tensor if tensor is not None else DiffusionTensor(1.0)
        self.fem = FemOperators(mesh, self.tensor)
        self.weights: CaputoWeights = caputo_weights(grid)

    def stepping(self, q) -> "Stepping":
        return Stepping(self, q)


class Stepping:
    """Factorized L1 stepping operator for one coefficient field q."""

    def __init__(self, problem: ForwardProblem, q):
        qv = as_values(q)
        if isinstance(q, CoefficientField):
            q.validate()
        fem = problem.fem
        self.problem = problem
        self.q = qv
        self.reaction = fem.reaction(qv)
        c0 = problem.weights.factor
        self.system = (c0 * fem.mass + fem.stiffness + self.reaction).tocsc()
        interior = fem.mesh.interior
        self._interior = interior
        self._boundary = fem.mesh.boundary
        S_int = self.system[interior][:, interior]
        try:
            self._lu = spla.splu(S_int.tocsc())
        except RuntimeError as exc:  # singular factorization, defensive
            raise SolverError(f"system factorization failed: {exc}") from exc
        self._S_ib = self.system[interior][:, self._boundary].tocsr()
        self._mass = fem.mass.tocsr()

    # -- engine ---------------------------------------------------------------

    def _loop(self, loads_int: np.ndarray, bvals: np.ndarray | None = None) -> np.ndarray:
        """Run the stepping; loads_int has shape (nt, n_int, nrhs).

        ``bvals`` (nt+1, M) are pinned boundary values (zero elsewhere); when
        omitted, homogeneous Dirichlet data are used.
        """
        grid = self.problem.grid
        w = self.problem.weights
        nt = grid.nt
        M = self.problem.mesh.num_nodes
        nrhs = loads_int.shape[2]
        interior, boundary = self._interior, self._boundary
        c_hist = w.history_coeffs  # (nt-1,), coefficient of u^{n-k}
        c_init = w.initial_coeffs  # (nt,), coefficient of -u^0 at step n

        U = np.zeros((nt + 1, M, nrhs))
        if bvals is not None:
            U[0, boundary, :] = bvals[0, boundary, None]
        for n in range(1, nt + 1):
            if n > 1:
                hist = np.tensordot(c_hist[: n - 1], U[n - 1 : 0 : -1], axes=(0, 0))
            else:
                hist = np.zeros((M, nrhs))
            if bvals is not None:
                hist -= c_init[n - 1] * U[0]
            rhs = loads_int[n - 1] - (self._mass @ hist)[interior]
            if bvals is not None:
                rhs = rhs - self._S_ib @ bvals[n, boundary, None]
                U[n, boundary, :] = bvals[n, boundary, None]
            U[n, interior, :] = self._lu.solve(rhs)
        if not np.all(np.isfinite(U)):
            bad = np.argwhere(~np.isfinite(U))[0]
            raise SolverError(
                f"non-finite value at time level {bad[0]}, node {bad[1]} (nt={nt}, M={M})"
            )
        return U

    # -- load builders ----------------------------------------------------------

    def _loads_from_nodal(self, f: np.ndarray) -> np.ndarray:
        """Galerkin loads M·f^n for nodal source samples f of shape (nt+1, M)."""
        proj = (self._mass @ f[1:].T).T  # (nt, M)
        return proj[:, self._interior, None]

    def solve_separable(self, phis: np.ndarray, vs: np.ndarray) -> np.ndarray:
        """Batched direct solves for sources φ_c(x)·v_c(t), c = 1..nrhs.

        ``phis`` is (nrhs, M) and ``vs`` is (nt+1, nrhs); returns states of
        shape (nt+1, M, nrhs).
        """
        Mphi = (self._mass @ phis.T)[self._interior]  # (n_int, nrhs)
        loads = Mphi[None, :, :] * vs[1:, None, :]
        return self._loop(loads)

    def solve_reaction_sources(self, dqs: np.ndarray, bases: np.ndarray) -> np.ndarray:
        """Batched sensitivity solves with loads −R(δq_c)·u_c^n.

        ``dqs`` is (nrhs, M) or (M,) shared across columns; ``bases`` is
        (nt+1, M, nrhs).
        """
        nt = self.problem.grid.nt
        nrhs = bases.shape[2]
        dqs = np.atleast_2d(dqs)
        loads = np.empty((nt, len(self._interior), nrhs))
        fem = self.problem.fem
        if dqs.shape[0] == 1:
            R = fem.reaction(dqs[0])
            for n in range(1, nt + 1):
                loads[n - 1] = -(R @ bases[n])[self._interior]
        else:
            for c in range(nrhs):
                R = fem.reaction(dqs[c])
                loads[:, :, c] = -(R @ bases[1:, :, c].T).T[:, self._interior]
        return self._loop(loads)

    def dual_load_solve(self, loads: np.ndarray) -> np.ndarray:
        """Exact-transpose (adjoint) solve for dual loads.

        ``loads`` has shape (nt+1, M, nrhs); entry n is the dual vector paired
        with u^n in the functional being differentiated (level 0 is ignored —
        u⁰ is data, not an unknown). Returns Π with Σ_n Π^nᵀ f^n equal to the
        functional's value on the solution of the forward system with interior
        loads f, exactly.
        """
        rev = loads[:0:-1][:, self._interior, :]  # step j gets load g^{nt+1-j}
        return _flip_states(self._loop(rev))


def _flip_states(U: np.ndarray) -> np.ndarray:
    """Map reversed-time stepping output Ũ^j to physical indexing Π^n = Ũ^{nt+1-n}."""
    out = np.zeros_like(U)
    out[1:] = U[:0:-1]
    return out


def solve_tfde(
    mesh: SpatialMesh,
    grid: TemporalGrid,
    tensor: DiffusionTensor,
    q,
    source=None,
    dirichlet: np.ndarray | None = None,
    mode: str = "direct",
    problem: ForwardProblem | None = None,
) -> SpaceTimeField:
    """Solve one variant of the time-fractional diffusion problem.

    Parameters
    ----------
    source :
        ``SeparableSource``, ``ReactionSource``, ``SecondOrderSource``, a
        nodal array of shape (nt+1, M), or None (zero source).
    dirichlet : ndarray (nt+1, M), optional
        Boundary values in physical time; only allowed (and required to be
        meaningful) for ``mode="adjoint"``. Values off the boundary are
        ignored. Direct/sensitivity/second-order modes are homogeneous.
    mode : {"direct", "sensitivity", "second_order", "adjoint"}

    Returns
    -------
    SpaceTimeField indexed in physical time.
    """
    if problem is None or problem.mesh is not mesh or problem.grid is not grid:
        problem = ForwardProblem(mesh, grid, tensor)
    stepping = problem.stepping(q)
    nt, M = grid.nt, mesh.num_nodes

    if mode in ("direct", "sensitivity", "second_order"):
        if dirichlet is not None and np.abs(dirichlet).max() > 0:
            raise ValueError(f"mode {mode!r} requires homogeneous Dirichlet data")
        if source is None:
            U = np.zeros((nt + 1, M, 1))
        elif isinstance(source, SeparableSource):
            U = stepping.solve_separable(source.phi[None, :], source.v[:, None])
        elif isinstance(source, ReactionSource):
            U = stepping.solve_reaction_sources(
                as_values(source.dq)[None, :], source.base.values[:, :, None]
            )
        elif isinstance(source, SecondOrderSource):
            fem = problem.fem
            R1 = fem.reaction(as_values(source.dq1))
            R2 = fem.reaction(as_values(source.dq2))
            f = -(R2 @ source.theta1.values.T).T - (R1 @ source.theta2.values.T).T
            loads = f[1:, mesh.interior, None]
            U = stepping._loop(loads)
        else:
            f = np.asarray(source, dtype=float)
            if f.shape != (nt + 1, M):
                raise ValueError(f"nodal source must have shape ({nt + 1}, {M}), got {f.shape}")
            U = stepping._loop(stepping._loads_from_nodal(f))
        return SpaceTimeField(values=U[:, :, 0], tag=mode)

    if mode != "adjoint":
        raise ValueError(f"unknown mode {mode!r}")

    # Time-reversed adjoint problem with row-pinned boundary data: reverse the
    # data, run the same forward stepping, and re-index to physical time.
    if dirichlet is None:
        dirichlet = np.zeros((nt + 1, M))
    if dirichlet.shape != (nt + 1, M):
        raise ValueError(f"dirichlet data must have shape ({nt + 1}, {M})")
    bvals = dirichlet[::-1].copy()
    bmask = np.zeros(M, dtype=bool)
    bmask[mesh.boundary] = True
    bvals[:, ~bmask] = 0.0
    if source is None:
        loads = np.zeros((nt, len(mesh.interior), 1))
    else:
        f = np.asarray(source, dtype=float)[::-1]
        loads = stepping._loads_from_nodal(f)
    U = stepping._loop(loads, bvals=bvals)
    values = U[::-1, :, 0].copy()
    return SpaceTimeField(values=values, tag="adjoint", reversed_storage=False)
