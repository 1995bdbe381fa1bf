"""Finite element operators on the uniform meshes.

Linear segments (1D) and bilinear quadrilaterals (2D) with 2-point Gauss
quadrature per direction. That rule integrates products of up to three basis
functions exactly on affine elements, so one quadrature backbone — the sparse
node→Gauss interpolation matrix Q with weights W — yields mutually consistent
mass, stiffness, and coefficient-weighted reaction matrices:

    M = Qᵀ diag(W) Q,      R(q) = Qᵀ diag(W ⊙ Qq) Q,
    K = Σ_{k,l} Q_kᵀ diag(W ⊙ a_kl) Q_l.

R(q) is linear in the nodal values of q, and the dual pairing
``pair_dual(u, v)_m = uᵀ R(e_m) v`` reuses the same quadrature, which makes
coefficient-to-measurement derivative assemblies exact transposes of the
corresponding sensitivity solves.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import SpatialMesh

_GAUSS = np.array([-1.0, 1.0]) / np.sqrt(3.0)


class DiffusionTensor:
    """Symmetric diffusion coefficient matrix A(x) with ellipticity constant.

    Parameters
    ----------
    coeff : float, array, or callable
        A scalar c (meaning c·I), a constant (d, d) symmetric matrix, or a
        callable mapping an (npts, d) coordinate array to (npts, d, d) values.
    lambda0 : float
        Lower bound on the quadratic form; must be positive.
    """

    def __init__(self, coeff=1.0, lambda0: float = 1.0, dimension: int | None = None):
        if lambda0 <= 0:
            raise ValueError("ellipticity constant lambda0 must be positive")
        self.lambda0 = float(lambda0)
        self._coeff = coeff
        self._dimension = dimension

    def evaluate(self, points: np.ndarray) -> np.ndarray:
        """A at each point; returns (npts, d, d)."""
        points = np.atleast_2d(points)
        npts, d = points.shape
        if callable(self._coeff):
            vals = np.asarray(self._coeff(points), dtype=float)
            if vals.shape != (npts, d, d):
                raise ValueError(f"tensor callable returned shape {vals.shape}")
        elif np.isscalar(self._coeff):
            vals = np.broadcast_to(float(self._coeff) * np.eye(d), (npts, d, d)).copy()
        else:
            mat = np.asarray(self._coeff, dtype=float)
            if mat.shape != (d, d):
                raise ValueError(f"constant tensor must be ({d}, {d}), got {mat.shape}")
            vals = np.broadcast_to(mat, (npts, d, d)).copy()
        if not np.allclose(vals, np.swapaxes(vals, 1, 2), atol=1e-12):
            raise ValueError("diffusion tensor must be symmetric")
        return vals

    def spot_check_ellipticity(self, points: np.ndarray, n_dirs: int = 16, seed: int = 0) -> float:
        """Minimum of ξᵀAξ/|ξ|² over sample points and random directions."""
        vals = self.evaluate(points)
        d = vals.shape[1]
        rng = np.random.default_rng(seed)
        xi = rng.standard_normal((n_dirs, d))
        xi /= np.linalg.norm(xi, axis=1, keepdims=True)
        quad = np.einsum("nij,di,dj->nd", vals, xi, xi)
        qmin = float(quad.min())
        if qmin < self.lambda0 - 1e-12:
            raise ValueError(
                f"quadratic form minimum {qmin:.3e} violates lambda0={self.lambda0:.3e}"
            )
        return qmin


@dataclass
class CoefficientField:
    """Nodal coefficient values with box bounds [q_min, q_max]."""

    values: np.ndarray
    q_min: float = 0.0
    q_max: float = np.inf

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.q_min < 0:
            raise ValueError("q_min must be nonnegative")
        if self.q_max <= self.q_min:
            raise ValueError("q_max must exceed q_min")

    def clipped(self) -> "CoefficientField":
        return CoefficientField(np.clip(self.values, self.q_min, self.q_max), self.q_min, self.q_max)

    def validate(self):
        v = self.values
        if np.any(v < self.q_min - 1e-12) or np.any(v > self.q_max + 1e-12):
            raise ValueError("coefficient values violate the box bounds")


def as_values(q) -> np.ndarray:
    """Nodal values from a CoefficientField or a plain array."""
    if isinstance(q, CoefficientField):
        return q.values
    return np.asarray(q, dtype=float)


class FemOperators:
    """Assembled operators and quadrature machinery for one mesh + tensor."""

    def __init__(self, mesh: SpatialMesh, tensor: DiffusionTensor | None = None):
        self.mesh = mesh
        self.tensor = tensor if tensor is not None else DiffusionTensor(1.0)
        self._build_quadrature()
        self.mass = (self.Q.T @ sp.diags(self.W) @ self.Q).tocsc()
        self.stiffness = self._build_stiffness().tocsc()
        self.lumped = np.asarray(self.mass.sum(axis=1)).ravel()
        self._mass_lu = None

    # -- quadrature backbone -------------------------------------------------

    def _build_quadrature(self):
        mesh = self.mesh
        h = mesh.h
        elems = mesh.elements
        E = elems.shape[0]
        if mesh.dimension == 1:
            xi = _GAUSS
            shapes = np.column_stack([(1 - xi) / 2, (1 + xi) / 2])  # (nG, 2)
            dshapes = np.column_stack([np.full(2, -1.0 / h), np.full(2, 1.0 / h)])[None]
            grads = [np.broadcast_to(dshapes[0], (2, 2))]
            detw = np.full(2, h / 2.0)
            x0 = mesh.nodes[elems[:, 0], 0]
            gp = x0[:, None] + (xi[None, :] + 1.0) * (h / 2.0)
            self.gauss_points = gp.reshape(-1, 1)
        else:
            XI, ETA = np.meshgrid(_GAUSS, _GAUSS, indexing="ij")
            xi, eta = XI.ravel(), ETA.ravel()  # 4 points
            shapes = np.column_stack(
                [
                    (1 - xi) * (1 - eta) / 4,
                    (1 + xi) * (1 - eta) / 4,
                    (1 + xi) * (1 + eta) / 4,
                    (1 - xi) * (1 + eta) / 4,
                ]
            )
            dx = np.column_stack([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)]) / 4 * (2.0 / h)
            dy = np.column_stack([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)]) / 4 * (2.0 / h)
            grads = [dx, dy]
            detw = np.full(4, (h / 2.0) ** 2)
            corner = mesh.nodes[elems[:, 0]]  # (E, 2)
            gx = corner[:, 0][:, None] + (xi[None, :] + 1.0) * (h / 2.0)
            gy = corner[:, 1][:, None] + (eta[None, :] + 1.0) * (h / 2.0)
            self.gauss_points = np.column_stack([gx.reshape(-1), gy.reshape(-1)])

        nG, nloc = shapes.shape
        rows = np.repeat(np.arange(E * nG), nloc)
        cols = np.repeat(elems, nG, axis=0).reshape(E * nG, nloc).ravel()
        M = mesh.num_nodes

        def interp_matrix(vals_per_gauss):
            data = np.tile(vals_per_gauss, (E, 1)).ravel()
            return sp.csr_matrix((data, (rows, cols)), shape=(E * nG, M))

        self.Q = interp_matrix(shapes)
        self.Qgrad = [interp_matrix(g) for g in grads]
        self.W = np.tile(detw, E)

    def _build_stiffness(self):
        A = self.tensor.evaluate(self.gauss_points)  # (npts, d, d)
        d = self.mesh.dimension
        K = None
        for k in range(d):
            for l in range(d):
                part = self.Qgrad[k].T @ sp.diags(self.W * A[:, k, l]) @ self.Qgrad[l]
                K = part if K is None else K + part
        return K

    # -- assembled pieces ----------------------------------------------------

    def reaction(self, q) -> sp.csc_matrix:
        """Coefficient-weighted mass matrix R(q), linear in nodal q."""
        qv = as_values(q)
        if qv.shape != (self.mesh.num_nodes,):
            raise ValueError(
                f"coefficient has {qv.shape} values, mesh has {self.mesh.num_nodes} nodes"
            )
        return (self.Q.T @ sp.diags(self.W * (self.Q @ qv)) @ self.Q).tocsc()

    def pair_dual(self, U: np.ndarray, V: np.ndarray) -> np.ndarray:
        """Nodal dual vector G with G_m = Σ_n ∫ ψ_m u^n v^n dx.

        U, V may be (M,) single fields or (nt+1, M) space-time stacks; the
        result uses exactly the quadrature of :meth:`reaction`, so
        ``G @ dq == Σ_n u^nᵀ R(dq) v^n`` to round-off.
        """
        U = np.atleast_2d(U)
        V = np.atleast_2d(V)
        A = self.Q @ U.T  # (npts, n)
        B = self.Q @ V.T
        acc = np.einsum("gn,gn->g", A, B)
        return self.Q.T @ (self.W * acc)

    # -- norms and products ----------------------------------------------------

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        """L²(Ω) inner product of the FE interpolants."""
        return float(u @ (self.mass @ v))

    def norm_l2(self, u: np.ndarray) -> float:
        return float(np.sqrt(max(self.inner(u, u), 0.0)))

    def nodal_lr_power(self, u: np.ndarray, r: float) -> float:
        """∫ |u|^r dx by lumped (nodal) quadrature."""
        return float(self.lumped @ np.abs(u) ** r)

    def riesz(self, dual: np.ndarray) -> np.ndarray:
        """Solve M g = dual: the L² representative of a nodal dual vector."""
        if self._mass_lu is None:
            self._mass_lu = spla.splu(self.mass)
        return self._mass_lu.solve(dual)
