"""Conormal boundary-flux extraction by one-sided finite differences.

The flux ∂u/∂ν_A = Σ_{k,l} a_kl ∂u/∂x_k ν_l is sampled at boundary nodes from
the nodal solution: the normal derivative by a second-order one-sided
difference into the domain, and (for tensors with off-diagonal entries) the
tangential derivative by a centered difference along the edge, one-sided at
its ends. Both stencils are exact for fields that are quadratic along the
differencing direction.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .fem import DiffusionTensor
from .mesh import SpatialMesh


def _node_grid_index(mesh: SpatialMesh, node: int) -> tuple[int, int]:
    return node % (mesh.n + 1), node // (mesh.n + 1)


def flux_matrix(mesh: SpatialMesh, tensor: DiffusionTensor, segment: str) -> sp.csr_matrix:
    """Sparse operator mapping nodal values to conormal flux on one segment.

    Row r corresponds to the r-th node of ``mesh.segments[segment]``.
    """
    if segment not in mesh.segments:
        raise ValueError(f"segment {segment!r} is not a boundary segment of this mesh")
    nodes = mesh.segments[segment]
    normal = mesh.outward_normal(segment)
    h = mesh.h
    n = mesh.n
    A = tensor.evaluate(mesh.nodes[nodes])  # (nb, d, d)
    conormal = np.einsum("bkl,l->bk", A, normal)  # coefficient of ∂u/∂x_k per node

    rows, cols, vals = [], [], []

    def add(r, idxs, coefs, scale):
        if scale == 0.0:
            return
        for i, c in zip(idxs, coefs):
            rows.append(r)
            cols.append(i)
            vals.append(scale * c / (2.0 * h))

    axis = int(np.argmax(np.abs(normal)))
    sign = float(np.sign(normal[axis]))
    stride_x, stride_y = 1, n + 1

    for r, b in enumerate(nodes):
        if mesh.dimension == 1:
            st = stride_x
            add(r, [b, b - int(sign) * st, b - 2 * int(sign) * st], sign * np.array([3.0, -4.0, 1.0]), conormal[r, 0])
            continue
        strides = (stride_x, stride_y)
        st_n = strides[axis]
        # normal derivative, one-sided into the domain
        add(
            r,
            [b, b - int(sign) * st_n, b - 2 * int(sign) * st_n],
            sign * np.array([3.0, -4.0, 1.0]),
            conormal[r, axis],
        )
        # tangential derivative along the edge
        t_axis = 1 - axis
        coef_t = conormal[r, t_axis]
        if coef_t != 0.0:
            st_t = strides[t_axis]
            pos = _node_grid_index(mesh, b)[t_axis]
            if 0 < pos < n:
                add(r, [b + st_t, b - st_t], np.array([1.0, -1.0]), coef_t)
            elif pos == 0:
                add(r, [b, b + st_t, b + 2 * st_t], np.array([-3.0, 4.0, -1.0]), coef_t)
            else:
                add(r, [b, b - st_t, b - 2 * st_t], np.array([3.0, -4.0, 1.0]), coef_t)

    E = sp.csr_matrix(
        (np.array(vals), (np.array(rows, dtype=int), np.array(cols, dtype=int))),
        shape=(len(nodes), mesh.num_nodes),
    )
    E.sum_duplicates()
    return E


def boundary_flux(field, mesh: SpatialMesh, tensor: DiffusionTensor, segment: str) -> np.ndarray:
    """Conormal flux trace of a space-time field on one boundary segment.

    Parameters
    ----------
    field : SpaceTimeField
        Must carry tag ``direct`` or ``sensitivity``.

    Returns
    -------
    ndarray, shape (n_segment_nodes, nt+1)
    """
    if field.tag not in ("direct", "sensitivity", "second_order"):
        raise ValueError(f"flux traces are defined for state-like fields, got tag {field.tag!r}")
    E = flux_matrix(mesh, tensor, segment)
    return E @ field.values.T
