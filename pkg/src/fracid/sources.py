"""Input source systems φ_j(x)·v_i(t) driving the forward problem.

Each source system carries N spatial basis functions φ_j and the two temporal
profiles v₁ = v and v₂ = D_t^α v, so the measurement matrix has 2N entries.
Bases:

* ``trig``: 1, cos(2πx), sin(2πx), cos(4πx), sin(4πx), …; in 2D tensor
  products of the 1D sequence ordered by total frequency.
* ``poly``: 1, x, x², …; in 2D graded monomials 1, x, y, x², xy, y², ….

The default temporal profile is v(t) = t, whose order-α Caputo derivative is
t^{1-α}/Γ(2-α) in closed form; a sampled v may be supplied instead, in which
case v₂ is produced by the discrete L1 operator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gamma

from .mesh import SpatialMesh
from .timefrac import TemporalGrid, caputo_apply


@dataclass(frozen=True)
class SourceSystem:
    """Spatial basis sampled at mesh nodes plus the two temporal profiles."""

    kind: str
    N: int
    phis: np.ndarray  # (N, M)
    v1: np.ndarray  # (nt+1,)
    v2: np.ndarray  # (nt+1,)
    labels: tuple[str, ...]

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("a source system needs at least one basis function")
        if self.v1[0] != 0.0:
            raise ValueError("temporal profile must satisfy v(0) = 0")

    def stacked(self) -> tuple[np.ndarray, np.ndarray]:
        """Columns for the 2N batched solves in stretched (i-major) order.

        Returns (phis_2n, v_2n) with shapes (2N, M) and (nt+1, 2N); column
        c = (i-1)·N + (j-1) drives φ_j·v_i.
        """
        phis_2n = np.vstack([self.phis, self.phis])
        v_2n = np.column_stack(
            [np.repeat(self.v1[:, None], self.N, axis=1), np.repeat(self.v2[:, None], self.N, axis=1)]
        )
        return phis_2n, v_2n


def _trig_sequence_1d(count: int):
    """First ``count`` functions of 1, cos(2πx), sin(2πx), cos(4πx), …"""
    funcs, labels, freqs = [], [], []
    funcs.append(lambda x: np.ones_like(x))
    labels.append("1")
    freqs.append(0)
    m = 1
    while len(funcs) < count:
        funcs.append(lambda x, m=m: np.cos(2 * np.pi * m * x))
        labels.append(f"cos(2pi*{m}x)")
        freqs.append(m)
        if len(funcs) < count:
            funcs.append(lambda x, m=m: np.sin(2 * np.pi * m * x))
            labels.append(f"sin(2pi*{m}x)")
            freqs.append(m)
        m += 1
    return funcs, labels, freqs


def _basis_values(mesh: SpatialMesh, kind: str, N: int):
    x = mesh.nodes[:, 0]
    if mesh.dimension == 1:
        if kind == "trig":
            funcs, labels, _ = _trig_sequence_1d(N)
            return np.vstack([f(x) for f in funcs]), tuple(labels)
        if kind == "poly":
            return np.vstack([x**j for j in range(N)]), tuple(f"x^{j}" for j in range(N))
        raise ValueError(f"unknown basis kind {kind!r}")

    y = mesh.nodes[:, 1]
    if kind == "trig":
        funcs, labels, freqs = _trig_sequence_1d(2 * N + 1)
        pairs = sorted(
            ((freqs[a] + freqs[b], a, b) for a in range(len(funcs)) for b in range(len(funcs))),
        )[:N]
        vals = np.vstack([funcs[a](x) * funcs[b](y) for _, a, b in pairs])
        labs = tuple(f"{labels[a]}(x)*{labels[b]}(y)" for _, a, b in pairs)
        return vals, labs
    if kind == "poly":
        pairs = []
        d = 0
        while len(pairs) < N:
            pairs.extend((d - i, i) for i in range(d + 1))
            d += 1
        pairs = pairs[:N]
        vals = np.vstack([x**a * y**b for a, b in pairs])
        return vals, tuple(f"x^{a} y^{b}" for a, b in pairs)
    raise ValueError(f"unknown basis kind {kind!r}")


def build_source_system(
    mesh: SpatialMesh,
    grid: TemporalGrid,
    kind: str = "trig",
    N: int = 5,
    v="linear",
) -> SourceSystem:
    """Assemble a source system on the given mesh and time grid.

    ``v`` is either the string ``"linear"`` (v(t) = t with the analytic
    fractional derivative) or an array/callable sampled on the grid, with
    v(0) = 0, fed through the discrete Caputo operator.
    """
    phis, labels = _basis_values(mesh, kind, N)
    t = grid.times
    if isinstance(v, str):
        if v != "linear":
            raise ValueError(f"unknown temporal profile {v!r}")
        v1 = t.copy()
        v2 = t ** (1.0 - grid.alpha) / gamma(2.0 - grid.alpha)
    else:
        v1 = np.asarray(v(t) if callable(v) else v, dtype=float)
        if v1.shape != t.shape:
            raise ValueError("sampled v must match the time grid")
        v2 = caputo_apply(v1, grid)
    return SourceSystem(kind=kind, N=N, phis=phis, v1=v1, v2=v2, labels=labels)
