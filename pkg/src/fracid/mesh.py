"""Uniform meshes on [0,1] and [0,1]² with labeled boundary segments.

1D meshes are chains of linear segment elements; 2D meshes are tensor grids of
bilinear quadrilaterals. Boundary segments carry the names used throughout the
package:

* 1D: ``left`` (x=0) and ``right`` (x=1), with aliases ``lambda0``/``lambda1``.
* 2D: ``bottom`` (y=0), ``right`` (x=1), ``top`` (y=1), ``left`` (x=0), with
  aliases ``lambda1``..``lambda4`` in that order.

Each segment lists the full closed edge, so 2D corner nodes belong to both
adjacent segments; segment-wise quadrature of a union of segments then matches
the integral over the union (the overlap has measure zero in the continuum).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_ALIASES_1D = {"lambda0": "left", "lambda1": "right"}
_ALIASES_2D = {"lambda1": "bottom", "lambda2": "right", "lambda3": "top", "lambda4": "left"}

# Outward unit normals of the axis-aligned segments.
_NORMALS = {
    1: {"left": np.array([-1.0]), "right": np.array([1.0])},
    2: {
        "bottom": np.array([0.0, -1.0]),
        "right": np.array([1.0, 0.0]),
        "top": np.array([0.0, 1.0]),
        "left": np.array([-1.0, 0.0]),
    },
}


@dataclass(frozen=True)
class SpatialMesh:
    """Uniform mesh of the unit interval or unit square.

    Attributes
    ----------
    dimension : int
        1 or 2.
    n : int
        Elements per side.
    nodes : ndarray, shape (M, dimension)
        Node coordinates; 1D nodes are ordered left to right, 2D nodes
        row-major with x varying fastest.
    elements : ndarray, shape (E, 2) or (E, 4)
        Node indices per element (2D quads counterclockwise).
    segments : dict[str, ndarray]
        Closed node index lists per boundary segment, ordered along the edge.
    """

    dimension: int
    n: int
    nodes: np.ndarray
    elements: np.ndarray
    segments: dict[str, np.ndarray]
    h: float
    interior: np.ndarray = field(repr=False)
    boundary: np.ndarray = field(repr=False)

    @property
    def num_nodes(self) -> int:
        return self.nodes.shape[0]

    def segment_names(self) -> tuple[str, ...]:
        return tuple(self.segments)

    def resolve_segments(self, spec) -> tuple[str, ...]:
        """Normalize a segment spec to canonical segment names.

        Accepts a name, an alias (``lambda0``..``lambda4``), ``"all"`` /
        ``"boundary"`` for the whole boundary, a ``+``-joined union, or an
        iterable of any of these.
        """
        if isinstance(spec, str):
            parts = [p.strip() for p in spec.split("+") if p.strip()]
        else:
            parts = [p for item in spec for p in self.resolve_segments(item)]
        aliases = _ALIASES_1D if self.dimension == 1 else _ALIASES_2D
        out: list[str] = []
        for p in parts:
            name = aliases.get(p.lower(), p.lower())
            if name in ("all", "boundary"):
                out.extend(self.segments)
                continue
            if name not in self.segments:
                raise ValueError(f"unknown boundary segment {p!r} for a {self.dimension}D mesh")
            out.append(name)
        if not out:
            raise ValueError("empty boundary segment specification")
        # stable de-dup
        seen: list[str] = []
        for name in out:
            if name not in seen:
                seen.append(name)
        return tuple(seen)

    def outward_normal(self, segment: str) -> np.ndarray:
        return _NORMALS[self.dimension][segment]


def build_mesh(dimension: int, elements_per_side: int) -> SpatialMesh:
    """Build a uniform mesh of [0,1] (1D) or [0,1]² (2D).

    Parameters
    ----------
    dimension : int
        1 or 2.
    elements_per_side : int
        Number of elements along each axis; must be at least 2.
    """
    n = int(elements_per_side)
    if dimension not in (1, 2):
        raise ValueError(f"dimension must be 1 or 2, got {dimension}")
    if n < 2:
        raise ValueError(f"elements_per_side must be >= 2, got {elements_per_side}")

    h = 1.0 / n
    if dimension == 1:
        nodes = np.linspace(0.0, 1.0, n + 1)[:, None]
        elements = np.column_stack([np.arange(n), np.arange(1, n + 1)])
        segments = {
            "left": np.array([0]),
            "right": np.array([n]),
        }
        boundary = np.array([0, n])
    else:
        coords = np.linspace(0.0, 1.0, n + 1)
        X, Y = np.meshgrid(coords, coords, indexing="xy")
        nodes = np.column_stack([X.ravel(), Y.ravel()])

        def idx(ix, iy):
            return iy * (n + 1) + ix

        ix, iy = np.meshgrid(np.arange(n), np.arange(n), indexing="xy")
        ix, iy = ix.ravel(), iy.ravel()
        elements = np.column_stack(
            [idx(ix, iy), idx(ix + 1, iy), idx(ix + 1, iy + 1), idx(ix, iy + 1)]
        )
        rng = np.arange(n + 1)
        segments = {
            "bottom": idx(rng, 0),
            "right": idx(n, rng),
            "top": idx(rng, n),
            "left": idx(0, rng),
        }
        boundary = np.unique(np.concatenate(list(segments.values())))

    interior = np.setdiff1d(np.arange(nodes.shape[0]), boundary)
    return SpatialMesh(
        dimension=dimension,
        n=n,
        nodes=nodes,
        elements=elements,
        segments=segments,
        h=h,
        interior=interior,
        boundary=boundary,
    )


def segment_quadrature_weights(mesh: SpatialMesh, segment: str) -> np.ndarray:
    """Spatial quadrature weights over one segment's node list.

    1D segments are single points (weight 1, point evaluation); 2D edges use
    the composite trapezoid rule along the edge.
    """
    nodes = mesh.segments[segment]
    if mesh.dimension == 1:
        return np.ones(len(nodes))
    w = np.full(len(nodes), mesh.h)
    w[0] = w[-1] = mesh.h / 2.0
    return w
