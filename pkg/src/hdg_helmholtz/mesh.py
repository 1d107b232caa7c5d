"""Structured triangular meshes of axis-aligned rectangles.

The unit square is split into ``N x N`` cells and every cell into a
lower-left and an upper-right triangle.  Besides vertices and elements the
mesh stores the facet (edge) skeleton: endpoints, owner elements, unit
normals and orientation signs.  Facet endpoints are stored in the traversal
order of the first owner, so the stored normal always points from the first
owner across the facet (outward on the boundary).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# local edges of a triangle (vertex index pairs, counterclockwise traversal)
LOCAL_EDGES = ((0, 1), (1, 2), (2, 0))


@dataclass(frozen=True)
class Mesh:
    """Triangular mesh with facet connectivity.

    Attributes
    ----------
    vertices : (nv, 2) float array
    elements : (ne, 3) int array
        Vertex ids per element, counterclockwise.
    facet_vertices : (nf, 2) int array
        Facet endpoints; the order fixes the facet parameterization
        ``x(t) = A + t (B - A)``, ``t in [0, 1]``.
    facet_owners : (nf, 2) int array
        Owning element ids; ``owners[f, 1] == -1`` on the boundary.
    facet_normals : (nf, 2) float array
        Unit normals pointing from ``owners[f, 0]`` across the facet.
    facet_lengths : (nf,) float array
    facet_boundary : (nf,) bool array
    elem_facets : (ne, 3) int array
        Global facet id of each local edge.
    elem_facet_signs : (ne, 3) int array
        ``+1`` where the element's outward normal equals the stored facet
        normal, ``-1`` where it is reversed.
    """

    vertices: np.ndarray
    elements: np.ndarray
    facet_vertices: np.ndarray
    facet_owners: np.ndarray
    facet_normals: np.ndarray
    facet_lengths: np.ndarray
    facet_boundary: np.ndarray
    elem_facets: np.ndarray
    elem_facet_signs: np.ndarray
    n_cells: int
    xlim: tuple[float, float]
    ylim: tuple[float, float]

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    @property
    def n_facets(self) -> int:
        return self.facet_vertices.shape[0]

    @property
    def h_max(self) -> float:
        """Largest facet length."""
        return float(self.facet_lengths.max())

    def element_coords(self, elem: int) -> np.ndarray:
        """Vertex coordinates of one element, shape (3, 2)."""
        return self.vertices[self.elements[elem]]

    def element_jacobian(self, elem: int) -> tuple[np.ndarray, np.ndarray]:
        """Affine map data ``x = v0 + J @ xi`` of one element."""
        coords = self.element_coords(elem)
        jac = np.column_stack((coords[1] - coords[0], coords[2] - coords[0]))
        return coords[0], jac

    def element_areas(self) -> np.ndarray:
        """Signed areas of all elements (positive for counterclockwise)."""
        coords = self.vertices[self.elements]
        d1 = coords[:, 1] - coords[:, 0]
        d2 = coords[:, 2] - coords[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def facet_geometry(self, facet: int) -> tuple[np.ndarray, float, np.ndarray]:
        """Return ``(unit normal, length, midpoint)`` of one facet."""
        ends = self.vertices[self.facet_vertices[facet]]
        return (
            self.facet_normals[facet].copy(),
            float(self.facet_lengths[facet]),
            0.5 * (ends[0] + ends[1]),
        )

    def facet_points(self, facet: int, t: np.ndarray) -> np.ndarray:
        """Physical points at facet parameters ``t``, shape (len(t), 2)."""
        a, b = self.vertices[self.facet_vertices[facet]]
        t = np.asarray(t, dtype=float)
        return a[None, :] + t[:, None] * (b - a)[None, :]

    def locate(self, points: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """Element id containing each point, or -1 outside the domain.

        Points on the cell diagonal are assigned to the lower triangle.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = self.n_cells
        dx = (self.xlim[1] - self.xlim[0]) / n
        dy = (self.ylim[1] - self.ylim[0]) / n
        sx = (points[:, 0] - self.xlim[0]) / dx
        sy = (points[:, 1] - self.ylim[0]) / dy
        inside = (sx >= -tol) & (sx <= n + tol) & (sy >= -tol) & (sy <= n + tol)
        i = np.clip(np.floor(sx).astype(int), 0, n - 1)
        j = np.clip(np.floor(sy).astype(int), 0, n - 1)
        upper = (sx - i) + (sy - j) > 1.0 + tol
        elems = 2 * (j * n + i) + upper.astype(int)
        return np.where(inside, elems, -1)

    def dump(self, stream) -> None:
        """Write a plain-text listing of vertices, elements and facets."""
        stream.write(f"mesh N={self.n_cells} xlim={self.xlim} ylim={self.ylim}\n")
        stream.write(f"vertices {self.n_vertices}\n")
        for k, (x, y) in enumerate(self.vertices):
            stream.write(f"  {k} {x:.12g} {y:.12g}\n")
        stream.write(f"elements {self.n_elements}\n")
        for k, verts in enumerate(self.elements):
            stream.write(f"  {k} {verts[0]} {verts[1]} {verts[2]}\n")
        stream.write(f"facets {self.n_facets}\n")
        for k in range(self.n_facets):
            a, b = self.facet_vertices[k]
            o0, o1 = self.facet_owners[k]
            tag = "boundary" if self.facet_boundary[k] else "interior"
            stream.write(f"  {k} {a} {b} owners {o0} {o1} {tag}\n")


def build_structured_mesh(
    n_cells: int,
    xlim: tuple[float, float] = (0.0, 1.0),
    ylim: tuple[float, float] = (0.0, 1.0),
) -> Mesh:
    """Build the N x N criss-cross triangulation of a rectangle.

    Each cell is split along its lower-left/upper-right diagonal, giving
    ``2 N^2`` counterclockwise triangles and ``3 N^2 + 2 N`` facets.

    Parameters
    ----------
    n_cells : int
        Cells per direction; must be positive.
    xlim, ylim : pair of float
        Domain bounds, default the unit square.
    """
    if n_cells < 1:
        raise ValueError(f"n_cells must be positive, got {n_cells}")
    if xlim[1] <= xlim[0] or ylim[1] <= ylim[0]:
        raise ValueError("domain bounds must be increasing")

    n = n_cells
    xs = np.linspace(xlim[0], xlim[1], n + 1)
    ys = np.linspace(ylim[0], ylim[1], n + 1)
    gx, gy = np.meshgrid(xs, ys)  # row j holds y = ys[j]
    vertices = np.column_stack((gx.ravel(), gy.ravel()))

    def vid(i, j):
        return j * (n + 1) + i

    elements = np.empty((2 * n * n, 3), dtype=int)
    k = 0
    for j in range(n):
        for i in range(n):
            elements[k] = (vid(i, j), vid(i + 1, j), vid(i, j + 1))
            elements[k + 1] = (vid(i + 1, j), vid(i + 1, j + 1), vid(i, j + 1))
            k += 2

    # facets keyed by sorted endpoints; endpoint order = first owner traversal
    facet_ids: dict[tuple[int, int], int] = {}
    facet_vertices = []
    owners = []
    elem_facets = np.empty((elements.shape[0], 3), dtype=int)
    elem_facet_signs = np.empty((elements.shape[0], 3), dtype=int)
    for e, verts in enumerate(elements):
        for loc, (la, lb) in enumerate(LOCAL_EDGES):
            a, b = int(verts[la]), int(verts[lb])
            key = (a, b) if a < b else (b, a)
            f = facet_ids.get(key)
            if f is None:
                f = len(facet_vertices)
                facet_ids[key] = f
                facet_vertices.append((a, b))
                owners.append([e, -1])
                sign = 1
            else:
                owners[f][1] = e
                sign = -1
            elem_facets[e, loc] = f
            elem_facet_signs[e, loc] = sign

    facet_vertices = np.asarray(facet_vertices, dtype=int)
    facet_owners = np.asarray(owners, dtype=int)
    tangents = vertices[facet_vertices[:, 1]] - vertices[facet_vertices[:, 0]]
    facet_lengths = np.hypot(tangents[:, 0], tangents[:, 1])
    facet_normals = np.column_stack((tangents[:, 1], -tangents[:, 0]))
    facet_normals /= facet_lengths[:, None]
    facet_boundary = facet_owners[:, 1] < 0

    return Mesh(
        vertices=vertices,
        elements=elements,
        facet_vertices=facet_vertices,
        facet_owners=facet_owners,
        facet_normals=facet_normals,
        facet_lengths=facet_lengths,
        facet_boundary=facet_boundary,
        elem_facets=elem_facets,
        elem_facet_signs=elem_facet_signs,
        n_cells=n,
        xlim=(float(xlim[0]), float(xlim[1])),
        ylim=(float(ylim[0]), float(ylim[1])),
    )
