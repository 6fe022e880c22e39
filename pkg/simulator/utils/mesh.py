"""
Structured simplicial meshes of axis-aligned boxes and simplex quadrature.

Boxes are split into a uniform grid of n cells per axis; each cell is cut into
simplices with the Kuhn rule (one interval, two triangles along the main
diagonal, six tetrahedra). Doubling n with the same rule gives nested meshes,
which the cross-mesh error comparison of the rate studies relies on.
"""
import itertools
import math
from functools import cached_property
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import roots_jacobi

from .exceptions import InvalidArgumentError, InvalidConfigError

MAX_QUADRATURE_DEGREE = 12

# Smallest admissible signed volume, relative to the reference cell volume
_VOLUME_FLOOR = 1e-14


def _kuhn_template(dim: int) -> np.ndarray:
    """Vertex offsets of the Kuhn simplices of the unit cell, positively oriented"""
    simplices = []
    for perm in itertools.permutations(range(dim)):
        corner = np.zeros(dim, dtype=int)
        path = [corner.copy()]
        for axis in perm:
            corner[axis] = 1
            path.append(corner.copy())
        simplex = np.array(path)
        if dim > 1 and np.linalg.det((simplex[1:] - simplex[0]).astype(float)) < 0:
            simplex[[-2, -1]] = simplex[[-1, -2]]
        simplices.append(simplex)
    return np.array(simplices)


class QuadratureRule:
    """Quadrature rule on the reference simplex in barycentric coordinates"""

    def __init__(self, dim: int, degree: int, points: np.ndarray, weights: np.ndarray):
        self.dim = dim
        self.degree = degree
        self.points = points
        self.weights = weights
        self.points.setflags(write=False)
        self.weights.setflags(write=False)

    @property
    def num_points(self) -> int:
        return len(self.weights)

    @property
    def reference_volume(self) -> float:
        return 1.0 / math.factorial(self.dim)

    def __repr__(self) -> str:
        return f"QuadratureRule(dim={self.dim}, degree={self.degree}, points={self.num_points})"


def quadrature_rule(dim: int, degree: int) -> QuadratureRule:
    """Collapsed-coordinate Gauss-Jacobi rule exact for polynomials of the given degree"""
    if dim not in (1, 2, 3):
        raise InvalidConfigError(f"unsupported dimension {dim}", key='dim')
    if not isinstance(degree, (int, np.integer)) or not 1 <= degree <= MAX_QUADRATURE_DEGREE:
        raise InvalidConfigError(
            f"quadrature degree must be an integer in [1, {MAX_QUADRATURE_DEGREE}], got {degree}",
            key='degree')

    points_per_axis = degree // 2 + 1
    axis_nodes = []
    axis_weights = []
    for axis in range(dim):
        # The collapse x_i = t_i * prod_{j<i}(1 - t_j) has Jacobian prod_i (1 - t_i)^(dim-1-i)
        alpha = dim - 1 - axis
        nodes, weights = roots_jacobi(points_per_axis, alpha, 0.0)
        axis_nodes.append((nodes + 1.0) / 2.0)
        axis_weights.append(weights / 2.0 ** (alpha + 1))

    t = np.array(list(itertools.product(*axis_nodes)))
    w = np.prod(np.array(list(itertools.product(*axis_weights))), axis=1)

    x = np.empty_like(t)
    scale = np.ones(len(t))
    for axis in range(dim):
        x[:, axis] = t[:, axis] * scale
        scale = scale * (1.0 - t[:, axis])

    barycentric = np.column_stack([1.0 - x.sum(axis=1), x])
    return QuadratureRule(dim, int(degree), barycentric, w)


class Mesh:
    """Simplicial mesh; immutable after construction"""

    def __init__(self, dim: int, nodes: np.ndarray, elements: np.ndarray,
                 resolution: Optional[int] = None,
                 box: Optional[Tuple[np.ndarray, np.ndarray]] = None):
        self.dim = dim
        self.nodes = np.ascontiguousarray(nodes, dtype=float)
        self.elements = np.ascontiguousarray(elements, dtype=np.int64)
        self.resolution = resolution
        self.box = box
        self.nodes.setflags(write=False)
        self.elements.setflags(write=False)
        if self.nodes.shape[1] != dim or self.elements.shape[1] != dim + 1:
            raise InvalidArgumentError("node or element array does not match the mesh dimension")

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    @property
    def num_elements(self) -> int:
        return len(self.elements)

    @property
    def is_structured(self) -> bool:
        return self.resolution is not None and self.box is not None

    @property
    def simplices_per_cell(self) -> int:
        return math.factorial(self.dim)

    @cached_property
    def jacobians(self) -> np.ndarray:
        """Columns x_i - x_0 of each element map, shape (elements, dim, dim)"""
        coords = self.nodes[self.elements]
        return np.transpose(coords[:, 1:, :] - coords[:, :1, :], (0, 2, 1))

    @cached_property
    def signed_volumes(self) -> np.ndarray:
        return np.linalg.det(self.jacobians) / math.factorial(self.dim)

    @cached_property
    def volumes(self) -> np.ndarray:
        return np.abs(self.signed_volumes)

    @cached_property
    def inverse_jacobians(self) -> np.ndarray:
        return np.linalg.inv(self.jacobians)

    @cached_property
    def barycentric_gradients(self) -> np.ndarray:
        """Constant gradients of the barycentric coordinates, shape (elements, dim+1, dim)"""
        inv = self.inverse_jacobians
        grads = np.empty((self.num_elements, self.dim + 1, self.dim))
        grads[:, 1:, :] = inv
        grads[:, 0, :] = -inv.sum(axis=1)
        return grads

    @cached_property
    def _edge_table(self) -> Tuple[np.ndarray, np.ndarray]:
        local = list(itertools.combinations(range(self.dim + 1), 2))
        pairs = np.sort(self.elements[:, local].reshape(-1, 2), axis=1)
        edges, inverse = np.unique(pairs, axis=0, return_inverse=True)
        return edges, inverse.reshape(self.num_elements, len(local))

    @property
    def edges(self) -> np.ndarray:
        """Unique sorted vertex pairs, lexicographically ordered"""
        return self._edge_table[0]

    @property
    def element_edges(self) -> np.ndarray:
        """Edge index of every local vertex pair, pairs in itertools.combinations order"""
        return self._edge_table[1]

    @cached_property
    def diameters(self) -> np.ndarray:
        coords = self.nodes[self.elements]
        lengths = [np.linalg.norm(coords[:, i] - coords[:, j], axis=1)
                   for i, j in itertools.combinations(range(self.dim + 1), 2)]
        return np.max(np.stack(lengths, axis=1), axis=1)

    @property
    def h_max(self) -> float:
        return float(self.diameters.max())

    @property
    def domain_volume(self) -> float:
        if self.box is None:
            return float(self.volumes.sum())
        lower, upper = self.box
        return float(np.prod(upper - lower))

    def locate(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Find a containing element and barycentric coordinates for each point"""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        if self.is_structured:
            lower, upper = self.box
            spacing = (upper - lower) / self.resolution
            cell_index = np.floor((points - lower) / spacing).astype(np.int64)
            cell_index = np.clip(cell_index, 0, self.resolution - 1)
            cell = np.ravel_multi_index(tuple(cell_index.T), (self.resolution,) * self.dim)
            candidates = cell[:, None] * self.simplices_per_cell + np.arange(self.simplices_per_cell)
        else:
            candidates = np.broadcast_to(np.arange(self.num_elements), (len(points), self.num_elements))

        origin = self.nodes[self.elements[candidates, 0]]
        local = np.einsum('pkij,pkj->pki', self.inverse_jacobians[candidates], points[:, None, :] - origin)
        barycentric = np.concatenate([1.0 - local.sum(axis=2, keepdims=True), local], axis=2)
        best = np.argmax(barycentric.min(axis=2), axis=1)
        rows = np.arange(len(points))
        if barycentric[rows, best].min(initial=0.0) < -1e-10:
            raise InvalidArgumentError("point outside the meshed domain")
        return candidates[rows, best], barycentric[rows, best]

    def __repr__(self) -> str:
        return (f"Mesh(dim={self.dim}, nodes={self.num_nodes}, elements={self.num_elements}, "
                f"resolution={self.resolution})")


def _normalize_box(box: Sequence, dim: Optional[int]) -> Tuple[np.ndarray, np.ndarray]:
    """Accept [(min, max), ...] per axis and return (lower, upper) arrays"""
    try:
        pairs = np.asarray(box, dtype=float).reshape(-1, 2)
    except (TypeError, ValueError):
        raise InvalidConfigError(f"cannot read box {box!r}", key='domain')
    if dim is None:
        dim = len(pairs)
    if len(pairs) != dim or dim not in (1, 2, 3):
        raise InvalidConfigError(f"box {box!r} does not describe a {dim}-dimensional domain", key='domain')
    lower, upper = pairs[:, 0].copy(), pairs[:, 1].copy()
    if not np.all(np.isfinite(pairs)) or np.any(upper <= lower):
        raise InvalidConfigError(f"degenerate box {box!r}", key='domain')
    return lower, upper


def build_box_mesh(box: Sequence, n: int, dim: Optional[int] = None) -> Mesh:
    """Structured Kuhn mesh of a box with n cells per axis"""
    lower, upper = _normalize_box(box, dim)
    dim = len(lower)
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidConfigError(f"cells per axis must be a positive integer, got {n!r}", key='mesh.n')
    n = int(n)

    axes: List[np.ndarray] = []
    for lo, hi in zip(lower, upper):
        # Same arithmetic at every level so coarse coordinates reappear bit-for-bit
        coords = lo + ((hi - lo) * np.arange(n + 1)) / n
        coords[-1] = hi
        axes.append(coords)
    nodes = np.stack(np.meshgrid(*axes, indexing='ij'), axis=-1).reshape(-1, dim)

    origins = np.stack(np.meshgrid(*[np.arange(n)] * dim, indexing='ij'), axis=-1).reshape(-1, dim)
    template = _kuhn_template(dim)
    corners = origins[:, None, None, :] + template[None, :, :, :]
    elements = np.ravel_multi_index(tuple(np.moveaxis(corners, -1, 0)), (n + 1,) * dim)
    elements = elements.reshape(-1, dim + 1)

    mesh = Mesh(dim, nodes, elements, resolution=n, box=(lower, upper))
    cell_volume = np.prod((upper - lower) / n)
    if np.any(mesh.signed_volumes <= _VOLUME_FLOOR * cell_volume):
        raise InvalidConfigError("mesh generation produced a degenerate element", key='domain')
    return mesh


def refine_uniform(mesh: Mesh) -> Mesh:
    """Double the resolution with the same construction rule"""
    if not mesh.is_structured:
        raise InvalidArgumentError("only structured box meshes can be refined uniformly")
    lower, upper = mesh.box
    return build_box_mesh(np.column_stack([lower, upper]), 2 * mesh.resolution)
