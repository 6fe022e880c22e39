"""
Lagrange finite elements on simplicial meshes.

Degrees of freedom: mesh vertices for q=1, vertices followed by edge
midpoints for q=2. Bilinear forms are assembled element by element with
numpy and summed into scipy CSR matrices; projections and norms are built
on top of the assembled mass and stiffness matrices.
"""
import itertools
import logging
from functools import cached_property
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .exceptions import InvalidArgumentError, InvalidConfigError, LinearSolveError
from .mesh import Mesh, QuadratureRule, quadrature_rule

logger = logging.getLogger(__name__)

NORM_KINDS = ('L2', 'H1', 'H1-semi', 'Linf')

ScalarMap = Callable[[np.ndarray], np.ndarray]


def lagrange_basis(degree: int, barycentric: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Basis values and derivatives with respect to the barycentric coordinates"""
    npts, nbary = barycentric.shape
    if degree == 1:
        values = barycentric.copy()
        derivs = np.broadcast_to(np.eye(nbary), (npts, nbary, nbary)).copy()
        return values, derivs

    edges = list(itertools.combinations(range(nbary), 2))
    nloc = nbary + len(edges)
    values = np.empty((npts, nloc))
    derivs = np.zeros((npts, nloc, nbary))
    for i in range(nbary):
        lam = barycentric[:, i]
        values[:, i] = lam * (2.0 * lam - 1.0)
        derivs[:, i, i] = 4.0 * lam - 1.0
    for e, (i, j) in enumerate(edges, start=nbary):
        values[:, e] = 4.0 * barycentric[:, i] * barycentric[:, j]
        derivs[:, e, i] = 4.0 * barycentric[:, j]
        derivs[:, e, j] = 4.0 * barycentric[:, i]
    return values, derivs


class ElementTables:
    """Basis data of a function space at the points of one quadrature rule"""

    def __init__(self, space: 'FunctionSpace', rule: QuadratureRule):
        mesh = space.mesh
        self.rule = rule
        self.values, derivs = lagrange_basis(space.degree, rule.points)
        # (elements, points, local dofs, dim)
        self.gradients = np.einsum('qlk,ekd->eqld', derivs, mesh.barycentric_gradients)
        self.weights = np.abs(np.linalg.det(mesh.jacobians))[:, None] * rule.weights[None, :]
        self.points = np.einsum('qk,ekd->eqd', rule.points, mesh.nodes[mesh.elements])


class FunctionSpace:
    """Continuous Lagrange space V_h of degree 1 or 2 on a mesh"""

    def __init__(self, mesh: Mesh, degree: int = 1):
        if degree not in (1, 2):
            raise InvalidConfigError(f"element degree must be 1 or 2, got {degree!r}", key='mesh.degree')
        self.mesh = mesh
        self.degree = degree
        self._tables: Dict[int, ElementTables] = {}

        if degree == 1:
            self.cell_dofs = mesh.elements
            self.dof_points = mesh.nodes
        else:
            edges = mesh.edges
            self.cell_dofs = np.hstack([mesh.elements, mesh.num_nodes + mesh.element_edges])
            midpoints = 0.5 * (mesh.nodes[edges[:, 0]] + mesh.nodes[edges[:, 1]])
            self.dof_points = np.vstack([mesh.nodes, midpoints])

    @property
    def num_dofs(self) -> int:
        return len(self.dof_points)

    @property
    def num_local_dofs(self) -> int:
        return self.cell_dofs.shape[1]

    def tables(self, degree: int) -> ElementTables:
        """Element tables for a quadrature rule exact to the given degree"""
        degree = max(1, int(degree))
        if degree not in self._tables:
            self._tables[degree] = ElementTables(self, quadrature_rule(self.mesh.dim, degree))
        return self._tables[degree]

    @cached_property
    def mass_matrix(self) -> sparse.csr_matrix:
        return assemble_mass(self)

    @cached_property
    def stiffness_matrix(self) -> sparse.csr_matrix:
        return assemble_stiffness(self)

    @cached_property
    def mass_of_one(self) -> np.ndarray:
        """M·1, the vector of basis function integrals"""
        return self.mass_matrix @ np.ones(self.num_dofs)

    def is_compatible(self, other: 'FunctionSpace') -> bool:
        return self is other or (self.mesh is other.mesh and self.degree == other.degree)

    def __repr__(self) -> str:
        return f"FunctionSpace(P{self.degree}, dofs={self.num_dofs}, {self.mesh!r})"


class AnalyticField:
    """Pointwise-evaluable field with an optional analytic gradient"""

    def __init__(self, value: Callable[[np.ndarray], np.ndarray],
                 gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 name: str = ''):
        self._value = value
        self._gradient = gradient
        self.name = name

    def value(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        return np.broadcast_to(np.asarray(self._value(points), dtype=float), points.shape[:1]).copy()

    def gradient(self, points: np.ndarray) -> np.ndarray:
        if self._gradient is None:
            raise InvalidArgumentError(f"field {self.name or '<anonymous>'} has no gradient")
        points = np.atleast_2d(points)
        return np.asarray(self._gradient(points), dtype=float).reshape(points.shape)

    def __repr__(self) -> str:
        return f"AnalyticField({self.name!r})"


class FeFunction:
    """Element of V_h stored as its coefficient vector"""

    def __init__(self, space: FunctionSpace, coefficients: Optional[np.ndarray] = None):
        self.space = space
        if coefficients is None:
            coefficients = np.zeros(space.num_dofs)
        coefficients = np.asarray(coefficients, dtype=float)
        if coefficients.shape != (space.num_dofs,):
            raise InvalidArgumentError(
                f"expected {space.num_dofs} coefficients, got shape {coefficients.shape}")
        if not np.all(np.isfinite(coefficients)):
            raise InvalidArgumentError("coefficients must be finite")
        self.coefficients = coefficients

    @classmethod
    def constant(cls, space: FunctionSpace, value: float) -> 'FeFunction':
        return cls(space, np.full(space.num_dofs, float(value)))

    @property
    def mesh(self) -> Mesh:
        return self.space.mesh

    def _check_space(self, other: 'FeFunction') -> None:
        if not self.space.is_compatible(other.space):
            raise InvalidArgumentError("functions live on different spaces")

    def __add__(self, other: 'FeFunction') -> 'FeFunction':
        self._check_space(other)
        return FeFunction(self.space, self.coefficients + other.coefficients)

    def __sub__(self, other: 'FeFunction') -> 'FeFunction':
        self._check_space(other)
        return FeFunction(self.space, self.coefficients - other.coefficients)

    def __mul__(self, scalar: float) -> 'FeFunction':
        return FeFunction(self.space, float(scalar) * self.coefficients)

    __rmul__ = __mul__

    def __neg__(self) -> 'FeFunction':
        return FeFunction(self.space, -self.coefficients)

    def values_at_quadrature(self, degree: int) -> np.ndarray:
        """Values at the quadrature points of every element, shape (elements, points)"""
        tables = self.space.tables(degree)
        return self.coefficients[self.space.cell_dofs] @ tables.values.T

    def gradients_at_quadrature(self, degree: int) -> np.ndarray:
        tables = self.space.tables(degree)
        return np.einsum('el,eqld->eqd', self.coefficients[self.space.cell_dofs], tables.gradients)

    def value(self, points: np.ndarray) -> np.ndarray:
        """Point evaluation; points may lie anywhere in the meshed box"""
        elements, barycentric = self.mesh.locate(points)
        values, _ = lagrange_basis(self.space.degree, barycentric)
        return np.einsum('pl,pl->p', self.coefficients[self.space.cell_dofs[elements]], values)

    def gradient(self, points: np.ndarray) -> np.ndarray:
        elements, barycentric = self.mesh.locate(points)
        _, derivs = lagrange_basis(self.space.degree, barycentric)
        grads = np.einsum('plk,pkd->pld', derivs, self.mesh.barycentric_gradients[elements])
        return np.einsum('pl,pld->pd', self.coefficients[self.space.cell_dofs[elements]], grads)

    def __repr__(self) -> str:
        return f"FeFunction({self.space!r})"


Field = Union[AnalyticField, FeFunction]


def _to_csr(space: FunctionSpace, local: np.ndarray) -> sparse.csr_matrix:
    """Sum element matrices into a CSR matrix with sorted indices"""
    nloc = space.num_local_dofs
    rows = np.repeat(space.cell_dofs, nloc, axis=1).ravel()
    cols = np.tile(space.cell_dofs, (1, nloc)).ravel()
    matrix = sparse.coo_matrix((local.ravel(), (rows, cols)),
                               shape=(space.num_dofs, space.num_dofs)).tocsr()
    matrix.sum_duplicates()
    matrix.sort_indices()
    return matrix


def _weighted_mass(space: FunctionSpace, tables: ElementTables, coefficient: np.ndarray) -> sparse.csr_matrix:
    weights = tables.weights * coefficient
    local = np.einsum('eq,qi,qj->eij', weights, tables.values, tables.values)
    return _to_csr(space, local)


def assemble_mass(space: FunctionSpace) -> sparse.csr_matrix:
    """M_ij = <phi_j, phi_i>"""
    tables = space.tables(2 * space.degree)
    return _weighted_mass(space, tables, 1.0)


def assemble_stiffness(space: FunctionSpace) -> sparse.csr_matrix:
    """K_ij = <grad phi_j, grad phi_i> (pure Neumann, constants in the kernel)"""
    tables = space.tables(2 * space.degree)
    local = np.einsum('eq,eqid,eqjd->eij', tables.weights, tables.gradients, tables.gradients)
    return _to_csr(space, local)


def assemble_weighted_mass(u_ref: FeFunction, w: ScalarMap, w_degree: int = 1) -> sparse.csr_matrix:
    """W_ij = <w(u_ref) phi_j, phi_i>, with w composed with u_ref at quadrature points"""
    space = u_ref.space
    degree = 2 * space.degree + space.degree * w_degree
    coefficient = w(u_ref.values_at_quadrature(degree))
    return _weighted_mass(space, space.tables(degree), coefficient)


def assemble_nonlinear_load(u_ref: FeFunction, g: ScalarMap, g_degree: int) -> np.ndarray:
    """F_i = <g(u_ref), phi_i>"""
    space = u_ref.space
    degree = space.degree * g_degree + space.degree
    tables = space.tables(degree)
    integrand = tables.weights * g(u_ref.values_at_quadrature(degree))
    local = integrand @ tables.values
    return np.bincount(space.cell_dofs.ravel(), weights=local.ravel(), minlength=space.num_dofs)


def integrate_composed(u_ref: FeFunction, g: ScalarMap, g_degree: int) -> float:
    """Integral of g(u_h) over the domain"""
    degree = u_ref.space.degree * g_degree
    tables = u_ref.space.tables(degree)
    return float(np.sum(tables.weights * g(u_ref.values_at_quadrature(degree))))


def integrate_field(field: Field, g: ScalarMap, mesh: Mesh, degree: int) -> float:
    """Integral of g(v) for a pointwise field v, quadrature on the given mesh"""
    rule = quadrature_rule(mesh.dim, degree)
    points = np.einsum('qk,ekd->eqd', rule.points, mesh.nodes[mesh.elements])
    values = field.value(points.reshape(-1, mesh.dim)).reshape(points.shape[:2])
    weights = np.abs(np.linalg.det(mesh.jacobians))[:, None] * rule.weights[None, :]
    return float(np.sum(weights * g(values)))


def _field_degree(space: FunctionSpace, degree: Optional[int]) -> int:
    return degree if degree is not None else 2 * space.degree + 2


def assemble_field_load(field: Field, space: FunctionSpace, degree: Optional[int] = None) -> np.ndarray:
    """b_i = <v, phi_i>"""
    tables = space.tables(_field_degree(space, degree))
    values = field.value(tables.points.reshape(-1, space.mesh.dim)).reshape(tables.weights.shape)
    local = (tables.weights * values) @ tables.values
    return np.bincount(space.cell_dofs.ravel(), weights=local.ravel(), minlength=space.num_dofs)


def assemble_field_gradient_load(field: Field, space: FunctionSpace,
                                 degree: Optional[int] = None) -> np.ndarray:
    """b_i = <grad v, grad phi_i>"""
    tables = space.tables(_field_degree(space, degree))
    dim = space.mesh.dim
    grads = field.gradient(tables.points.reshape(-1, dim)).reshape(tables.points.shape)
    local = np.einsum('eq,eqd,eqld->el', tables.weights, grads, tables.gradients)
    return np.bincount(space.cell_dofs.ravel(), weights=local.ravel(), minlength=space.num_dofs)


def solve_sparse(matrix: sparse.spmatrix, rhs: np.ndarray, what: str = 'linear system') -> np.ndarray:
    """Sparse LU solve that reports singular or non-finite results as LinearSolveError"""
    try:
        solution = splu(sparse.csc_matrix(matrix)).solve(rhs)
    except RuntimeError as exc:
        raise LinearSolveError(f"{what}: {exc}") from exc
    if not np.all(np.isfinite(solution)):
        raise LinearSolveError(f"{what}: solution is not finite")
    return solution


def interpolate(field: Field, space: FunctionSpace) -> FeFunction:
    """Nodal interpolation at the degrees of freedom"""
    return FeFunction(space, field.value(space.dof_points))


def l2_projection(field: Field, space: FunctionSpace, degree: Optional[int] = None) -> FeFunction:
    """Pi_h v: <Pi_h v - v, chi> = 0 for all chi in V_h"""
    load = assemble_field_load(field, space, degree)
    return FeFunction(space, solve_sparse(space.mass_matrix, load, 'L2 projection'))


def ritz_projection(field: Field, space: FunctionSpace, degree: Optional[int] = None) -> FeFunction:
    """R_h v: energy-orthogonal projection with the mean of v

    The Neumann stiffness matrix is singular; the mean condition is added as
    one Lagrange multiplier row and column, 1^T M x = integral of v.
    """
    load = assemble_field_gradient_load(field, space, degree)
    mean_row = space.mass_of_one
    tables = space.tables(_field_degree(space, degree))
    values = field.value(tables.points.reshape(-1, space.mesh.dim)).reshape(tables.weights.shape)
    total = float(np.sum(tables.weights * values))

    column = sparse.csr_matrix(mean_row.reshape(-1, 1))
    saddle = sparse.bmat([[space.stiffness_matrix, column], [column.T, None]], format='csc')
    solution = solve_sparse(saddle, np.append(load, total), 'Ritz projection')
    return FeFunction(space, solution[:-1])


def norm(u: FeFunction, kind: str = 'L2') -> float:
    """Norm of a finite element function through the assembled M and K"""
    if kind not in NORM_KINDS:
        raise InvalidArgumentError(f"unknown norm {kind!r}; expected one of {NORM_KINDS}")
    c = u.coefficients
    if kind == 'Linf':
        sampled = u.values_at_quadrature(2 * u.space.degree)
        return float(max(np.abs(c).max(initial=0.0), np.abs(sampled).max(initial=0.0)))
    l2_sq = max(float(c @ (u.space.mass_matrix @ c)), 0.0)
    semi_sq = max(float(c @ (u.space.stiffness_matrix @ c)), 0.0)
    if kind == 'L2':
        return float(np.sqrt(l2_sq))
    if kind == 'H1-semi':
        return float(np.sqrt(semi_sq))
    return float(np.sqrt(l2_sq + semi_sq))


def norm_diff(u: FeFunction, field: Field, kind: str = 'L2', degree: Optional[int] = None) -> float:
    """Norm of u - v for a reference field v, evaluated by quadrature"""
    if kind not in NORM_KINDS:
        raise InvalidArgumentError(f"unknown norm {kind!r}; expected one of {NORM_KINDS}")
    space = u.space
    degree = _field_degree(space, degree)
    tables = space.tables(degree)
    dim = space.mesh.dim
    flat_points = tables.points.reshape(-1, dim)

    diff = u.values_at_quadrature(degree) - field.value(flat_points).reshape(tables.weights.shape)
    if kind == 'Linf':
        nodal = u.coefficients - field.value(space.dof_points)
        return float(max(np.abs(diff).max(initial=0.0), np.abs(nodal).max(initial=0.0)))

    l2_sq = float(np.sum(tables.weights * diff ** 2))
    if kind == 'L2':
        return float(np.sqrt(l2_sq))
    grad_diff = u.gradients_at_quadrature(degree) - field.gradient(flat_points).reshape(tables.points.shape)
    semi_sq = float(np.sum(tables.weights * np.sum(grad_diff ** 2, axis=2)))
    if kind == 'H1-semi':
        return float(np.sqrt(semi_sq))
    return float(np.sqrt(l2_sq + semi_sq))


def prolong(coarse: FeFunction, fine_mesh: Mesh) -> FeFunction:
    """Represent a coarse function exactly on the uniformly refined mesh"""
    coarse_mesh = coarse.mesh
    nested = (
        coarse_mesh.is_structured and fine_mesh.is_structured
        and coarse_mesh.dim == fine_mesh.dim
        and fine_mesh.resolution == 2 * coarse_mesh.resolution
        and np.array_equal(coarse_mesh.box[0], fine_mesh.box[0])
        and np.array_equal(coarse_mesh.box[1], fine_mesh.box[1])
    )
    if not nested:
        raise InvalidArgumentError("fine mesh is not the uniform refinement of the coarse mesh")
    fine_space = FunctionSpace(fine_mesh, coarse.space.degree)
    return FeFunction(fine_space, coarse.value(fine_space.dof_points))


def is_symmetric(matrix: sparse.spmatrix, tol: float = 1e-13) -> bool:
    """max|A - A^T| <= tol * max|A|"""
    scale = abs(matrix).max() if matrix.nnz else 0.0
    diff = matrix - matrix.T
    return (abs(diff).max() if diff.nnz else 0.0) <= tol * max(scale, np.finfo(float).tiny)
