"""
Lagrange quadrilateral elements on the adaptive forest: quadrature, residual
and tangent assembly with SIMP interpolation, constraint condensation and the
Newton-Raphson solution of the hyperelastic state problem.
"""
import logging

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from adaptopt.errors import InvalidArgumentError, InvertedElementError, PreconditionError, SolverFailure
from adaptopt.models.mechanics import (
    Kinematics, StressState, linear_energy, linear_stress, linear_tangent, material_tangent, piola_stress,
    strain_energy
)
from adaptopt.models.mesh import BOTTOM, LEFT, RIGHT, TOP, ConstraintSet, NodeLayout, build_hanging_constraints
from adaptopt.utils.logging_config import log_performance

logger = logging.getLogger(__name__)

NEWTON_MAX_ITERATIONS = 50
NEWTON_RTOL = 1e-9
NEWTON_ATOL = 1e-12
LINE_SEARCH_MAX_HALVINGS = 12
MAX_LOAD_BISECTIONS = 6
ARMIJO_C = 1e-4

# Below VOID_THRESHOLD a cell blends over to the small-strain response
VOID_THRESHOLD = 0.1
VOID_SHARPNESS = 50.0


# ----------------------------------------------------------------------
# reference element
# ----------------------------------------------------------------------
def lagrange_1d(degree, t):
    """Values and derivatives of the equispaced 1D basis on [-1, 1]"""
    t = np.atleast_1d(np.asarray(t, dtype=float))
    nodes = np.linspace(-1.0, 1.0, degree + 1)
    values = np.ones((t.size, degree + 1))
    derivs = np.zeros((t.size, degree + 1))
    for m in range(degree + 1):
        others = [k for k in range(degree + 1) if k != m]
        denom = np.prod([nodes[m] - nodes[k] for k in others])
        for k in others:
            values[:, m] *= t - nodes[k]
        for skip in others:
            term = np.ones(t.size)
            for k in others:
                if k != skip:
                    term *= t - nodes[k]
            derivs[:, m] += term
        values[:, m] /= denom
        derivs[:, m] /= denom
    return values, derivs


def shape_eval(xi, degree=2):
    """Tensor-product Lagrange basis at reference points in [-1, 1]^2

    Local node a + (degree+1)*b sits at (-1 + 2a/degree, -1 + 2b/degree).
    A single point returns arrays of shape (n,) and (n, 2); a stack of
    points returns (m, n) and (m, n, 2).
    """
    xi = np.asarray(xi, dtype=float)
    single = xi.ndim == 1
    xi = np.atleast_2d(xi)
    lx, dlx = lagrange_1d(degree, xi[:, 0])
    ly, dly = lagrange_1d(degree, xi[:, 1])

    values = np.einsum('pb,pa->pba', ly, lx).reshape(len(xi), -1)
    grads = np.stack([
        np.einsum('pb,pa->pba', ly, dlx).reshape(len(xi), -1),
        np.einsum('pb,pa->pba', dly, lx).reshape(len(xi), -1),
    ], axis=-1)

    if single:
        return values[0], grads[0]
    return values, grads


def gauss_rule(order=3):
    """Tensor Gauss-Legendre points (qx + order*qy ordering) and weights"""
    points, weights = np.polynomial.legendre.leggauss(order)
    px, py = np.meshgrid(points, points)
    wx, wy = np.meshgrid(weights, weights)
    return np.column_stack([px.ravel(), py.ravel()]), (wx * wy).ravel()


class ReferenceElement:
    def __init__(self, degree=2, order=3):
        self.degree = degree
        self.points, self.weights = gauss_rule(order)
        self.N, self.dN = shape_eval(self.points, degree)

    def __repr__(self):
        return f'<ReferenceElement degree={self.degree} points={len(self.weights)}>'


# ----------------------------------------------------------------------
# boundary conditions
# ----------------------------------------------------------------------
class BoundarySegment:
    """Part of the line x = position (axis 'x') or y = position (axis 'y')"""

    def __init__(self, axis, position, lo, hi):
        if axis not in ('x', 'y'):
            raise InvalidArgumentError(f"segment axis must be 'x' or 'y', got {axis}")
        if hi <= lo:
            raise InvalidArgumentError(f'empty boundary segment [{lo}, {hi}]')
        self.axis = axis
        self.position = float(position)
        self.lo = float(lo)
        self.hi = float(hi)

    def face_span(self, bounds, direction, tol):
        """Tangential span of a cell face when it lies on this segment's line"""
        x0, y0, hx, hy = bounds
        if direction in (LEFT, RIGHT):
            if self.axis != 'x':
                return None
            line = x0 if direction == LEFT else x0 + hx
            span = (y0, y0 + hy)
        else:
            if self.axis != 'y':
                return None
            line = y0 if direction == BOTTOM else y0 + hy
            span = (x0, x0 + hx)
        if abs(line - self.position) > tol:
            return None
        return span

    def overlaps(self, other):
        return (self.axis == other.axis and abs(self.position - other.position) < 1e-12
                and min(self.hi, other.hi) > max(self.lo, other.lo))

    def to_dict(self):
        return {'axis': self.axis, 'position': self.position, 'interval': [self.lo, self.hi]}

    def __repr__(self):
        return f'<BoundarySegment {self.axis}={self.position} [{self.lo}, {self.hi}]>'


class DirichletCondition:
    """Prescribed displacement components on a boundary segment

    `values` is a tuple of constants (one per component) or a callable
    taking nodal coordinates (m, 2) and returning (m, 2) displacements.
    """

    def __init__(self, segment, components=(0, 1), values=(0.0, 0.0), name='dirichlet'):
        self.segment = segment
        self.components = tuple(components)
        self.values = values
        self.name = name

    def evaluate(self, coords):
        if callable(self.values):
            return np.asarray(self.values(coords), dtype=float).reshape(len(coords), 2)
        return np.tile(np.asarray(self.values, dtype=float), (len(coords), 1))

    def to_dict(self):
        return {'name': self.name, 'segment': self.segment.to_dict(), 'components': list(self.components)}


class TractionLoad:
    """Constant traction vector (force per unit length) on a boundary segment"""

    def __init__(self, segment, vector, name='traction'):
        self.segment = segment
        self.vector = np.asarray(vector, dtype=float)
        self.name = name

    def to_dict(self):
        return {'name': self.name, 'segment': self.segment.to_dict(), 'vector': self.vector.tolist()}


def face_reference_points(direction, t):
    """Reference coordinates of points with face parameter t in [-1, 1]"""
    fixed = {LEFT: (0, -1.0), RIGHT: (0, 1.0), BOTTOM: (1, -1.0), TOP: (1, 1.0)}[direction]
    points = np.empty((len(t), 2))
    points[:, fixed[0]] = fixed[1]
    points[:, 1 - fixed[0]] = t
    return points


# ----------------------------------------------------------------------
# state problem
# ----------------------------------------------------------------------
class StateProblem:
    """Hyperelastic state problem on the active cells of a forest"""

    def __init__(self, forest, material, dirichlet=(), tractions=(), degree=2,
                 simp_exponent=3.0, rho_min=1e-6, void_threshold=VOID_THRESHOLD,
                 void_sharpness=VOID_SHARPNESS):
        if not 0 <= void_threshold < 1:
            raise InvalidArgumentError(f'void threshold must lie in [0, 1), got {void_threshold}')
        if void_sharpness <= 0:
            raise InvalidArgumentError(f'void sharpness must be positive, got {void_sharpness}')
        self.forest = forest
        self.material = material
        self.dirichlet = list(dirichlet)
        self.tractions = list(tractions)
        self.degree = degree
        self.simp_exponent = float(simp_exponent)
        self.rho_min = float(rho_min)
        self.void_threshold = float(void_threshold)
        self.void_sharpness = float(void_sharpness)
        self.reference = ReferenceElement(degree)

        for bc in self.dirichlet:
            for load in self.tractions:
                if bc.segment.overlaps(load.segment):
                    raise InvalidArgumentError(f'Dirichlet segment {bc.name} overlaps traction {load.name}')

        self.rebuild()

    def rebuild(self):
        """Recompute numbering, geometry, constraints and loads for the current forest"""
        forest = self.forest
        self.layout = NodeLayout(forest, self.degree, components=2)
        self.dofs = self.layout.cell_dofs()
        self.geometry = forest.geometry()
        self.tol = 1e-9 * max(forest.width, forest.height)

        hx = self.geometry[:, 2]
        hy = self.geometry[:, 3]
        scale = np.column_stack([2.0 / hx, 2.0 / hy])
        self.G = self.reference.dN[None, :, :, :] * scale[:, None, None, :]
        self.detJ = 0.25 * hx * hy
        self.wdet = self.reference.weights[None, :] * self.detJ[:, None]

        self.constraints = build_hanging_constraints(forest, self.layout)
        self.constraints.merge(self._dirichlet_constraints()).close()
        self.C, self.g, self.free = self.constraints.condense(self.n_dofs)
        self.f_ext = self._traction_vector()
        self.rho_hat = np.ones(forest.n_active)

        logger.debug(f"State problem rebuilt: {forest.n_active} cells, {self.n_dofs} dofs, "
                     f"{len(self.constraints)} constraints")

    @property
    def n_dofs(self):
        return self.layout.n_dofs

    @property
    def n_cells(self):
        return len(self.dofs)

    def _boundary_nodes_on(self, segment):
        nodes = set()
        axis = 1 if segment.axis == 'x' else 0
        for cell, direction in self.layout.boundary_faces:
            if segment.face_span(self.geometry[cell], direction, self.tol) is None:
                continue
            for node in self.layout.face_nodes(cell, direction):
                t = self.layout.coords[node, axis]
                if segment.lo - self.tol <= t <= segment.hi + self.tol:
                    nodes.add(int(node))
        return sorted(nodes)

    def _dirichlet_constraints(self):
        constraints = ConstraintSet()
        for bc in self.dirichlet:
            nodes = self._boundary_nodes_on(bc.segment)
            if not nodes:
                continue
            values = bc.evaluate(self.layout.coords[nodes])
            for node, value in zip(nodes, values):
                for comp in bc.components:
                    constraints.add(2 * node + comp, (), value[comp])
        return constraints

    def dirichlet_dofs(self, name=None):
        dofs = []
        for bc in self.dirichlet:
            if name is not None and bc.name != name:
                continue
            for node in self._boundary_nodes_on(bc.segment):
                dofs.extend(2 * node + comp for comp in bc.components)
        return sorted(set(dofs))

    def support_nodes(self):
        """Nodes lying on a Dirichlet or a traction segment"""
        nodes = set()
        for segment in [bc.segment for bc in self.dirichlet] + [load.segment for load in self.tractions]:
            nodes.update(self._boundary_nodes_on(segment))
        return sorted(nodes)

    def _traction_vector(self):
        f = np.zeros(self.n_dofs)
        points, weights = np.polynomial.legendre.leggauss(3)
        for load in self.tractions:
            for cell, direction in self.layout.boundary_faces:
                bounds = self.geometry[cell]
                span = load.segment.face_span(bounds, direction, self.tol)
                if span is None:
                    continue
                a = max(span[0], load.segment.lo)
                b = min(span[1], load.segment.hi)
                if b - a <= self.tol:
                    continue
                s = 0.5 * (a + b) + 0.5 * (b - a) * points
                t = 2.0 * (s - span[0]) / (span[1] - span[0]) - 1.0
                N, _ = shape_eval(face_reference_points(direction, t), self.degree)
                nodal = (0.5 * (b - a) * weights) @ N
                cell_nodes = self.layout.cell_nodes[cell]
                np.add.at(f, 2 * cell_nodes, nodal * load.vector[0])
                np.add.at(f, 2 * cell_nodes + 1, nodal * load.vector[1])
        return f

    def set_density(self, rho_hat):
        rho_hat = np.asarray(rho_hat, dtype=float)
        if rho_hat.shape != (self.n_cells,):
            raise PreconditionError(f'density has shape {rho_hat.shape}, expected ({self.n_cells},)')
        if np.any(rho_hat < -1e-12) or np.any(rho_hat > 1 + 1e-12):
            raise InvalidArgumentError('projected density must lie in [0, 1]')
        self.rho_hat = np.clip(rho_hat, 0.0, 1.0)

    def stiffness_scale(self, rho_hat=None):
        """SIMP factor g = rho_min + (1 - rho_min) rho^q and its derivative"""
        rho = self.rho_hat if rho_hat is None else rho_hat
        q = self.simp_exponent
        g = self.rho_min + (1.0 - self.rho_min) * rho ** q
        dg = (1.0 - self.rho_min) * q * rho ** (q - 1.0)
        return g, dg

    def interpolation_weight(self, rho_hat=None):
        """Blend factor gamma in [0, 1] between small-strain (0) and finite-strain (1) response, and d gamma / d rho"""
        rho = self.rho_hat if rho_hat is None else np.asarray(rho_hat, dtype=float)
        if self.void_threshold <= 0:
            return np.ones_like(rho), np.zeros_like(rho)
        b = self.void_sharpness
        r0 = self.void_threshold
        denom = np.tanh(b * r0) + np.tanh(b * (1.0 - r0))
        t = np.tanh(b * (rho - r0))
        return (np.tanh(b * r0) + t) / denom, b * (1.0 - t ** 2) / denom

    def displacement_gradient(self, u):
        ue = u[self.dofs].reshape(self.n_cells, -1, 2)
        return np.einsum('cai,cqaJ->cqiJ', ue, self.G)

    def deformation_gradient(self, u):
        return np.eye(2) + self.displacement_gradient(u)

    def effective_gradient(self, u):
        """I + gamma H, the finite-strain kinematics each cell actually carries"""
        gamma, _ = self.interpolation_weight()
        return np.eye(2) + gamma[:, None, None, None] * self.displacement_gradient(u)

    def to_dict(self):
        return {
            'cells': self.n_cells,
            'dofs': self.n_dofs,
            'degree': self.degree,
            'simp_exponent': self.simp_exponent,
            'rho_min': self.rho_min,
            'void_threshold': self.void_threshold,
            'void_sharpness': self.void_sharpness
        }

    def __repr__(self):
        return f'<StateProblem cells={self.n_cells} dofs={self.n_dofs} degree={self.degree}>'


class CellResponse:
    """Quadrature-point response of every cell before SIMP scaling

    The energy density is W(I + gamma H) + (1 - gamma^2) W_lin(H): solid
    cells (gamma = 1) are pure Neo-Hookean, near-void cells follow the
    small-strain model and keep a positive definite tangent under any
    displacement of their neighbours.
    """

    def __init__(self, state, u):
        self.material = state.material
        self.H = state.displacement_gradient(np.asarray(u, dtype=float))
        self.gamma, self.dgamma = state.interpolation_weight()
        gm = self.gamma[:, None, None, None]
        self.kinematics = Kinematics(np.eye(2) + gm * self.H)
        self.P_solid = piola_stress(self.kinematics, self.material)
        self.sigma_lin = linear_stress(self.H, self.material)
        self.P = gm * self.P_solid + (1.0 - gm ** 2) * self.sigma_lin

    def energy(self):
        blend = 1.0 - self.gamma[:, None] ** 2
        return strain_energy(self.kinematics, self.material) + blend * linear_energy(self.H, self.material)

    def tangent(self):
        gm = self.gamma[:, None, None, None, None, None]
        A = material_tangent(self.kinematics, self.material)
        return gm ** 2 * A + (1.0 - gm ** 2) * linear_tangent(self.material)

    def stress_gamma_derivative(self):
        """dP / d gamma at fixed displacement"""
        gm = self.gamma[:, None, None, None]
        A = material_tangent(self.kinematics, self.material)
        return self.P_solid + gm * np.einsum('cqiJkL,cqkL->cqiJ', A, self.H) - 2.0 * gm * self.sigma_lin

    def __repr__(self):
        return f'<CellResponse cells={self.H.shape[0]} blended={int(np.sum(self.gamma < 1.0 - 1e-12))}>'


class ElementState:
    """Quadrature-point kinematics and stresses of all active cells"""

    def __init__(self, state, u):
        self.kinematics = Kinematics(state.effective_gradient(u))
        self.F = self.kinematics.F
        self.stress = StressState(self.kinematics, state.material)
        self.weights = state.wdet
        self.rho_hat = state.rho_hat.copy()

    def __repr__(self):
        return f'<ElementState cells={self.F.shape[0]}>'


def element_internal_forces(state, u, response=None):
    """Unscaled element internal force vectors, shape (n_cells, n_local_dofs)"""
    response = response or CellResponse(state, u)
    fe = np.einsum('cq,cqiJ,cqaJ->cai', state.wdet, response.P, state.G)
    return fe.reshape(state.n_cells, -1)


def density_derivative_forces(state, u, response=None):
    """d(g f_int,e)/d(rho_hat_e) for every cell, shape (n_cells, n_local_dofs)"""
    response = response or CellResponse(state, u)
    g, dg = state.stiffness_scale()
    dP = dg[:, None, None, None] * response.P
    if np.any(response.dgamma != 0):
        dP = dP + (g * response.dgamma)[:, None, None, None] * response.stress_gamma_derivative()
    fe = np.einsum('cq,cqiJ,cqaJ->cai', state.wdet, dP, state.G)
    return fe.reshape(state.n_cells, -1)


def assemble(state, u, load_factor=1.0, tangent=True):
    """Residual f_int(u) - load_factor * f_ext and the sparse tangent

    Raises InvertedElementError when any quadrature point has J <= 0.
    """
    u = np.asarray(u, dtype=float)
    response = CellResponse(state, u)
    g, _ = state.stiffness_scale()

    fe = element_internal_forces(state, u, response) * g[:, None]
    residual = np.bincount(state.dofs.ravel(), weights=fe.ravel(), minlength=state.n_dofs)
    residual -= load_factor * state.f_ext

    if not tangent:
        return residual, None

    A = response.tangent()
    ke = np.einsum('cq,cqiJkL,cqaJ,cqbL->caibk', state.wdet, A, state.G, state.G, optimize=True)
    n_local = state.dofs.shape[1]
    ke = ke.reshape(state.n_cells, n_local, n_local) * g[:, None, None]

    rows = np.repeat(state.dofs, n_local, axis=1).ravel()
    cols = np.tile(state.dofs, (1, n_local)).ravel()
    K = sparse.coo_matrix((ke.ravel(), (rows, cols)), shape=(state.n_dofs, state.n_dofs)).tocsr()
    return residual, K


def total_energy(state, u, load_factor=1.0):
    """Discrete potential: sum of g * W over quadrature points minus external work"""
    g, _ = state.stiffness_scale()
    W = CellResponse(state, u).energy()
    return float(np.sum(g[:, None] * state.wdet * W) - load_factor * state.f_ext @ u)


class Solution:
    """Converged (or failed) state solution with the factorised reduced tangent"""

    def __init__(self, u, converged, iterations=0, residual_history=None, load_steps=1,
                 bisections=0, failed_step=None, factor=None, C=None):
        self.u = u
        self.converged = converged
        self.iterations = iterations
        self.residual_history = list(residual_history or [])
        self.load_steps = load_steps
        self.bisections = bisections
        self.failed_step = failed_step
        self.factor = factor
        self.C = C

    def solve_adjoint(self, rhs):
        """Full-length adjoint vector for a full-length right-hand side"""
        if self.factor is None:
            raise PreconditionError('no tangent factorisation available for the adjoint solve')
        reduced = self.factor.solve(self.C.T @ rhs)
        return self.C @ reduced

    def to_dict(self):
        return {
            'converged': self.converged,
            'iterations': self.iterations,
            'load_steps': self.load_steps,
            'bisections': self.bisections,
            'final_residual': self.residual_history[-1] if self.residual_history else None
        }

    def __repr__(self):
        return f'<Solution converged={self.converged} iterations={self.iterations}>'


def _factorize(K_r):
    try:
        return splu(K_r.tocsc())
    except RuntimeError as e:
        raise SolverFailure(f'singular tangent matrix: {e}')


def _reduced(state, u_f, load_factor):
    return state.C @ u_f + load_factor * state.g


def _newton_increment(state, u_f, load_factor, rtol, atol, max_iterations, max_halvings, history):
    """Newton iterations for one load level; returns (u_f, iterations, K)"""
    C = state.C
    reference = None
    for iteration in range(1, max_iterations + 1):
        residual, K = assemble(state, _reduced(state, u_f, load_factor), load_factor)
        r = C.T @ residual
        norm = float(np.linalg.norm(r))
        history.append(norm)

        if reference is None:
            reference = max(float(np.linalg.norm(C.T @ (load_factor * state.f_ext))), norm)
        if norm <= max(rtol * reference, atol):
            return u_f, iteration, K

        K_r = C.T @ K @ C
        du = -_factorize(K_r).solve(r)

        # Accept on residual decrease or on sufficient decrease of the potential
        slope = float(r @ du)
        energy = total_energy(state, _reduced(state, u_f, load_factor), load_factor) if slope < 0 else None
        alpha = 1.0
        for halving in range(max_halvings + 1):
            trial = u_f + alpha * du
            try:
                trial_u = _reduced(state, trial, load_factor)
                trial_residual, _ = assemble(state, trial_u, load_factor, tangent=False)
                trial_norm = float(np.linalg.norm(C.T @ trial_residual))
                descent = (energy is not None and
                           total_energy(state, trial_u, load_factor) <= energy + ARMIJO_C * alpha * slope)
            except InvertedElementError:
                trial_norm = np.inf
                descent = False
            if trial_norm < norm or descent or (np.isfinite(trial_norm) and halving == max_halvings):
                u_f = trial
                break
            alpha *= 0.5
        else:
            raise SolverFailure(f'line search found no admissible step at load factor {load_factor:.4g}')

    raise SolverFailure(f'Newton did not converge in {max_iterations} iterations at load factor {load_factor:.4g}')


@log_performance
def solve_newton(state, load_steps=1, u0=None, rtol=NEWTON_RTOL, atol=NEWTON_ATOL,
                 max_iterations=NEWTON_MAX_ITERATIONS, max_halvings=LINE_SEARCH_MAX_HALVINGS,
                 max_bisections=MAX_LOAD_BISECTIONS):
    """Incremental Newton-Raphson with backtracking and load-step bisection

    Both the tractions and the Dirichlet inhomogeneities are scaled by the
    load factor. Raises SolverFailure carrying the failing step index.
    """
    if load_steps < 1:
        raise InvalidArgumentError(f'load_steps must be >= 1, got {load_steps}')

    if u0 is None:
        u_f = np.zeros(state.free.size)
    else:
        u0 = np.asarray(u0, dtype=float)
        if u0.shape != (state.n_dofs,):
            raise PreconditionError(f'initial guess has shape {u0.shape}, expected ({state.n_dofs},)')
        u_f = u0[state.free].copy()
    warm = u0 is not None and bool(np.any(u_f != 0))

    history = []
    iterations = 0
    bisections = 0
    increment = 1.0 / load_steps
    done = 0.0
    step = 1
    K = None

    while done < 1.0 - 1e-12:
        target = min(done + increment, 1.0)
        try:
            u_f, used, K = _newton_increment(state, u_f, target, rtol, atol,
                                             max_iterations, max_halvings, history)
        except (SolverFailure, InvertedElementError) as e:
            if warm and done == 0.0:
                # Retry from rest before bisecting
                logger.warning(f"Warm-started solve failed ({e}); restarting from zero displacement")
                warm = False
                u_f = np.zeros(state.free.size)
                continue
            bisections += 1
            if bisections > max_bisections:
                logger.error(f"Newton failed in load step {step}: {e}")
                raise SolverFailure(f'state solve failed in load step {step}: {e}', step=step)
            increment *= 0.5
            logger.warning(f"Load step {step} failed ({e}); bisecting increment to {increment:.4g}")
            continue
        iterations += used
        done = target
        step += 1

    factor = _factorize(state.C.T @ K @ state.C)
    u = _reduced(state, u_f, 1.0)

    logger.debug(f"Newton converged in {iterations} iterations, residual {history[-1]:.3e}")
    return Solution(u, True, iterations, history, load_steps, bisections, factor=factor, C=state.C)
