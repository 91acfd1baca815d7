"""
Responses (compliance, volume, volume-normalised P-norm von Mises stress),
adjoint sensitivities and the moving-asymptotes design update.
"""
import logging
from enum import Enum

import numpy as np
from scipy.optimize import minimize

from adaptopt.errors import InvalidArgumentError
from adaptopt.models.fem import CellResponse, density_derivative_forces
from adaptopt.models.mechanics import Kinematics, cauchy_stress, von_mises, von_mises_gradient
from adaptopt.models.regularization import eps_relax, eps_relax_derivative
from adaptopt.utils.decorators import converged_solution_required
from adaptopt.utils.logging_config import log_performance

logger = logging.getLogger(__name__)


class ProblemKind(Enum):
    COMPLIANCE_VOLUME = 'compliance_volume'
    COMPLIANCE_VOLUME_STRESS = 'compliance_volume_stress'


class MMAState:
    """Optimizer memory: asymptotes and the two previous designs"""

    def __init__(self):
        self.reset()

    def reset(self):
        self.iteration = 0
        self.xold1 = None
        self.xold2 = None
        self.low = None
        self.upp = None

    def to_dict(self):
        return {'iteration': self.iteration, 'has_asymptotes': self.low is not None}

    def __repr__(self):
        return f'<MMAState iteration={self.iteration}>'


class OptProblem:
    def __init__(self, kind, vbar, sigma_a=None, p=8.0, move=0.2, epsilon=0.1):
        kind = ProblemKind(kind)
        if vbar <= 0:
            raise InvalidArgumentError(f'volume bound must be positive, got {vbar}')
        if kind == ProblemKind.COMPLIANCE_VOLUME_STRESS and (sigma_a is None or sigma_a <= 0):
            raise InvalidArgumentError(f'stress limit must be positive, got {sigma_a}')
        if p < 2:
            raise InvalidArgumentError(f'P-norm exponent must be >= 2, got {p}')
        self.kind = kind
        self.vbar = float(vbar)
        self.sigma_a = None if sigma_a is None else float(sigma_a)
        self.p = float(p)
        self.move = float(move)
        self.epsilon = float(epsilon)
        self.memory = MMAState()

    @property
    def has_stress_constraint(self):
        return self.kind == ProblemKind.COMPLIANCE_VOLUME_STRESS

    def to_dict(self):
        return {
            'kind': self.kind.value,
            'vbar': self.vbar,
            'sigma_a': self.sigma_a,
            'p': self.p,
            'move': self.move,
            'epsilon': self.epsilon
        }

    def __repr__(self):
        return f'<OptProblem {self.kind.value} vbar={self.vbar}>'


class Sensitivities:
    """Per-cell derivatives of the responses w.r.t. raw design variables"""

    def __init__(self, objective, volume, pnorm=None):
        self.objective = objective
        self.volume = volume
        self.pnorm = pnorm

    def to_dict(self):
        data = {
            'objective_norm': float(np.linalg.norm(self.objective)),
            'volume_norm': float(np.linalg.norm(self.volume))
        }
        if self.pnorm is not None:
            data['pnorm_norm'] = float(np.linalg.norm(self.pnorm))
        return data


# ----------------------------------------------------------------------
# responses
# ----------------------------------------------------------------------
@converged_solution_required
def compliance(state, solution):
    """Work of the boundary tractions, u . f_ext"""
    return float(state.f_ext @ solution.u)


def volume_constraint(rho, forest, vbar):
    return float(np.asarray(rho) @ forest.areas() - vbar)


def pnorm_from_values(sigma_n, weights, p):
    """[(1/V) sum w s^p]^(1/p), evaluated with max-scaling for large p"""
    sigma_n = np.asarray(sigma_n, dtype=float)
    weights = np.asarray(weights, dtype=float)
    peak = float(np.max(sigma_n))
    if peak <= 0:
        return 0.0
    mean = np.sum(weights * (sigma_n / peak) ** p) / np.sum(weights)
    return float(peak * mean ** (1.0 / p))


def _normalized_stress(state, u, sigma_a, epsilon):
    kin = Kinematics(state.effective_gradient(u))
    vm = von_mises(cauchy_stress(kin, state.material))
    relax = eps_relax(state.rho_hat, epsilon)
    return kin, vm, relax[:, None] * vm / sigma_a


@converged_solution_required
def pnorm_stress(state, solution, sigma_a, p, epsilon):
    """Volume-normalised P-norm of the relaxed, normalised von Mises field"""
    _, _, sigma_n = _normalized_stress(state, solution.u, sigma_a, epsilon)
    return pnorm_from_values(sigma_n, state.wdet, p)


def relaxed_cell_von_mises(state, u, epsilon):
    """Per-cell maximum over quadrature points of f_eps * sigma_vm"""
    _, _, sigma_n = _normalized_stress(state, u, 1.0, epsilon)
    return np.max(sigma_n, axis=1)


# ----------------------------------------------------------------------
# sensitivities
# ----------------------------------------------------------------------
def _state_term(state, solution, d_response_du, response):
    """-(adjoint)^T d(residual)/d(rho_hat) for every cell"""
    adjoint = solution.solve_adjoint(d_response_du)
    dfe = density_derivative_forces(state, solution.u, response)
    return -np.einsum('cd,cd->c', adjoint[state.dofs], dfe)


def pnorm_partials(state, solution, sigma_a, p, epsilon):
    """Value, explicit d/d(rho_hat) and d/du of the P-norm stress measure

    Stresses are evaluated on I + gamma H, so both the relaxation factor
    and the blend factor gamma contribute explicit density terms.
    """
    kin, vm, sigma_n = _normalized_stress(state, solution.u, sigma_a, epsilon)
    value = pnorm_from_values(sigma_n, state.wdet, p)
    if value <= 0:
        return value, np.zeros(state.n_cells), np.zeros(state.n_dofs)

    volume = np.sum(state.wdet)
    # dG/d(sigma_n) at every quadrature point
    dG = (state.wdet / volume) * (sigma_n / value) ** (p - 1.0)

    relax = eps_relax(state.rho_hat, epsilon)
    d_relax = eps_relax_derivative(state.rho_hat, epsilon)
    gamma, dgamma = state.interpolation_weight()
    dvm_dF = von_mises_gradient(kin, state.material)
    H = state.displacement_gradient(solution.u)

    explicit = np.sum(dG * vm, axis=1) * d_relax / sigma_a
    explicit += np.sum(dG * np.einsum('cqiJ,cqiJ->cq', dvm_dF, H), axis=1) * relax * dgamma / sigma_a

    coeff = dG * (relax * gamma)[:, None] / sigma_a
    fe = np.einsum('cq,cqiJ,cqaJ->cai', coeff, dvm_dF, state.G).reshape(state.n_cells, -1)
    du = np.bincount(state.dofs.ravel(), weights=fe.ravel(), minlength=state.n_dofs)
    return value, explicit, du


@log_performance
@converged_solution_required
def sensitivities(state, solution, densities, filt, forest, problem):
    """Adjoint sensitivities of objective and constraints w.r.t. raw densities"""
    response = CellResponse(state, solution.u)

    d_compliance = _state_term(state, solution, state.f_ext, response)
    objective = densities.chain_to_rho(d_compliance, filt)
    volume = forest.areas().copy()

    pnorm = None
    if problem.has_stress_constraint:
        _, explicit, du = pnorm_partials(state, solution, problem.sigma_a, problem.p, problem.epsilon)
        d_pnorm = explicit + _state_term(state, solution, du, response)
        pnorm = densities.chain_to_rho(d_pnorm, filt)

    return Sensitivities(objective, volume, pnorm)


# ----------------------------------------------------------------------
# moving asymptotes
# ----------------------------------------------------------------------
ASYINIT = 0.5
ASYINCR = 1.2
ASYDECR = 0.7
RAA0 = 1e-5
ALBEFA = 0.1


def _asymptotes(x, memory, xmin, xmax):
    span = xmax - xmin
    if memory.iteration < 2 or memory.xold2 is None:
        low = x - ASYINIT * span
        upp = x + ASYINIT * span
    else:
        trend = (x - memory.xold1) * (memory.xold1 - memory.xold2)
        factor = np.ones_like(x)
        factor[trend > 0] = ASYINCR
        factor[trend < 0] = ASYDECR
        low = x - factor * (memory.xold1 - memory.low)
        upp = x + factor * (memory.upp - memory.xold1)
        low = np.clip(low, x - 10.0 * span, x - 0.01 * span)
        upp = np.clip(upp, x + 0.01 * span, x + 10.0 * span)
    return low, upp


def _approximation(df, low, upp, x, span):
    ux2 = (upp - x) ** 2
    xl2 = (x - low) ** 2
    p = np.maximum(df, 0.0)
    q = np.maximum(-df, 0.0)
    pq = 0.001 * (p + q) + RAA0 / span
    return (p + pq) * ux2, (q + pq) * xl2


def mma_subproblem(x, f0_grad, fvals, fgrads, memory, move=0.2, xmin=0.0, xmax=1.0, c=1000.0, d=1.0):
    """One MMA step solved through its dual with L-BFGS-B

    Returns (x_new, info). The memory object is updated in place.
    """
    x = np.asarray(x, dtype=float)
    fvals = np.atleast_1d(np.asarray(fvals, dtype=float))
    fgrads = np.atleast_2d(np.asarray(fgrads, dtype=float))
    m = fvals.size
    span = xmax - xmin

    low, upp = _asymptotes(x, memory, xmin, xmax)
    alpha = np.maximum.reduce([low + ALBEFA * (x - low), x - move * span, np.full_like(x, xmin)])
    beta = np.minimum.reduce([upp - ALBEFA * (upp - x), x + move * span, np.full_like(x, xmax)])

    p0, q0 = _approximation(np.asarray(f0_grad, dtype=float), low, upp, x, span)
    P = np.empty((m, x.size))
    Q = np.empty((m, x.size))
    for i in range(m):
        P[i], Q[i] = _approximation(fgrads[i], low, upp, x, span)
    b = P @ (1.0 / (upp - x)) + Q @ (1.0 / (x - low)) - fvals

    def primal(lam):
        pj = p0 + lam @ P
        qj = q0 + lam @ Q
        sp, sq = np.sqrt(pj), np.sqrt(qj)
        xj = np.clip((sp * low + sq * upp) / (sp + sq), alpha, beta)
        y = np.maximum(0.0, (lam - c) / d)
        return xj, y, pj, qj

    def negative_dual(lam):
        xj, y, pj, qj = primal(lam)
        ux = upp - xj
        xl = xj - low
        value = (np.sum(pj / ux + qj / xl) + np.sum(c * y + 0.5 * d * y ** 2 - lam * y) - lam @ b)
        grad = P @ (1.0 / ux) + Q @ (1.0 / xl) - y - b
        return -value, -grad

    info = {'fallback': False}
    try:
        result = minimize(negative_dual, np.ones(m), jac=True, method='L-BFGS-B',
                          bounds=[(0.0, None)] * m, options={'maxiter': 500})
        lam = np.maximum(result.x, 0.0)
        x_new = primal(lam)[0]
        if not np.all(np.isfinite(x_new)):
            raise FloatingPointError('non-finite subproblem solution')
        info['multipliers'] = lam.tolist()
        info['dual_converged'] = bool(result.success)
    except (FloatingPointError, ValueError) as e:
        logger.warning(f"MMA subproblem failed ({e}); taking a projected steepest-descent step")
        direction = -(np.asarray(f0_grad) + np.sum(fgrads[fvals > 0], axis=0))
        scale = np.max(np.abs(direction))
        step = move * span * direction / scale if scale > 0 else np.zeros_like(x)
        x_new = np.clip(x + step, alpha, beta)
        info['fallback'] = True

    memory.xold2 = memory.xold1
    memory.xold1 = x.copy()
    memory.low = low
    memory.upp = upp
    memory.iteration += 1
    return x_new, info


def design_update(rho, values, sens, memory, move=0.2):
    """Moving-asymptotes update of the raw densities within [0, 1]

    `values` holds the scaled constraint values (one per row of
    ``sens['constraints']``); ``sens['objective']`` is the scaled objective
    gradient.
    """
    rho_next, info = mma_subproblem(rho, sens['objective'], values, sens['constraints'], memory, move=move)
    return np.clip(rho_next, 0.0, 1.0), info
