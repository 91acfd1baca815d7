"""
Density regularization chain rho -> rho_tilde -> rho_hat.

The Helmholtz filter is solved with bilinear nodal unknowns on the active
mesh (hanging nodes constrained) and sampled back to cell centroids.
"""
import logging

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from adaptopt.errors import AdaptOptError, InvalidArgumentError
from adaptopt.models.fem import gauss_rule, shape_eval
from adaptopt.models.mesh import LEFT, RIGHT, NodeLayout, build_hanging_constraints
from adaptopt.utils.logging_config import log_performance

logger = logging.getLogger(__name__)

DEFAULT_BETA_INITIAL = 1.0
DEFAULT_BETA_MAX = 16.0
DEFAULT_BETA_INTERVAL = 50

# Robin coefficient multiplies the filter length ("length") or enters as given ("absolute")
BOUNDARY_SCALINGS = ('length', 'absolute')


def pde_length_scale(radius):
    """Helmholtz length scale matching a classical linear-filter radius"""
    return radius / (2.0 * np.sqrt(3.0))


class FilterParams:
    def __init__(self, radius=0.1, boundary_coeff=0.5, beta=DEFAULT_BETA_INITIAL, eta=0.5, epsilon=0.1,
                 boundary_scaling='length'):
        if radius <= 0:
            raise InvalidArgumentError(f'filter radius must be positive, got {radius}')
        if boundary_coeff < 0:
            raise InvalidArgumentError(f'boundary coefficient must be >= 0, got {boundary_coeff}')
        if boundary_scaling not in BOUNDARY_SCALINGS:
            raise InvalidArgumentError(f'boundary scaling must be one of {BOUNDARY_SCALINGS}, got {boundary_scaling}')
        if beta <= 0:
            raise InvalidArgumentError(f'beta must be positive, got {beta}')
        if not 0 < eta < 1:
            raise InvalidArgumentError(f'eta must lie in (0, 1), got {eta}')
        if not 0 < epsilon <= 1:
            raise InvalidArgumentError(f'epsilon must lie in (0, 1], got {epsilon}')
        self.radius = float(radius)
        self.boundary_coeff = float(boundary_coeff)
        self.beta = float(beta)
        self.boundary_scaling = boundary_scaling
        self.eta = float(eta)
        self.epsilon = float(epsilon)

    def to_dict(self):
        return {
            'radius': self.radius,
            'pde_length_scale': pde_length_scale(self.radius),
            'boundary_coeff': self.boundary_coeff,
            'boundary_scaling': self.boundary_scaling,
            'beta': self.beta,
            'eta': self.eta,
            'epsilon': self.epsilon
        }

    def __repr__(self):
        return f'<FilterParams r={self.radius} beta={self.beta}>'


class HelmholtzFilter:
    """PDE filter -l^2 lap(rt) + rt = rho with a Robin boundary term

    Weak form: l^2 (grad rt, grad v) + (rt, v) + kappa <rt, v> = (rho, v) with
    l = r / (2 sqrt 3). kappa is boundary_coeff * l under the "length" scaling,
    which pins a uniform solid field to 1 / (1 + boundary_coeff) on a straight
    edge at any filter radius, and boundary_coeff itself under "absolute".
    """

    def __init__(self, forest, radius, boundary_coeff=0.5, boundary_scaling=BOUNDARY_SCALINGS[0]):
        if radius <= 0:
            raise InvalidArgumentError(f'filter radius must be positive, got {radius}')
        if boundary_scaling not in BOUNDARY_SCALINGS:
            raise InvalidArgumentError(f'boundary scaling must be one of {BOUNDARY_SCALINGS}, got {boundary_scaling}')
        self.forest = forest
        self.radius = float(radius)
        self.boundary_coeff = float(boundary_coeff)
        self.length = pde_length_scale(self.radius)
        self.boundary_scaling = boundary_scaling
        self.kappa = self.boundary_coeff * (self.length if boundary_scaling == 'length' else 1.0)

        self.layout = NodeLayout(forest, degree=1, components=1)
        constraints = build_hanging_constraints(forest, self.layout)
        self.C, _, self.free = constraints.condense(self.layout.n_nodes)
        self._assemble()

    def _assemble(self):
        layout = self.layout
        geometry = self.forest.geometry()
        hx, hy = geometry[:, 2], geometry[:, 3]
        n_cells = len(geometry)
        n_nodes = layout.n_nodes
        nodes = layout.cell_nodes

        points, weights = gauss_rule(2)
        N, dN = shape_eval(points, 1)
        detJ = 0.25 * hx * hy
        scale = np.column_stack([2.0 / hx, 2.0 / hy])
        G = dN[None, :, :, :] * scale[:, None, None, :]
        wdet = weights[None, :] * detJ[:, None]

        stiffness = np.einsum('cq,cqaJ,cqbJ->cab', wdet, G, G)
        mass = np.einsum('cq,qa,qb->cab', wdet, N, N)
        ke = self.length ** 2 * stiffness + mass

        rows = np.repeat(nodes, 4, axis=1).ravel()
        cols = np.tile(nodes, (1, 4)).ravel()
        K = sparse.coo_matrix((ke.ravel(), (rows, cols)), shape=(n_nodes, n_nodes)).tocsr()

        if self.kappa > 0:
            coeff = self.kappa
            b_rows, b_cols, b_vals = [], [], []
            edge = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
            for cell, direction in layout.boundary_faces:
                length = hy[cell] if direction in (LEFT, RIGHT) else hx[cell]
                face = layout.face_nodes(cell, direction)
                b_rows.extend(np.repeat(face, 2))
                b_cols.extend(np.tile(face, 2))
                b_vals.extend((coeff * length * edge).ravel())
            K = K + sparse.coo_matrix((b_vals, (b_rows, b_cols)), shape=(n_nodes, n_nodes)).tocsr()

        # T maps cell densities to nodal load vectors, S samples nodal values at centroids
        cell_index = np.repeat(np.arange(n_cells), 4)
        self.T = sparse.coo_matrix(
            (np.repeat(0.25 * hx * hy, 4), (nodes.ravel(), cell_index)), shape=(n_nodes, n_cells)
        ).tocsr()
        self.S = sparse.coo_matrix(
            (np.full(4 * n_cells, 0.25), (cell_index, nodes.ravel())), shape=(n_cells, n_nodes)
        ).tocsr()

        K_r = (self.C.T @ K @ self.C).tocsc()
        try:
            self.factor = splu(K_r)
        except RuntimeError as e:
            raise AdaptOptError(f'singular filter system: {e}', code='FILTER_SINGULAR')
        self.K = K
        self.areas = hx * hy

    def nodal(self, rho):
        """Nodal filtered field for cell densities rho"""
        rho = np.asarray(rho, dtype=float)
        rhs = self.C.T @ (self.T @ rho)
        return self.C @ self.factor.solve(rhs)

    @log_performance
    def apply(self, rho, clamp=True):
        """Filtered field sampled at cell centroids; optionally clamped to [0, 1]"""
        values = self.S @ self.nodal(rho)
        if clamp:
            return np.clip(values, 0.0, 1.0)
        return values

    def clamp_mask(self, rho_tilde_raw):
        return ((rho_tilde_raw >= 0.0) & (rho_tilde_raw <= 1.0)).astype(float)

    def adjoint(self, sensitivity, mask=None):
        """Pull a cell-wise derivative w.r.t. rho_tilde back to rho"""
        v = np.asarray(sensitivity, dtype=float)
        if mask is not None:
            v = v * mask
        w = self.C @ self.factor.solve(self.C.T @ (self.S.T @ v))
        return self.T.T @ w

    def __repr__(self):
        return f'<HelmholtzFilter r={self.radius} nodes={self.layout.n_nodes}>'


def helmholtz_filter(rho, r, boundary_coeff, forest, boundary_scaling=BOUNDARY_SCALINGS[0]):
    """One-shot filter of a cell field on the active mesh of a forest"""
    return HelmholtzFilter(forest, r, boundary_coeff, boundary_scaling).apply(rho)


def heaviside_project(rho_tilde, beta, eta=0.5):
    """Smoothed Heaviside projection"""
    rho_tilde = np.asarray(rho_tilde, dtype=float)
    denom = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
    return (np.tanh(beta * eta) + np.tanh(beta * (rho_tilde - eta))) / denom


def heaviside_derivative(rho_tilde, beta, eta=0.5):
    rho_tilde = np.asarray(rho_tilde, dtype=float)
    denom = np.tanh(beta * eta) + np.tanh(beta * (1.0 - eta))
    return beta * (1.0 - np.tanh(beta * (rho_tilde - eta)) ** 2) / denom


def eps_relax(rho_hat, epsilon):
    """f_eps = rho / (eps (1 - rho) + rho)"""
    rho_hat = np.asarray(rho_hat, dtype=float)
    return rho_hat / (epsilon * (1.0 - rho_hat) + rho_hat)


def eps_relax_derivative(rho_hat, epsilon):
    rho_hat = np.asarray(rho_hat, dtype=float)
    return epsilon / (epsilon * (1.0 - rho_hat) + rho_hat) ** 2


def beta_schedule(iteration, initial=DEFAULT_BETA_INITIAL, maximum=DEFAULT_BETA_MAX,
                  interval=DEFAULT_BETA_INTERVAL):
    """Heaviside continuation: doubles every `interval` iterations, capped"""
    doublings = max(iteration - 1, 0) // interval
    return float(min(initial * 2.0 ** doublings, maximum))


class DensityFields:
    """Raw, filtered and projected densities on one mesh"""

    def __init__(self, rho, rho_tilde, rho_hat, beta, eta, clamp_mask=None):
        self.rho = rho
        self.rho_tilde = rho_tilde
        self.rho_hat = rho_hat
        self.beta = beta
        self.eta = eta
        self.clamp_mask = clamp_mask if clamp_mask is not None else np.ones_like(rho_tilde)

    def chain_to_rho(self, d_rho_hat, filt):
        """Derivative w.r.t. rho_hat pulled back through projection and filter"""
        d_rho_tilde = np.asarray(d_rho_hat) * heaviside_derivative(self.rho_tilde, self.beta, self.eta)
        return filt.adjoint(d_rho_tilde, self.clamp_mask)

    def to_dict(self):
        return {
            'cells': int(self.rho.size),
            'beta': self.beta,
            'rho_mean': float(np.mean(self.rho)),
            'rho_hat_min': float(np.min(self.rho_hat)),
            'rho_hat_max': float(np.max(self.rho_hat))
        }

    def __repr__(self):
        return f'<DensityFields cells={self.rho.size} beta={self.beta}>'


def regularize(rho, filt, beta, eta=0.5):
    """Run the full chain rho -> rho_tilde -> rho_hat"""
    rho = np.asarray(rho, dtype=float)
    raw = filt.apply(rho, clamp=False)
    mask = filt.clamp_mask(raw)
    rho_tilde = np.clip(raw, 0.0, 1.0)
    rho_hat = np.clip(heaviside_project(rho_tilde, beta, eta), 0.0, 1.0)
    return DensityFields(rho, rho_tilde, rho_hat, beta, eta, mask)
