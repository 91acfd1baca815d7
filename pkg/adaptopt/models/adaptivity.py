"""
Mesh adaptivity criteria and field transfer between adapted meshes.
"""
import logging
from enum import Enum

import numpy as np

from adaptopt.errors import InvalidArgumentError, PreconditionError
from adaptopt.models.fem import shape_eval
from adaptopt.models.mechanics import Kinematics, eshelby_stress
from adaptopt.models.mesh import AdaptFlags, NodeLayout, child_keys, parent_key
from adaptopt.models.regularization import eps_relax
from adaptopt.utils.decorators import converged_solution_required
from adaptopt.utils.logging_config import log_performance

logger = logging.getLogger(__name__)

DENS_REFINE_BAND = (0.2, 0.8)
DENS_COARSEN_LOW = 0.01
DENS_COARSEN_HIGH = 0.99


class CriterionKind(Enum):
    CNF = 'CNF'
    DENS = 'DENS'
    VNM = 'VNM'
    NONE = 'NONE'


class CriterionConfig:
    def __init__(self, kind='CNF', c_r=0.25, c_c=0.01, interval=5, exclude_boundary=False, exclude_supports=False):
        kind = CriterionKind(str(kind).upper())
        if not 0 <= c_c < c_r <= 1:
            raise InvalidArgumentError(f'thresholds need 0 <= c_c < c_r <= 1, got c_c={c_c}, c_r={c_r}')
        if interval < 1:
            raise InvalidArgumentError(f'adaptation interval must be >= 1, got {interval}')
        self.kind = kind
        self.c_r = float(c_r)
        self.c_c = float(c_c)
        self.interval = int(interval)
        self.exclude_boundary = bool(exclude_boundary)
        self.exclude_supports = bool(exclude_supports)

    def is_due(self, iteration, budget):
        """Adaptation runs every `interval` iterations, never after the last one"""
        return (self.kind != CriterionKind.NONE and iteration % self.interval == 0
                and iteration < budget)

    def to_dict(self):
        return {
            'kind': self.kind.value,
            'c_r': self.c_r,
            'c_c': self.c_c,
            'interval': self.interval,
            'exclude_boundary': self.exclude_boundary,
            'exclude_supports': self.exclude_supports,
            'dens_bounds': [DENS_REFINE_BAND[0], DENS_REFINE_BAND[1], DENS_COARSEN_LOW, DENS_COARSEN_HIGH]
        }

    def __repr__(self):
        return f'<CriterionConfig {self.kind.value} c_r={self.c_r} c_c={self.c_c} every {self.interval}>'


class NodalForceField:
    """Configurational force vectors on the nodes of a layout"""

    def __init__(self, layout, forces, exclude_boundary=False, excluded_nodes=None):
        self.layout = layout
        self.forces = forces
        self.magnitude = np.linalg.norm(forces, axis=1)
        self.counted = ~layout.is_hanging
        if exclude_boundary:
            self.counted &= ~layout.is_boundary
        if excluded_nodes is not None and len(excluded_nodes):
            self.counted[np.asarray(excluded_nodes, dtype=np.int64)] = False
        self.f_max = float(np.max(self.magnitude[self.counted])) if np.any(self.counted) else 0.0

    def scaled(self, factor):
        scaled = NodalForceField.__new__(NodalForceField)
        scaled.layout = self.layout
        scaled.forces = self.forces * factor
        scaled.magnitude = self.magnitude * abs(factor)
        scaled.counted = self.counted
        scaled.f_max = self.f_max * abs(factor)
        return scaled

    def to_dict(self):
        return {'nodes': int(self.forces.shape[0]), 'f_max': self.f_max}

    def __repr__(self):
        return f'<NodalForceField nodes={self.forces.shape[0]} f_max={self.f_max:.3e}>'


@log_performance
@converged_solution_required
def configurational_forces(state, solution, rho_hat, epsilon, exclude_boundary=False, exclude_supports=False):
    """Nodal forces: sum over cells of the integral of f_eps(rho_hat) Sigma . grad N

    F_max skips hanging nodes, and optionally every boundary node or only
    the nodes on clamped and loaded segments. Skipped nodes keep their
    forces and still trigger refinement.
    """
    layout = state.layout
    kin = Kinematics(state.effective_gradient(solution.u))
    Sigma = eshelby_stress(kin, state.material)
    weights = state.wdet * eps_relax(rho_hat, epsilon)[:, None]

    fe = np.einsum('cq,cqIJ,cqaJ->caI', weights, Sigma, state.G)
    forces = np.zeros((layout.n_nodes, 2))
    np.add.at(forces, layout.cell_nodes.ravel(), fe.reshape(-1, 2))

    # Hanging contributions move to their masters
    for node, (masters, _) in layout.node_constraints().entries.items():
        for master, weight in masters.items():
            forces[master] += weight * forces[node]
        forces[node] = 0.0

    excluded = state.support_nodes() if exclude_supports else None
    return NodalForceField(layout, forces, exclude_boundary, excluded)


def _threshold_flags(forest, refine, coarsen):
    return AdaptFlags.from_masks(forest, refine, coarsen)


def flags_cnf(forces, c_r, c_c, forest):
    """Refine if any corner reaches c_r F_max; coarsen if all corners stay below c_c F_max"""
    if forces.f_max <= 0:
        return AdaptFlags(forest)

    corners = forces.layout.corner_nodes()
    magnitude = forces.magnitude[corners]
    valid = ~forces.layout.is_hanging[corners]

    refine = np.any(valid & (magnitude >= c_r * forces.f_max), axis=1)
    coarsen = np.all(~valid | (magnitude <= c_c * forces.f_max), axis=1) & np.any(valid, axis=1)
    return _threshold_flags(forest, refine, coarsen)


def flags_dens(rho_tilde, forest):
    rho_tilde = np.asarray(rho_tilde, dtype=float)
    refine = (rho_tilde >= DENS_REFINE_BAND[0]) & (rho_tilde <= DENS_REFINE_BAND[1])
    coarsen = (rho_tilde <= DENS_COARSEN_LOW) | (rho_tilde >= DENS_COARSEN_HIGH)
    return _threshold_flags(forest, refine, coarsen)


def flags_vnm(sigma_vm_per_cell, c_r, c_c, forest):
    """Refine at c_r times the peak stress, coarsen at c_c times it

    The runner passes the epsilon-relaxed stress f_eps(rho_hat) sigma_vm
    (per-cell maximum over quadrature points), so void cells read as
    unstressed instead of showing the artificial stress of the soft phase.
    """
    sigma = np.asarray(sigma_vm_per_cell, dtype=float)
    peak = float(np.max(sigma)) if sigma.size else 0.0
    if peak <= 0:
        return AdaptFlags(forest)
    refine = sigma >= c_r * peak
    coarsen = sigma <= c_c * peak
    return _threshold_flags(forest, refine, coarsen)


# ----------------------------------------------------------------------
# transfer
# ----------------------------------------------------------------------
def _source_cells(old_forest, new_forest):
    """For every new active cell: ('same'|'child'|'parent', old index or indices)"""
    old_index = old_forest.active_index()
    sources = []
    for key in new_forest.active_keys():
        if key in old_index:
            sources.append(('same', old_index[key]))
            continue
        parent = parent_key(key)
        if parent is not None and parent in old_index:
            sources.append(('child', old_index[parent]))
            continue
        children = child_keys(key)
        if all(c in old_index for c in children):
            sources.append(('parent', [old_index[c] for c in children]))
            continue
        raise PreconditionError(f'cell {key} is not reachable from the old forest by one adaptation')
    return sources


def transfer_fields(old_forest, new_forest, rho_old, u_old=None, degree=2):
    """Map raw densities and a displacement warm start onto an adapted forest"""
    rho_old = np.asarray(rho_old, dtype=float)
    if rho_old.shape != (old_forest.n_active,):
        raise PreconditionError('density does not match the old forest')

    sources = _source_cells(old_forest, new_forest)
    old_areas = old_forest.areas()
    rho_new = np.empty(new_forest.n_active)
    for n, (kind, source) in enumerate(sources):
        if kind == 'parent':
            rho_new[n] = rho_old[source] @ old_areas[source] / np.sum(old_areas[source])
        else:
            rho_new[n] = rho_old[source]

    if u_old is None:
        return rho_new, None

    old_layout = NodeLayout(old_forest, degree, components=2)
    new_layout = NodeLayout(new_forest, degree, components=2)
    u_old = np.asarray(u_old, dtype=float).reshape(-1, 2)
    if u_old.shape[0] != old_layout.n_nodes:
        raise PreconditionError('displacement does not match the old forest')

    old_index = old_forest.active_index()
    old_geometry = old_forest.geometry()
    cells = np.empty(new_layout.n_nodes, dtype=np.int64)
    for node, (x, y) in enumerate(new_layout.coords):
        cells[node] = old_index[old_forest.locate(x, y)]

    bounds = old_geometry[cells]
    xi = np.column_stack([
        2.0 * (new_layout.coords[:, 0] - bounds[:, 0]) / bounds[:, 2] - 1.0,
        2.0 * (new_layout.coords[:, 1] - bounds[:, 1]) / bounds[:, 3] - 1.0,
    ])
    N, _ = shape_eval(np.clip(xi, -1.0, 1.0), degree)
    nodal = u_old[old_layout.cell_nodes[cells]]
    u_new = np.einsum('na,nai->ni', N, nodal).ravel()

    logger.debug(f"Transferred fields: {old_forest.n_active} -> {new_forest.n_active} cells")
    return rho_new, u_new
