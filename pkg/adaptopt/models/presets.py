"""
Benchmark problems: a clamped cantilever under a tip load and the half
U-beam with one re-entrant corner.
"""
import logging

from adaptopt.models.fem import BoundarySegment, DirichletCondition, StateProblem, TractionLoad
from adaptopt.models.mesh import create_base_mesh, refine_uniform
from adaptopt.models.optimization import OptProblem

logger = logging.getLogger(__name__)


def _state_problem(config, forest, dirichlet, tractions):
    return StateProblem(
        forest,
        config.material(),
        dirichlet=dirichlet,
        tractions=tractions,
        degree=config['mesh.degree'],
        simp_exponent=config['material.simp_exponent'],
        rho_min=config['material.rho_min'],
        void_threshold=config['material.void_threshold'],
        void_sharpness=config['material.void_sharpness']
    )


def _opt_problem(config, forest):
    sigma_a = config['problem.stress_limit'] if config['problem.kind'] == 'compliance_volume_stress' else None
    return OptProblem(
        config['problem.kind'],
        vbar=config['problem.volume_fraction'] * forest.domain_area(),
        sigma_a=sigma_a,
        p=config['optimizer.p'],
        move=config['optimizer.move'],
        epsilon=config['filter.epsilon']
    )


def preset_cantilever(config):
    """Cantilever clamped on the left edge, pulled down at mid-height of the right edge"""
    width = config['geometry.width']
    height = config['geometry.height']
    half = 0.5 * config['geometry.load_width']

    forest = create_base_mesh(config['mesh.base_nx'], config['mesh.base_ny'], width, height,
                              max_level=config['mesh.max_level'])
    refine_uniform(forest, config['mesh.init_level'])

    clamp = DirichletCondition(BoundarySegment('x', 0.0, 0.0, height), name='clamp')
    load = TractionLoad(BoundarySegment('x', width, 0.5 * height - half, 0.5 * height + half),
                        (0.0, -config['problem.load']), name='tip_load')

    state = _state_problem(config, forest, [clamp], [load])
    problem = _opt_problem(config, forest)
    logger.info(f"Cantilever preset: {forest.n_active} cells, {state.n_dofs} dofs")
    return forest, state, problem


def ubeam_excluded_cells(config):
    """Base cells removed from the envelope to form the cutout"""
    hx = config['geometry.width'] / config['mesh.base_nx']
    hy = config['geometry.height'] / config['mesh.base_ny']
    i0 = int(round(config['geometry.cutout_x'] / hx))
    j0 = int(round(config['geometry.cutout_y'] / hy))
    return [(i, j) for j in range(j0, config['mesh.base_ny']) for i in range(i0, config['mesh.base_nx'])]


def preset_ubeam(config):
    """Half U-beam: base clamped below the cutout, roller on the symmetry plane, lateral load at the leg tip

    The load travels down the leg and around the re-entrant corner into the
    clamped part of the base.
    """
    width = config['geometry.width']
    height = config['geometry.height']
    cut_x = config['geometry.cutout_x']
    cut_y = config['geometry.cutout_y']

    forest = create_base_mesh(config['mesh.base_nx'], config['mesh.base_ny'], width, height,
                              max_level=config['mesh.max_level'], excluded=ubeam_excluded_cells(config))
    refine_uniform(forest, config['mesh.init_level'])

    clamp = DirichletCondition(BoundarySegment('y', 0.0, cut_x, width), name='clamp')
    symmetry = DirichletCondition(BoundarySegment('x', width, 0.0, cut_y), components=(0,),
                                  values=(0.0, 0.0), name='symmetry')
    load = TractionLoad(BoundarySegment('x', 0.0, height - config['geometry.load_width'], height),
                        (-config['problem.load'], 0.0), name='leg_load')

    state = _state_problem(config, forest, [clamp, symmetry], [load])
    problem = _opt_problem(config, forest)
    logger.info(f"U-beam preset: {forest.n_active} cells, {state.n_dofs} dofs, "
                f"re-entrant corners {forest.reentrant_corners()}")
    return forest, state, problem


PRESET_BUILDERS = {
    'cantilever': preset_cantilever,
    'ubeam': preset_ubeam,
}


def build_preset(config):
    return PRESET_BUILDERS[config.preset](config)
