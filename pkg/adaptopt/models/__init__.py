# Import the core types so they are available from the package
from .mesh import (
    AdaptFlag, AdaptFlags, ConstraintSet, Forest, NodeLayout, build_hanging_constraints,
    create_base_mesh, execute_adaptation, refine_uniform
)
from .mechanics import MaterialParams, Kinematics, StressState
from .fem import (
    BoundarySegment, DirichletCondition, TractionLoad, StateProblem, ElementState, Solution,
    assemble, solve_newton
)
from .regularization import FilterParams, HelmholtzFilter, DensityFields, regularize
from .optimization import OptProblem, ProblemKind, MMAState, Sensitivities, design_update, sensitivities
from .adaptivity import CriterionConfig, CriterionKind, NodalForceField, configurational_forces, transfer_fields
from .run_config import RunConfig, IterationRecord, load_config
from .presets import preset_cantilever, preset_ubeam

__all__ = [
    'AdaptFlag', 'AdaptFlags', 'ConstraintSet', 'Forest', 'NodeLayout', 'build_hanging_constraints',
    'create_base_mesh', 'execute_adaptation', 'refine_uniform',
    'MaterialParams', 'Kinematics', 'StressState',
    'BoundarySegment', 'DirichletCondition', 'TractionLoad', 'StateProblem', 'ElementState', 'Solution',
    'assemble', 'solve_newton',
    'FilterParams', 'HelmholtzFilter', 'DensityFields', 'regularize',
    'OptProblem', 'ProblemKind', 'MMAState', 'Sensitivities', 'design_update', 'sensitivities',
    'CriterionConfig', 'CriterionKind', 'NodalForceField', 'configurational_forces', 'transfer_fields',
    'RunConfig', 'IterationRecord', 'load_config',
    'preset_cantilever', 'preset_ubeam'
]
