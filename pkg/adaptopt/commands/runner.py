"""
Outer optimization loop.

Per iteration: regularize -> solve state -> responses and sensitivities ->
(every `interval` iterations) criterion flags -> execute adaptation ->
transfer fields -> design update. After a mesh change the design is
re-evaluated on the new mesh so the update sees consistent sensitivities.
"""
import logging
import os
import time

import numpy as np

from adaptopt import __version__
from adaptopt.errors import EXIT_OK, EXIT_SOLVER_FAILURE, AdaptOptError
from adaptopt.models.adaptivity import (
    CriterionKind, configurational_forces, flags_cnf, flags_dens, flags_vnm, transfer_fields
)
from adaptopt.models.fem import solve_newton
from adaptopt.models.mesh import Forest, NodeLayout, execute_adaptation
from adaptopt.models.optimization import (
    compliance, design_update, pnorm_stress, relaxed_cell_von_mises, sensitivities, volume_constraint
)
from adaptopt.models.presets import build_preset
from adaptopt.models.regularization import HelmholtzFilter, beta_schedule, regularize
from adaptopt.models.run_config import IterationRecord
from adaptopt.utils.history import HistoryWriter, plot_history, write_summary
from adaptopt.utils.logging_config import log_iteration, log_run_event, track_error
from adaptopt.utils.vtk_writer import write_vtu

logger = logging.getLogger(__name__)

CONFIG_ECHO = 'config_resolved.txt'
HISTORY_CSV = 'history.csv'
SUMMARY_JSON = 'summary.json'
HISTORY_PLOT = 'history.png'
SNAPSHOT_DIR = 'snapshots'


# ----------------------------------------------------------------------
# snapshots
# ----------------------------------------------------------------------
def snapshot_payload(iteration, forest, state, densities, solution, forces, vm):
    return {
        'iteration': np.array(iteration),
        'forest': np.array(forest.dump()),
        'degree': np.array(state.degree),
        'rho': densities.rho.copy(),
        'rho_tilde': densities.rho_tilde.copy(),
        'rho_hat': densities.rho_hat.copy(),
        'vm': np.asarray(vm, dtype=float).copy(),
        'cnf': forces.forces.copy(),
        'u': solution.u.copy(),
    }


def write_snapshot(directory, name, payload):
    """Write <name>.npz (restorable state) and <name>.vtu (all fields)"""
    os.makedirs(directory, exist_ok=True)
    npz_path = os.path.join(directory, f'{name}.npz')
    np.savez_compressed(npz_path, **payload)

    forest = Forest.from_dump(str(payload['forest']))
    layout = NodeLayout(forest, int(payload['degree']), components=2)
    vtu_path = write_vtu(
        os.path.join(directory, name), layout,
        cell_data={'density': payload['rho_hat'], 'rho': payload['rho'],
                   'rho_tilde': payload['rho_tilde'], 'vm': payload['vm'],
                   'level': forest.levels().astype(float)},
        point_vectors={'cnf': payload['cnf'], 'displacement': payload['u'].reshape(-1, 2)}
    )
    return npz_path, vtu_path


def load_snapshot(path):
    """Forest, layout and field arrays of a snapshot written by write_snapshot"""
    with np.load(path, allow_pickle=False) as data:
        payload = {key: data[key] for key in data.files}
    forest = Forest.from_dump(str(payload['forest']))
    layout = NodeLayout(forest, int(payload['degree']), components=2)
    return forest, layout, payload


# ----------------------------------------------------------------------
# runner
# ----------------------------------------------------------------------
class RunResult:
    def __init__(self, status, output_dir, records, summary):
        self.status = status
        self.output_dir = output_dir
        self.records = records
        self.summary = summary

    @property
    def ok(self):
        return self.status == EXIT_OK

    def __repr__(self):
        return f'<RunResult status={self.status} iterations={len(self.records)}>'


class DesignEvaluation:
    """Responses and sensitivities of one design on one mesh"""

    def __init__(self, densities, solution):
        self.densities = densities
        self.solution = solution
        self.objective = None
        self.g_vol = None
        self.g_pvm = None
        self.sens = None

    def __repr__(self):
        return f"<DesignEvaluation objective={self.objective} cells={len(self.densities.rho)}>"


class OptimizationRunner:
    """Drives one optimization run and owns its artifacts"""

    def __init__(self, app, config, output_dir):
        self.app = app
        self.config = config
        self.output_dir = output_dir
        self.snapshot_dir = os.path.join(output_dir, SNAPSHOT_DIR)
        self.criterion = config.criterion()

        self.forest, self.state, self.problem = build_preset(config)
        self.filter = self._build_filter()

        initial = config.get('problem.initial_density', config['problem.volume_fraction'])
        self.rho = np.full(self.forest.n_active, float(initial))
        self.u = None
        self.objective_scale = None
        self.last_good = None
        self.adaptation_events = 0
        self.snapshots = []

    def _build_filter(self):
        return HelmholtzFilter(self.forest, self.config['filter.radius'], self.config['filter.boundary_coeff'],
                               self.config['filter.boundary_scaling'])

    def _solver_settings(self):
        cfg = self.app.config
        return {
            'load_steps': self.config['solver.load_steps'],
            'rtol': cfg.get('NEWTON_RTOL', 1e-9),
            'atol': cfg.get('NEWTON_ATOL', 1e-12),
            'max_iterations': cfg.get('NEWTON_MAX_ITERATIONS', 50),
            'max_halvings': cfg.get('LINE_SEARCH_MAX_HALVINGS', 12),
            'max_bisections': cfg.get('MAX_LOAD_BISECTIONS', 6),
        }

    def resolved_settings(self):
        """Everything the run uses, defaults included"""
        return {
            'version': __version__,
            'config': self.config.to_dict(),
            'solver': self._solver_settings(),
            'state': self.state.to_dict(),
            'material': self.state.material.to_dict(),
            'problem': self.problem.to_dict(),
            'filter': {
                **self.config.filter_params().to_dict(),
                'beta_schedule': [self.config['filter.beta_initial'], self.config['filter.beta_max'],
                                  self.config['filter.beta_interval']],
            },
            'criterion': self.criterion.to_dict(),
            'mesh': self.forest.to_dict(),
            'dofs': self.state.n_dofs,
        }

    def _criterion_flags(self, densities, solution, forces, vm):
        kind = self.criterion.kind
        if kind == CriterionKind.CNF:
            return flags_cnf(forces, self.criterion.c_r, self.criterion.c_c, self.forest), forces.f_max
        if kind == CriterionKind.DENS:
            return flags_dens(densities.rho_tilde, self.forest), None
        return flags_vnm(vm, self.criterion.c_r, self.criterion.c_c, self.forest), float(np.max(vm))

    def _constraint_rows(self, g_vol, g_pvm, sens):
        vbar = self.problem.vbar
        values = [g_vol / vbar]
        rows = [sens.volume / vbar]
        if self.problem.has_stress_constraint:
            values.append(g_pvm - 1.0)
            rows.append(sens.pnorm)
        return np.array(values), np.vstack(rows)

    def _adapt(self, flags):
        """Execute the flags and carry the design and the warm start over; True if the mesh changed"""
        old_forest = self.forest.copy()
        execute_adaptation(self.forest, flags)
        if self.forest.active_keys() == old_forest.active_keys():
            return False

        self.rho, self.u = transfer_fields(old_forest, self.forest, self.rho, self.u, self.state.degree)
        self.state.rebuild()
        self.filter = self._build_filter()
        self.problem.memory.reset()
        self.adaptation_events += 1
        return True

    def _evaluate(self, beta, solver):
        """Regularize, solve and differentiate the current design on the current mesh"""
        epsilon = self.problem.epsilon
        densities = regularize(self.rho, self.filter, beta, self.config['filter.eta'])
        self.state.set_density(densities.rho_hat)
        solution = solve_newton(self.state, u0=self.u, **solver)
        self.u = solution.u

        evaluation = DesignEvaluation(densities, solution)
        evaluation.objective = compliance(self.state, solution)
        evaluation.g_vol = volume_constraint(self.rho, self.forest, self.problem.vbar)
        if self.problem.has_stress_constraint:
            evaluation.g_pvm = pnorm_stress(self.state, solution, self.problem.sigma_a, self.problem.p, epsilon)
        evaluation.sens = sensitivities(self.state, solution, densities, self.filter, self.forest, self.problem)
        return evaluation

    def _iterate(self, iteration, budget, solver):
        epsilon = self.problem.epsilon
        beta = beta_schedule(iteration, self.config['filter.beta_initial'], self.config['filter.beta_max'],
                             self.config['filter.beta_interval'])

        evaluation = self._evaluate(beta, solver)
        densities, solution = evaluation.densities, evaluation.solution
        forces = configurational_forces(self.state, solution, densities.rho_hat, epsilon,
                                        exclude_boundary=self.criterion.exclude_boundary,
                                        exclude_supports=self.criterion.exclude_supports)
        vm = relaxed_cell_von_mises(self.state, solution.u, epsilon)
        self.last_good = snapshot_payload(iteration, self.forest, self.state, densities, solution, forces, vm)

        snapshot_every = self.config['output.snapshot_every']
        if iteration == 1 or iteration % snapshot_every == 0 or iteration == budget:
            self.snapshots.append(write_snapshot(self.snapshot_dir, f'iter_{iteration:04d}', self.last_good))

        record = IterationRecord(iteration, evaluation.objective, evaluation.g_vol, evaluation.g_pvm,
                                 self.forest.n_active, self.state.n_dofs, beta=beta)

        if self.criterion.is_due(iteration, budget):
            flags, record.indicator_max = self._criterion_flags(densities, solution, forces, vm)
            record.event = self._adapt(flags)
            log_run_event('adaptation', {
                'iteration': iteration,
                'criterion': self.criterion.kind.value,
                'flags': flags.to_dict(),
                'stats': self.forest.last_adaptation,
                'cells': self.forest.n_active,
                'changed': record.event
            })
            if record.event:
                # The update below needs sensitivities on the adapted mesh
                evaluation = self._evaluate(beta, solver)

        if self.objective_scale is None:
            self.objective_scale = abs(evaluation.objective) if evaluation.objective != 0 else 1.0
        sens = evaluation.sens
        values, rows = self._constraint_rows(evaluation.g_vol, evaluation.g_pvm, sens)
        self.rho, info = design_update(
            self.rho, values, {'objective': sens.objective / self.objective_scale, 'constraints': rows},
            self.problem.memory, self.problem.move
        )
        if info['fallback']:
            log_run_event('optimizer_fallback', {'iteration': iteration})
        return record

    def _record_failure(self, iteration, error):
        logger.error(f"Run aborted in iteration {iteration}: {error}")
        track_error(error.code.lower(), error, {'iteration': iteration, **error.to_dict()})
        log_run_event('run_aborted', {'iteration': iteration, 'code': error.code,
                                      'step': getattr(error, 'step', None)})
        if self.last_good is not None:
            self.snapshots.append(write_snapshot(self.snapshot_dir, 'last_good', self.last_good))

    def run(self):
        os.makedirs(self.output_dir, exist_ok=True)
        with open(os.path.join(self.output_dir, CONFIG_ECHO), 'w') as f:
            f.write(self.config.dumps())

        settings = self.resolved_settings()
        log_run_event('config_resolved', settings)
        logger.info(f"Run started: {self.config!r} -> {self.output_dir}")

        budget = self.config.iterations
        solver = self._solver_settings()
        status = EXIT_OK
        failure = None
        t_acc = 0.0

        with HistoryWriter(os.path.join(self.output_dir, HISTORY_CSV)) as history:
            for iteration in range(1, budget + 1):
                start = time.perf_counter()
                try:
                    record = self._iterate(iteration, budget, solver)
                except AdaptOptError as e:
                    status = EXIT_SOLVER_FAILURE
                    failure = e
                    self._record_failure(iteration, e)
                    break

                record.dt = time.perf_counter() - start
                t_acc += record.dt
                record.t_acc = t_acc
                history.append(record)
                log_iteration(record)
                logger.info(
                    f"it {iteration:4d}: objective={record.objective:.6e} g_vol={record.g_vol:+.3e}"
                    + (f" g_pvm={record.g_pvm:.4f}" if record.g_pvm is not None else '')
                    + f" cells={record.cells}" + (' [adapted]' if record.event else '')
                )
            records = list(history.records)

        summary = self._summary(status, records, failure)
        write_summary(os.path.join(self.output_dir, SUMMARY_JSON), summary)
        if self.config['output.plot'] and records:
            plot_history(os.path.join(self.output_dir, HISTORY_PLOT), records, title=self.config.run_name())

        log_run_event('run_finished', summary)
        logger.info(f"Run finished with status {status} after {len(records)} iterations")
        return RunResult(status, self.output_dir, records, summary)

    def _summary(self, status, records, failure):
        summary = {
            'status': status,
            'preset': self.config.preset,
            'criterion': self.criterion.kind.value,
            'iterations': len(records),
            'adaptation_events': self.adaptation_events,
            'final_cells': self.forest.n_active,
            'max_level': int(self.forest.max_active_level()),
            'snapshots': [os.path.basename(vtu) for _, vtu in self.snapshots],
            'seed': self.config.get('run.seed'),
        }
        if records:
            last = records[-1]
            summary.update({
                'objective': last.objective,
                'g_vol': last.g_vol,
                'g_pvm': last.g_pvm,
                'volume_satisfied': last.g_vol <= 1e-3 * self.problem.vbar,
                'accumulated_time': last.t_acc,
                'peak_cells': max(r.cells for r in records),
            })
        if failure is not None:
            summary['failure'] = failure.to_dict()
        return summary


def run_optimization(app, config, output_dir):
    """Build and execute a runner; returns a RunResult"""
    return OptimizationRunner(app, config, output_dir).run()
