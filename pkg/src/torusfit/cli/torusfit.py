#!/usr/bin/env python3
"""
torusfit command line

Subcommands:
    sweep-isochrone  frequency-labelled 1D isochrone fits over an (N, omega) lattice
    fit              one torus fit (unlabelled, action- or frequency-labelled)
    probe            action-grid probing from a seed torus
    section          Poincare sections of a fitted torus vs an integrated orbit
    validate         check a config without running anything

Every command takes --config PATH, repeatable --set dotted.key=VALUE,
--output DIR and --verbose. Results go to the output directory together
with config.resolved.json; logs and run metrics go to <output>/logs.

Usage:
    torusfit fit --config config/log_box_unlabelled.json --section
    torusfit probe --config config/log_box_probe.json --seed-report output/log_box/report.json
"""

import argparse
import logging
import sys
from concurrent.futures import ThreadPoolExecutor, as_completed
from datetime import datetime
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from torusfit import __version__
from torusfit.core.dynamics import IsochroneSystem
from torusfit.core.errors import DegenerateTorusError, IntegrationError, NonFiniteResidualError, SectionError
from torusfit.core.model import ThetaGrid, TorusModel, initial_guess
from torusfit.core.objective import ObjectiveSpec, solve_frequencies
from torusfit.core.probe import ProbeState, accepted_from_summary, probe, summary_rows, write_probe_outputs
from torusfit.core.solver import FitReport, fit
from torusfit.plots import figures
from torusfit.utils.config import RunConfig, load_config
from torusfit.utils.io import read_csv, write_csv, write_json
from torusfit.utils.metrics import FitMetricsCollector, rotate_metrics
from torusfit.verify.sections import (
    SectionComparison,
    compare_sections,
    constructed_orbit,
    orbit_section,
    section_from_model,
    section_to_csv,
    trajectory_to_csv,
)

logger = logging.getLogger('torusfit')

BANNER = "=" * 60


def _setup_logging(output_dir: Path, verbose: bool = False) -> Path:
    """Log to <output>/logs/torusfit_<stamp>.log and stdout."""
    logs_dir = output_dir / 'logs'
    logs_dir.mkdir(parents=True, exist_ok=True)
    log_file = logs_dir / f"torusfit_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log"

    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format='%(asctime)s - %(levelname)s - %(message)s',
        handlers=[
            logging.FileHandler(log_file),
            logging.StreamHandler(sys.stdout)
        ],
        force=True,
    )
    logger.info(f"Logging to: {log_file}")
    return log_file


# Sweep

def _sweep_cell(system: IsochroneSystem, N: int, omega: float, grid: ThetaGrid, scale: float,
                config: RunConfig, output_dir: Path) -> Dict:
    spec = ObjectiveSpec.frequency_labelled([omega], max_condition=float(config['objective']['max_condition']))
    init = initial_guess('1d-odd', N, scale=scale)
    expected = system.energy_for_frequency(omega)
    record = {'N': N, 'omega': omega, 'initial_scale': scale, 'energy_expected': expected}
    with FitMetricsCollector(command='sweep-isochrone', output_dir=output_dir, system=system.name,
                             family='1d-odd', label='frequencies') as metrics:
        try:
            report = fit(system, grid, spec, init, config.sweep_solver_options())
        except NonFiniteResidualError as e:
            logger.warning(f"Cell N={N} omega={omega:g}: {e}")
            metrics.complete(success=False, error_type=type(e).__name__, error_message=str(e))
            record.update(sigma=float('nan'), objective=float('nan'), per_point_objective=float('nan'),
                          energy=float('nan'), energy_error=float('nan'), iterations=0,
                          reason='non-finite', converged=False)
            return record
        metrics.record_report(report)
    record.update(
        sigma=report.sigma,
        objective=report.objective,
        per_point_objective=report.per_point,
        energy=report.energy,
        energy_error=abs(report.energy - expected),
        iterations=report.iterations,
        reason=report.reason,
        converged=report.converged,
    )
    status = 'converged' if report.converged else 'NOT converged'
    message = (f"Cell N={N} omega={omega:g}: {status}, sigma={report.sigma:.3e}, "
               f"H={report.energy:.10f} (expected {expected:.10f}), reason={report.reason}")
    if report.converged:
        logger.info(message)
    else:
        logger.warning(message)
    return record


SWEEP_COLUMNS = ['N', 'omega', 'initial_scale', 'sigma', 'objective', 'per_point_objective', 'energy',
                 'energy_expected', 'energy_error', 'iterations', 'reason', 'converged']


def cmd_sweep_isochrone(config: RunConfig, output_dir: Path, plot: bool = True) -> List[Dict]:
    """
    Frequency-labelled isochrone fits over sweep.N x sweep.omega from the unit-circle guess.

    Returns:
        One record per cell, sorted by (N, omega)
    """
    system = config.system()
    if not isinstance(system, IsochroneSystem):
        raise ValueError(f"Invalid config field 'system.name': sweep-isochrone needs the isochrone, "
                         f"got '{system.name}'")
    sweep = config['sweep']
    grid = ThetaGrid(n=1, points=int(sweep['grid_points']))
    scale = float(sweep['initial_scale'])
    cells = [(int(N), float(omega)) for N in sweep['N'] for omega in sweep['omega']]
    logger.info(f"Sweep: {len(cells)} cells, M={grid.size}, initial radius {scale:g}, workers={sweep['workers']}")

    records = []
    with ThreadPoolExecutor(max_workers=int(sweep['workers'])) as executor:
        future_to_cell = {
            executor.submit(_sweep_cell, system, N, omega, grid, scale, config, output_dir): (N, omega)
            for N, omega in cells
        }
        for future in as_completed(future_to_cell):
            records.append(future.result())
    records.sort(key=lambda r: (r['N'], r['omega']))

    write_csv(output_dir / 'sweep.csv', SWEEP_COLUMNS, ([r[c] for c in SWEEP_COLUMNS] for r in records))
    if plot:
        figures.sweep_contour(records, output_dir / 'sigma.svg')
    converged = sum(1 for r in records if r['converged'])
    logger.info(f"Sweep finished: {converged}/{len(records)} cells converged")
    return records


# Fit

def _log_report(report: FitReport) -> None:
    logger.info(f"  reason:      {report.reason} after {report.iterations} iterations")
    logger.info(f"  objective:   {report.objective:.6e} (per point {report.per_point:.3e})")
    logger.info(f"  sigma(H):    {report.sigma:.6e}")
    logger.info(f"  energy:      {report.energy:.12g}")
    logger.info(f"  actions J:   {np.round(report.actions, 8).tolist()}")
    logger.info(f"  omega:       {np.round(report.omega, 8).tolist()}")
    logger.info(f"  consistency: {report.consistency:.6e}")
    logger.info(f"  converged:   {report.converged}")


def cmd_fit(config: RunConfig, output_dir: Path, section: bool = False, plot: bool = True) -> FitReport:
    """Run one fit; writes model.json and report.json (plus the section outputs on request)."""
    system = config.system()
    init = config.initial_model()
    spec = config.objective_spec()
    with FitMetricsCollector(command='fit', output_dir=output_dir, system=system.name,
                             family=init.family, label=spec.label) as metrics:
        report = fit(system, config.theta_grid(), spec, init, config.solver_options())
        metrics.record_report(report)
    report.model.save(output_dir / 'model.json')
    report.save(output_dir / 'report.json')
    _log_report(report)
    if not report.converged:
        logger.warning(f"Fit did not reach the convergence threshold "
                       f"({report.options.convergence_threshold:g} per grid point)")
    if section:
        if report.reason == 'degenerate':
            logger.warning("Skipping sections: the fitted torus is degenerate")
        else:
            run_sections(config, report.model, report.omega, output_dir, plot=plot)
    return report


# Probe

def _load_seed(config: RunConfig, seed_report: Optional[str], seed_model: Optional[str],
               seed_actions: Optional[Sequence[float]]) -> Tuple[TorusModel, np.ndarray, Optional[FitReport]]:
    probe_cfg = config['probe']
    seed_report = seed_report or probe_cfg['seed_report']
    seed_model = seed_model or probe_cfg['seed_model']
    if seed_actions is None and probe_cfg['seed_actions'] is not None:
        seed_actions = probe_cfg['seed_actions']
    if seed_report:
        report = FitReport.load(seed_report)
        actions = np.asarray(seed_actions if seed_actions is not None else report.actions, dtype=float)
        return report.model, actions, report
    if seed_model and seed_actions is not None:
        return TorusModel.load(seed_model), np.asarray(seed_actions, dtype=float), None
    raise ValueError("Invalid config field 'probe.seed_report': probe needs a seed report, "
                     "or a seed model together with seed actions")


def _accepted_points(state: ProbeState, space: str) -> np.ndarray:
    points = []
    for index, result in state.accepted.items():
        if space == 'actions':
            points.append(state.grid.actions(index))
        else:
            points.append(np.asarray(result.omega, dtype=float))
    return np.array(points).reshape(-1, state.grid.n)


def _summary_points(rows: Sequence[Dict[str, str]], n: int, prefix: str) -> np.ndarray:
    points = [[float(row[f'{prefix}{h + 1}']) for h in range(n)] for row in rows if row.get('accepted') == 'true']
    return np.array(points).reshape(-1, n)


def cmd_probe(config: RunConfig, output_dir: Path, seed_report: Optional[str] = None,
              seed_model: Optional[str] = None, seed_actions: Optional[Sequence[float]] = None,
              exclude_summary: Optional[str] = None, plot: bool = True) -> ProbeState:
    """Probe the action lattice from a seed; writes reports/, summary.csv and probe.json."""
    system = config.system()
    model, actions, _ = _load_seed(config, seed_report, seed_model, seed_actions)
    if model.n != system.n:
        raise ValueError(f"Invalid config field 'probe.seed_model': seed has n={model.n}, "
                         f"system has n={system.n}")
    options = config.probe_options()
    logger.info(f"Seed: family={model.family} N={model.N} J*={np.round(actions, 6).tolist()} "
                f"rho={config.resolved_consistency_weight(model):.3e}")

    with FitMetricsCollector(command='probe', output_dir=output_dir, system=system.name,
                             family=model.family, label='actions') as metrics:
        state = probe(system, config.theta_grid(), config.action_grid(), actions, model,
                      spec=config.probe_spec(), options=options, solver_options=config.solver_options())
        metrics.complete(success=True, custom_data=state.summary())

    write_probe_outputs(state, output_dir)
    start = state.grid.nearest_point(actions)
    document = {
        'kind': 'probe-run',
        'family': model.family,
        'seed_actions': actions,
        'seed_index': list(start),
        'threshold': options.threshold,
        'generations': [[list(idx) for idx in generation] for generation in state.generations],
        'summary': state.summary(),
    }

    if not state.generations:
        seed_record = state.records[start]
        logger.warning(f"Seed fit at {start} was rejected; nothing to expand "
                       f"(objective {getattr(seed_record.result, 'objective', float('nan')):.3e}, "
                       f"threshold {options.threshold:g})")
        if isinstance(seed_record.result, FitReport):
            seed_record.result.save(output_dir / 'seed_report.json')
            document['seed_report'] = 'seed_report.json'

    runs = {model.family: _accepted_points(state, 'actions')}
    frequency_runs = {model.family: _accepted_points(state, 'frequencies')}
    if exclude_summary or config['probe']['exclude_summary']:
        other_path = exclude_summary or config['probe']['exclude_summary']
        rows = read_csv(other_path)
        overlap = sorted(set(state.accepted) & accepted_from_summary(rows))
        document['overlap'] = [list(idx) for idx in overlap]
        document['exclude_summary'] = str(other_path)
        if overlap:
            logger.warning(f"{len(overlap)} lattice points accepted by both runs: {overlap}")
        else:
            logger.info(f"No lattice point accepted by both runs ({other_path})")
        other = 'other' if model.family != 'other' else 'reference'
        runs[other] = _summary_points(rows, state.grid.n, 'J')
        frequency_runs[other] = _summary_points(rows, state.grid.n, 'omega')

    write_json(output_dir / 'probe.json', document)
    if plot and state.grid.n == 2:
        figures.probe_scatter(runs, output_dir / 'probe_actions.svg', space='actions')
        figures.probe_scatter(frequency_runs, output_dir / 'probe_frequencies.svg', space='frequencies')
    header, rows = summary_rows(state)
    logger.info(f"Probe: {state.summary()['accepted']} accepted of {len(rows)} fitted, "
                f"{len(state.generations)} generations")
    return state


# Sections

def run_sections(config: RunConfig, model: TorusModel, omega: Sequence[float], output_dir: Path,
                 plot: bool = True) -> SectionComparison:
    """
    Constructed vs integrated sections from the shared point eval(model, theta0).

    Writes sections.csv, trajectory.csv, section.json and (with plot) sections.svg and xy.svg.
    """
    system = config.system()
    if system.n != 2 or model.n != 2:
        raise ValueError(f"Invalid config field 'system.name': sections need a 2D system, "
                         f"got {system.name} with n={system.n}")
    section_cfg = config['section']
    theta0 = np.array(config.theta0())
    omega = np.asarray(omega, dtype=float)
    q0, p0 = model.evaluate(theta0)
    logger.info(f"Sections from theta0={np.round(theta0, 6).tolist()}: "
                f"q0={np.round(q0, 8).tolist()} p0={np.round(p0, 8).tolist()}")

    constructed = section_from_model(model, omega, theta0, crossings=int(section_cfg['crossings']),
                                     max_periods=float(section_cfg['max_periods']))
    trajectory, integrated = orbit_section(system, q0, p0, crossings=int(section_cfg['crossings']),
                                           tolerance=float(section_cfg['tolerance']),
                                           max_time=float(section_cfg['max_time']))
    if len(integrated) == 0:
        raise SectionError("The integrated orbit never crossed the section")
    comparison = compare_sections(constructed, integrated)
    bound = float(section_cfg['hausdorff_bound'])
    within = comparison.hausdorff < bound

    section_to_csv([integrated, constructed], output_dir / 'sections.csv')
    trajectory_to_csv(trajectory, output_dir / 'trajectory.csv')
    write_json(output_dir / 'section.json', {
        'kind': 'section-comparison',
        'theta0': theta0,
        'omega': omega,
        'hausdorff': comparison.hausdorff,
        'mean_nearest': comparison.mean_nearest,
        'hausdorff_bound': bound,
        'within_bound': within,
        'integrated_crossings': len(integrated),
        'constructed_crossings': len(constructed),
        'integration_time': float(trajectory.t[-1]),
        'energy_sigma': trajectory.energy_sigma,
        'energy_drift': trajectory.energy_drift,
    })
    logger.info(f"Hausdorff distance {comparison.hausdorff:.3e}, mean nearest {comparison.mean_nearest:.3e}, "
                f"orbit energy sigma {trajectory.energy_sigma:.3e}")
    if not within:
        logger.warning(f"Section distance {comparison.hausdorff:.3e} exceeds the bound {bound:g}")

    if plot and section_cfg['plot']:
        figures.section_overlay([integrated, constructed], output_dir / 'sections.svg')
        torus_q, _ = constructed_orbit(model, omega, theta0, trajectory.t)
        figures.xy_overlay(trajectory.q, torus_q, output_dir / 'xy.svg')
    return comparison


def cmd_section(config: RunConfig, output_dir: Path, model_path: Optional[str] = None,
                report_path: Optional[str] = None, plot: bool = True) -> SectionComparison:
    """Sections of a saved torus; omega comes from its report, or is re-solved on the config grid."""
    section_cfg = config['section']
    report_path = report_path or section_cfg['report']
    model_path = model_path or section_cfg['model']
    if report_path:
        report = FitReport.load(report_path)
        model, omega = report.model, report.omega
        if model_path:
            model = TorusModel.load(model_path)
    elif model_path:
        model = TorusModel.load(model_path)
        omega = solve_frequencies(model, config.theta_grid(), config.system(),
                                  max_condition=float(config['objective']['max_condition']))
    else:
        raise ValueError("Invalid config field 'section.model': section needs a model or a report")
    return run_sections(config, model, omega, output_dir, plot=plot)


def cmd_validate(config: RunConfig) -> int:
    system = config.system()
    logger.info(f"Config valid: system={system.name} n={system.n} family={config['model']['family']} "
                f"N={config['model']['N']} label={config['objective']['label']}")
    for message in config.warnings:
        logger.warning(message)
    return 0


def _parse_actions(text: Optional[str]) -> Optional[List[float]]:
    if text is None:
        return None
    try:
        return [float(v) for v in text.split(',')]
    except ValueError:
        raise ValueError(f"Invalid --seed-actions '{text}': expected comma-separated numbers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='torusfit',
        description=f'torusfit v{__version__} - invariant torus construction by Fourier least squares'
    )
    parser.add_argument('--version', action='version', version=f'torusfit {__version__}')
    subparsers = parser.add_subparsers(dest='command', required=True)

    def add_common(sub: argparse.ArgumentParser) -> None:
        sub.add_argument('--config', help='Run config (JSON); defaults apply when omitted')
        sub.add_argument('--set', action='append', default=[], metavar='KEY=VALUE',
                         help='Override a config field, e.g. --set model.N=24 (repeatable)')
        sub.add_argument('--output', help='Output directory (default: config output_dir or $TORUSFIT_OUTPUT_DIR)')
        sub.add_argument('--verbose', action='store_true', help='Debug logging (per-iteration trace)')
        sub.add_argument('--no-plots', action='store_true', help='Skip SVG figures')

    sweep = subparsers.add_parser('sweep-isochrone', help='Isochrone (N, omega) convergence sweep')
    add_common(sweep)

    fit_cmd = subparsers.add_parser('fit', help='Fit one torus')
    add_common(fit_cmd)
    fit_cmd.add_argument('--section', action='store_true', help='Also emit the Poincare-section overlay')

    probe_cmd = subparsers.add_parser('probe', help='Action-grid probing from a seed torus')
    add_common(probe_cmd)
    probe_cmd.add_argument('--seed-report', help='FitReport JSON of the seed (usually an unlabelled fit)')
    probe_cmd.add_argument('--seed-model', help='Torus model JSON of the seed')
    probe_cmd.add_argument('--seed-actions', help='Seed actions J1,J2 (with --seed-model)')
    probe_cmd.add_argument('--exclude-summary', help="Other family run's summary.csv to check for overlaps")

    section_cmd = subparsers.add_parser('section', help='Poincare sections of a fitted torus')
    add_common(section_cmd)
    section_cmd.add_argument('--model', help='Torus model JSON')
    section_cmd.add_argument('--report', help='FitReport JSON (provides the model and omega)')

    validate_cmd = subparsers.add_parser('validate', help='Validate a config and exit')
    add_common(validate_cmd)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns the process exit code (0 ok, 1 fatal error)."""
    parser = build_parser()
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config, args.set)
    except ValueError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1

    output_dir = Path(args.output) if args.output else config.output_dir
    output_dir.mkdir(parents=True, exist_ok=True)
    _setup_logging(output_dir, args.verbose)
    plot = not args.no_plots

    logger.info(BANNER)
    logger.info(f"torusfit {args.command} (v{__version__})")
    logger.info(f"Config: {args.config or 'defaults'}; output: {output_dir}")
    logger.info(BANNER)

    try:
        if args.command == 'validate':
            return cmd_validate(config)
        rotate_metrics(output_dir)
        config.write_resolved(output_dir)
        if args.command == 'sweep-isochrone':
            cmd_sweep_isochrone(config, output_dir, plot=plot)
        elif args.command == 'fit':
            cmd_fit(config, output_dir, section=args.section, plot=plot)
        elif args.command == 'probe':
            cmd_probe(config, output_dir, seed_report=args.seed_report, seed_model=args.seed_model,
                      seed_actions=_parse_actions(args.seed_actions),
                      exclude_summary=args.exclude_summary, plot=plot)
        elif args.command == 'section':
            cmd_section(config, output_dir, model_path=args.model, report_path=args.report, plot=plot)
    except (ValueError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    except (NonFiniteResidualError, DegenerateTorusError, IntegrationError, SectionError) as e:
        logger.error(f"{args.command} failed: {type(e).__name__}: {e}")
        return 1
    finally:
        logger.info(BANNER)

    logger.info(f"torusfit {args.command} finished; results in {output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
