"""
Command-line entry point for the exceptional nexus toolkit.
"""
import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import yaml

from src.complex_linalg import eigensystem
from src.config import Config
from src.dynamics import basis_state, decay_snapshot, default_time_grid, evolve, evolve_piecewise, synth_dataset
from src.figures import DEFAULT_SEED, FIGURE_IDS, build_figure
from src.fitting import extract_alpha, fit_two_rate
from src.model import build_hamiltonian
from src.perturbation import (
    CONVENTIONS,
    DIAGONAL,
    MIXED,
    berry_phase,
    branch_permutation,
    loop_spectrum,
    perturbation_case,
    scaling_exponents,
)
from src.result_io import (
    branches_frame,
    read_dataset,
    result_document,
    schema_text,
    write_csv,
    write_dataset,
    write_json,
)
from src.spectral_atlas import locate_ex, sweep_spectrum, trace_arcs
from src.utils import NexusError, NotConvergedError, ParamPoint, TrackingLostError, setup_logging

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FLAGGED = 4

CASE_ALIASES = {'diag': DIAGONAL, DIAGONAL: DIAGONAL, MIXED: MIXED}


class InputFileError(Exception):
    """A data or configuration file could not be read."""


def grid_range(text: str):
    """Parse `min:max:n` into (min, max, n)."""
    parts = text.split(':')
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected min:max:n, got '{text}'")
    try:
        lo, hi, n = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected min:max:n, got '{text}'")
    if not (math.isfinite(lo) and math.isfinite(hi)) or lo < 0 or hi < lo or n < 1:
        raise argparse.ArgumentTypeError(f"need 0 <= min <= max and n >= 1, got '{text}'")
    if n > 1 and hi == lo:
        raise argparse.ArgumentTypeError(f"need min < max for n > 1, got '{text}'")
    return lo, hi, n


def non_negative(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: '{text}'")
    if not math.isfinite(value) or value < 0:
        raise argparse.ArgumentTypeError(f"must be finite and >= 0, got '{text}'")
    return value


def positive(text: str) -> float:
    value = non_negative(text)
    if value == 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got '{text}'")
    return value


def positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: '{text}'")
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got '{text}'")
    return value


def seed_value(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: '{text}'")
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be an unsigned 64-bit integer, got '{text}'")
    return value


def linspace(grid) -> np.ndarray:
    lo, hi, n = grid
    return np.linspace(lo, hi, n)


def build_parser() -> argparse.ArgumentParser:
    """Argument grammar: global options, then one subcommand."""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', default=argparse.SUPPRESS, help='configuration file (default config.yaml)')
    common.add_argument('--out', default=argparse.SUPPRESS, help='output directory (default output.directory)')

    parser = argparse.ArgumentParser(
        prog='exnexus',
        description='Exceptional points and the exceptional nexus of a three-level dissipative system',
        parents=[common],
    )
    parser.add_argument('--schema', action='store_true', help='print CSV columns and the JSON schema, then exit')
    sub = parser.add_subparsers(dest='command')

    p = sub.add_parser('spectrum', parents=[common], help='tracked eigenvalues along a Γ̄ grid')
    p.add_argument('--w', type=non_negative, required=True)
    p.add_argument('--gamma', type=grid_range, required=True, help='min:max:n')

    p = sub.add_parser('arcs', parents=[common], help='both exceptional arcs over a w grid')
    p.add_argument('--w', type=grid_range, required=True, help='min:max:n with min >= 2√2')

    sub.add_parser('nexus', parents=[common], help='location, eigenvalue and eigenvector of the nexus')

    p = sub.add_parser('perturb', parents=[common], help='loop spectrum and splitting exponents')
    p.add_argument('--case', choices=sorted(CASE_ALIASES), required=True)
    p.add_argument('--eps', type=positive, default=None)
    p.add_argument('--samples', type=positive_int, default=None)
    p.add_argument('--theta', type=float, default=None, help='direction of the exponent sweep')

    p = sub.add_parser('berry', parents=[common], help='Berry phases around the nexus')
    p.add_argument('--case', choices=sorted(CASE_ALIASES), required=True)
    p.add_argument('--eps', type=positive, default=None)
    p.add_argument('--samples', type=positive_int, default=None)
    p.add_argument('--convention', choices=CONVENTIONS, default=None)

    p = sub.add_parser('evolve', parents=[common], help='population dynamics from a basis state')
    p.add_argument('--w', type=non_negative, required=True)
    p.add_argument('--gamma', type=non_negative, required=True)
    p.add_argument('--gamma2', type=non_negative, default=None)
    p.add_argument('--tm', type=non_negative, default=None)
    p.add_argument('--tmax', type=positive, default=None)
    p.add_argument('--steps', type=positive_int, default=None)
    p.add_argument('--init', type=int, choices=(1, 2, 3), default=2)

    p = sub.add_parser('snapshot', parents=[common], help='N(t0) across a Γ̄ grid')
    p.add_argument('--w', type=non_negative, required=True)
    p.add_argument('--t0', type=positive, default=None)
    p.add_argument('--gamma', type=grid_range, required=True, help='min:max:n')

    p = sub.add_parser('synth', help='synthetic two-rate dataset')
    p.add_argument('--config', default=argparse.SUPPRESS)
    p.add_argument('--w', type=non_negative, required=True)
    p.add_argument('--gamma1', type=non_negative, required=True)
    p.add_argument('--gamma2', type=non_negative, required=True)
    p.add_argument('--tm', type=non_negative, required=True)
    p.add_argument('--sigma', type=non_negative, required=True)
    p.add_argument('--reps', type=positive_int, required=True)
    p.add_argument('--seed', type=seed_value, required=True)
    p.add_argument('--tmax', type=positive, default=None)
    p.add_argument('--steps', type=positive_int, default=None)
    p.add_argument('--out', dest='dataset', required=True, help='dataset CSV path')

    p = sub.add_parser('fit', parents=[common], help='two-rate fit of a dataset')
    p.add_argument('--data', required=True)
    p.add_argument('--w', type=non_negative, default=None)
    p.add_argument('--nominal-gamma', dest='nominal_gamma', type=non_negative, default=None)

    p = sub.add_parser('alpha', parents=[common], help='α exponent from decay snapshots')
    p.add_argument('--w', type=non_negative, required=True)
    p.add_argument('--t0', type=positive, default=None)
    p.add_argument('--gamma', type=grid_range, required=True, help='min:max:n')

    p = sub.add_parser('figure', parents=[common], help='data tables behind a figure')
    p.add_argument('figure_id', choices=FIGURE_IDS)
    p.add_argument('--seed', type=seed_value, default=None)

    return parser


class NexusApp:
    """Runs one subcommand against a loaded configuration."""

    def __init__(self, config_path: str = "config.yaml", out_dir: Optional[str] = None):
        """
        Initialize the application.

        Args:
            config_path: Path to configuration file
            out_dir: Output directory, overriding output.directory

        Raises:
            InputFileError: Configuration missing, unreadable or incomplete
        """
        try:
            self.config = Config(config_path)
        except (OSError, yaml.YAMLError) as exc:
            raise InputFileError(f"cannot read configuration {config_path}: {exc}")

        if not self.config.validate_required_fields():
            raise InputFileError("Invalid configuration: missing required fields")

        self._init_logging()
        output = self.config.get_output_config()
        self.out_dir = Path(out_dir or output.get('directory', 'results'))
        self.digits = int(output.get('csv_digits', 17))
        self.max_workers = self.config.max_workers()
        self.commands: Dict[str, Callable[[argparse.Namespace], int]] = {
            'spectrum': self.spectrum,
            'arcs': self.arcs,
            'nexus': self.nexus,
            'perturb': self.perturb,
            'berry': self.berry,
            'evolve': self.evolve,
            'snapshot': self.snapshot,
            'synth': self.synth,
            'fit': self.fit,
            'alpha': self.alpha,
            'figure': self.figure,
        }

    def _init_logging(self) -> None:
        self.logger = setup_logging(self.config.get_logging_config())
        self.logger.debug("Configuration loaded from %s", self.config.config_path)

    def dispatch(self, args: argparse.Namespace) -> int:
        """Run the selected subcommand and return its exit code."""
        self.logger.info("Running %s", args.command)
        return self.commands[args.command](args)

    def _emit(self, command: str, parameters: Dict[str, Any], results: Dict[str, Any],
              tables: Optional[Dict[str, pd.DataFrame]] = None, flagged: bool = False,
              error: Optional[str] = None, seed: Optional[int] = None) -> Path:
        names: List[str] = []
        for name, frame in (tables or {}).items():
            file_name = f'{name}.csv'
            write_csv(self.out_dir / file_name, frame, digits=self.digits)
            names.append(file_name)
        document = result_document(command, parameters, results, names, flagged=flagged, error=error, seed=seed)
        return write_json(self.out_dir / f'{command}.json', document)

    def _flag(self, command: str, parameters: Dict[str, Any], exc: Exception,
              results: Optional[Dict[str, Any]] = None,
              tables: Optional[Dict[str, pd.DataFrame]] = None) -> int:
        self.logger.warning("%s flagged: %s", command, exc)
        self._emit(command, parameters, results or {}, tables, flagged=True, error=str(exc))
        print(f"{command}: flagged ({exc})")
        return EXIT_FLAGGED

    def _time_grid(self, args: argparse.Namespace) -> np.ndarray:
        dynamics = self.config.get_dynamics_config()
        t_max = args.tmax if args.tmax is not None else float(dynamics.get('t_max', 3.0))
        steps = args.steps if args.steps is not None else int(dynamics.get('steps', 200))
        return default_time_grid(t_max, steps)

    def spectrum(self, args: argparse.Namespace) -> int:
        spectrum_config = self.config.get_spectrum_config()
        branches = sweep_spectrum(args.w, linspace(args.gamma), max_workers=self.max_workers)
        flags = branches.ep_flags(
            gap_tol=float(spectrum_config.get('ep_gap_tol', 1e-6)),
            overlap_tol=float(spectrum_config.get('ep_overlap_tol', 1e-6)),
        )
        table = branches_frame('gamma', branches.grid, branches.branches)
        table['ep_flag'] = [int(n in flags) for n in range(len(branches.grid))]
        results = {
            'ep_gammas': [float(branches.grid[n]) for n in flags],
            'coalesced_gammas': [float(branches.grid[n]) for n in branches.coalesced],
        }
        self._emit('spectrum', {'w': args.w, 'gamma': args.gamma}, results, {'spectrum': table})
        print(f"spectrum: w={args.w:g}, {len(branches.grid)} points, {len(flags)} flagged as EP")
        return EXIT_OK

    def arcs(self, args: argparse.Namespace) -> int:
        lo, hi, n = args.w
        records = trace_arcs(lo, hi, n, max_workers=self.max_workers,
                             bisection_steps=int(self.config.get('spectrum.bisection_steps', 60)))
        table = pd.DataFrame([{
            'w': r.location.w,
            'gamma': r.location.gamma,
            'arc': r.arc,
            'order': r.order,
            'value_re': r.value.real,
            'value_im': r.value.imag,
            'locator_residual': r.locator_residual,
        } for r in records])
        self._emit('arcs', {'w': args.w}, {'records': len(records)}, {'arcs': table})
        print(f"arcs: {len(records)} exceptional points over w in [{lo:g}, {hi:g}]")
        return EXIT_OK

    def nexus(self, args: argparse.Namespace) -> int:
        record = locate_ex()
        system = eigensystem(build_hamiltonian(record.location), strict=False)
        vector = system.vector(0)
        # global phase: largest component real and positive
        pivot = vector[int(np.argmax(np.abs(vector)))]
        vector = vector * (abs(pivot) / pivot)
        results = record.to_dict()
        results['coalesced_vector'] = [[float(x.real), float(x.imag)] for x in vector]
        results['residual'] = system.residual
        table = pd.DataFrame([{
            'w': record.location.w,
            'gamma': record.location.gamma,
            'order': record.order,
            'value_re': record.value.real,
            'value_im': record.value.imag,
            'locator_residual': record.locator_residual,
        }])
        self._emit('nexus', {}, results, {'nexus': table})
        print(f"nexus: w={record.location.w:.10f} gamma={record.location.gamma:.10f} "
              f"value={record.value.imag:.10f}i")
        return EXIT_OK

    def perturb(self, args: argparse.Namespace) -> int:
        settings = self.config.get_perturbation_config()
        case = perturbation_case(CASE_ALIASES[args.case])
        eps = args.eps if args.eps is not None else float(settings.get('eps', 0.1))
        samples = args.samples if args.samples is not None else int(settings.get('n_samples', 1024))
        theta = args.theta if args.theta is not None else float(settings.get('theta', 0.3))
        eps_grid = np.logspace(
            math.log10(float(settings.get('eps_min', 1e-4))),
            math.log10(float(settings.get('eps_max', 1e-2))),
            int(settings.get('eps_points', 12)),
        )
        parameters = {'case': case.kind, 'eps': eps, 'samples': samples, 'theta': theta}
        try:
            fits = scaling_exponents(case, theta, eps_grid)
        except TrackingLostError as exc:
            return self._flag('perturb', parameters, exc)
        results: Dict[str, Any] = {'exponents': [f.to_dict() for f in fits]}
        try:
            thetas, branches = loop_spectrum(case, eps, samples)
            results['permutation'] = list(branch_permutation(case, eps, samples))
        except TrackingLostError as exc:
            return self._flag('perturb', parameters, exc, results=results)
        self._emit('perturb', parameters, results, {'perturb': branches_frame('theta', thetas, branches)})
        exponents = ', '.join(f'{f.exponent:.4f}' for f in fits)
        print(f"perturb: {case.kind} case, exponents {exponents}")
        return EXIT_OK

    def berry(self, args: argparse.Namespace) -> int:
        settings = self.config.get_perturbation_config()
        case = perturbation_case(CASE_ALIASES[args.case])
        eps = args.eps if args.eps is not None else float(settings.get('eps', 0.1))
        samples = args.samples if args.samples is not None else int(settings.get('n_samples', 1024))
        convention = args.convention or settings.get('convention', 'biorthogonal')
        parameters = {'case': case.kind, 'eps': eps, 'samples': samples, 'convention': convention}
        try:
            phases = berry_phase(case, eps, samples, convention=convention)
        except TrackingLostError as exc:
            return self._flag('berry', parameters, exc)
        table = pd.DataFrame([r.to_dict() for r in phases]).drop(columns=['convention'])
        self._emit('berry', parameters, {'branches': [r.to_dict() for r in phases]}, {'berry': table})
        summary = ', '.join(f'{r.phase_over_pi:.4f}π/{r.cycles_to_closure}' for r in phases)
        print(f"berry: {case.kind} case, phase/cycles {summary}")
        return EXIT_OK

    def evolve(self, args: argparse.Namespace) -> int:
        times = self._time_grid(args)
        psi0 = basis_state(args.init)
        if args.gamma2 is None:
            gap = float(self.config.get('dynamics.gap_threshold', 1e-6))
            trace = evolve(ParamPoint(args.w, args.gamma), psi0, times, gap_threshold=gap)
        else:
            trace = evolve_piecewise(args.w, args.gamma, args.gamma2, args.tm, psi0, times)
        parameters = {
            'w': args.w, 'gamma': args.gamma, 'gamma2': args.gamma2, 'tm': args.tm,
            'tmax': float(times[-1]), 'steps': len(times), 'init': args.init,
        }
        results = {'final_total': float(trace.total[-1])}
        self._emit('evolve', parameters, results, {'evolve': trace.to_frame()})
        print(f"evolve: {len(times)} samples, N(t={times[-1]:g}) = {trace.total[-1]:.6f}")
        return EXIT_OK

    def _snapshot(self, args: argparse.Namespace):
        t0 = args.t0 if args.t0 is not None else float(self.config.get('dynamics.snapshot_t0', 0.8))
        return t0, decay_snapshot(args.w, linspace(args.gamma), t0, max_workers=self.max_workers)

    def snapshot(self, args: argparse.Namespace) -> int:
        t0, pairs = self._snapshot(args)
        table = pd.DataFrame(pairs, columns=['gamma', 'N_t0'])
        self._emit('snapshot', {'w': args.w, 't0': t0, 'gamma': args.gamma}, {'points': len(pairs)},
                   {'snapshot': table})
        print(f"snapshot: w={args.w:g}, t0={t0:g}, {len(pairs)} points")
        return EXIT_OK

    def alpha(self, args: argparse.Namespace) -> int:
        t0, pairs = self._snapshot(args)
        curve = extract_alpha(pairs, t0, w=args.w)
        table = pd.DataFrame(curve.samples, columns=['gamma', 'alpha'])
        results = {'dropped_gammas': curve.dropped}
        self._emit('alpha', {'w': args.w, 't0': t0, 'gamma': args.gamma}, results, {'alpha': table})
        print(f"alpha: w={args.w:g}, {len(curve.samples)} points, {len(curve.dropped)} dropped")
        return EXIT_OK

    def synth(self, args: argparse.Namespace) -> int:
        rng = np.random.default_rng(args.seed)
        dataset = synth_dataset(args.w, args.gamma1, args.gamma2, args.tm, args.sigma, args.reps,
                                self._time_grid(args), rng)
        dataset.provenance['seed'] = args.seed
        path = write_dataset(args.dataset, dataset, digits=self.digits)
        print(f"synth: {len(dataset.records)} records written to {path}")
        return EXIT_OK

    def fit(self, args: argparse.Namespace) -> int:
        try:
            data = read_dataset(args.data, w=args.w, nominal_gamma=args.nominal_gamma)
        except (OSError, ValueError) as exc:
            raise InputFileError(str(exc))
        fitting = self.config.get_fitting_config()
        parameters = {'data': str(args.data), 'w': data.w, 'nominal_gamma': data.nominal_gamma}

        flagged: Optional[NotConvergedError] = None
        try:
            result = fit_two_rate(
                data, data.w, data.nominal_gamma,
                max_iterations=int(fitting.get('max_iterations', 500)),
                rss_rtol=float(fitting.get('rss_rtol', 1e-8)),
                deviation_sigma=float(fitting.get('deviation_sigma', 3.0)),
                strict=True,
            )
        except NotConvergedError as exc:
            flagged, result = exc, exc.result

        trace = evolve_piecewise(data.w, result.gamma1, result.gamma2, result.t_m, basis_state(2), data.times())
        frames = []
        for label in result.observables:
            rows = data.select(label)[['t', 'observable', 'mean', 'std']].copy()
            model = dict(zip(trace.times, trace.observable(label)))
            rows['model'] = [model[t] for t in rows['t']]
            frames.append(rows)
        table = pd.concat(frames, ignore_index=True)
        results = result.to_dict()
        results['rss_history'] = result.rss_history

        if flagged is not None:
            return self._flag('fit', parameters, flagged, results=results, tables={'fit': table})
        self._emit('fit', parameters, results, {'fit': table})
        print(f"fit: gamma1={result.gamma1:.4f} gamma2={result.gamma2:.4f} t_m={result.t_m:.4f} rss={result.rss:.3g}")
        return EXIT_OK

    def figure(self, args: argparse.Namespace) -> int:
        settings: Dict[str, Any] = {}
        for section in (self.config.get_spectrum_config(), self.config.get_perturbation_config(),
                        self.config.get_dynamics_config()):
            settings.update(section)
        settings['max_workers'] = self.max_workers
        settings['seed'] = args.seed if args.seed is not None else DEFAULT_SEED
        try:
            bundle = build_figure(args.figure_id, settings)
        except TrackingLostError as exc:
            self.logger.warning("%s flagged: %s", args.figure_id, exc)
            document = result_document('figure', {'figure_id': args.figure_id}, {}, [],
                                       flagged=True, error=str(exc), seed=settings['seed'])
            write_json(self.out_dir / f'{args.figure_id}.json', document)
            print(f"figure: {args.figure_id} flagged ({exc})")
            return EXIT_FLAGGED
        names = bundle.write(self.out_dir, digits=self.digits)
        print(f"figure: {args.figure_id}, {len(names)} tables written to {self.out_dir}")
        return EXIT_OK


def run(argv: Optional[Sequence[str]] = None) -> int:
    """
    Parse arguments and run one subcommand.

    Returns:
        0 on success, 2 on invalid arguments, 3 on unreadable input files,
        4 when a fit or branch tracking failed (partial output flagged)

    Raises:
        SystemExit: argparse usage errors (code 2) and --help (code 0)
    """
    parser = build_parser()
    args = parser.parse_args(argv)

    if args.schema:
        print(schema_text())
        return EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if args.command == 'evolve' and (args.gamma2 is None) != (args.tm is None):
        parser.error("evolve: --gamma2 and --tm go together")

    try:
        app = NexusApp(getattr(args, 'config', 'config.yaml'), getattr(args, 'out', None))
        return app.dispatch(args)
    except InputFileError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NexusError as exc:
        logging.getLogger('exnexus').error("%s failed: %s", args.command, exc)
        print(f"Error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


def main():
    """Main entry point."""
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
