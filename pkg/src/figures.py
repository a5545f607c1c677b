"""
Figure bundles: the data tables behind each reproduced figure.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

import numpy as np
import pandas as pd

from src.dynamics import basis_state, decay_snapshot, default_time_grid, evolve, evolve_piecewise, synth_dataset
from src.fitting import ep_from_branch_set, extract_alpha, fit_two_rate, measured_eigencurves
from src.model import STRONG_COUPLING, ZENO, ep2_condition
from src.perturbation import berry_phase, loop_spectrum, perturbation_case
from src.result_io import branches_frame, result_document, write_csv, write_json
from src.spectral_atlas import W_NEXUS, locate_ep2, sweep_spectrum, trace_arcs
from src.utils import NexusError, ParamPoint

logger = logging.getLogger(__name__)

FIGURE_IDS = ('fig1a', 'fig1b', 'fig1c-left', 'fig1c-right', 'fig2d-model', 'fig3a', 'fig3b', 'fig3d-h')

SNAPSHOT_WS = (2.8, 3.8, 4.5)
EP_WS = (4.5, 3.8, 3.0, 2.8)
DEFAULT_SEED = 20240601


@dataclass
class FigureBundle:
    """Named tables plus the metadata needed to regenerate them."""

    figure_id: str
    tables: Dict[str, pd.DataFrame] = field(default_factory=dict)
    metadata: Dict[str, Any] = field(default_factory=dict)

    def write(self, out_dir, digits: int = 17) -> List[str]:
        """Write `<figure_id>_<table>.csv` files and `<figure_id>.json`."""
        names = []
        for name, frame in self.tables.items():
            file_name = f'{self.figure_id}_{name}.csv'
            write_csv(f'{out_dir}/{file_name}', frame, digits=digits)
            names.append(file_name)
        document = result_document('figure', {'figure_id': self.figure_id}, self.metadata, names,
                                   seed=self.metadata.get('seed'))
        write_json(f'{out_dir}/{self.figure_id}.json', document)
        return names


def _w_label(w: float) -> str:
    return 'w2sqrt2' if math.isclose(w, W_NEXUS) else f'w{w:g}'


def build_fig1a(settings: Dict[str, Any]) -> FigureBundle:
    grid = np.linspace(settings.get('gamma_min', 0.0), settings.get('gamma_max', 12.0),
                       int(settings.get('gamma_points', 241)))
    bundle = FigureBundle('fig1a', metadata={'w': [6.0, 4.5, W_NEXUS], 'gamma_grid': [grid[0], grid[-1], len(grid)]})
    for w in (6.0, 4.5, W_NEXUS):
        branches = sweep_spectrum(w, grid, max_workers=settings.get('max_workers', 1))
        bundle.tables[_w_label(w)] = branches_frame('gamma', branches.grid, branches.branches)
    return bundle


def build_fig1b(settings: Dict[str, Any]) -> FigureBundle:
    n_samples = int(settings.get('arc_samples', 50))
    w_max = float(settings.get('arc_w_max', 6.0))
    records = trace_arcs(W_NEXUS, w_max, n_samples, max_workers=settings.get('max_workers', 1))
    arcs = pd.DataFrame([{
        'w': r.location.w,
        'gamma': r.location.gamma,
        'arc': r.arc,
        'order': r.order,
        'value_re': r.value.real,
        'value_im': r.value.imag,
        'locator_residual': r.locator_residual,
    } for r in records])
    w_grid = np.linspace(W_NEXUS, w_max, n_samples)
    effective = pd.DataFrame({
        'w': w_grid,
        'gamma_strong_coupling': [ep2_condition(w, STRONG_COUPLING) for w in w_grid],
        'gamma_zeno': [ep2_condition(w, ZENO) for w in w_grid],
    })
    return FigureBundle('fig1b', tables={'arcs': arcs, 'effective': effective},
                        metadata={'w_range': [W_NEXUS, w_max], 'n_samples': n_samples})


def _build_fig1c(kind: str, figure_id: str, settings: Dict[str, Any]) -> FigureBundle:
    eps = float(settings.get('eps', 0.1))
    n_samples = int(settings.get('n_samples', 1024))
    convention = settings.get('convention', 'biorthogonal')
    thetas, branches = loop_spectrum(perturbation_case(kind), eps, n_samples)
    table = branches_frame('theta', thetas, branches)
    results = berry_phase(perturbation_case(kind), eps, n_samples, convention=convention)
    return FigureBundle(figure_id, tables={'loop': table}, metadata={
        'case': kind,
        'eps': eps,
        'n_samples': n_samples,
        'berry': [r.to_dict() for r in results],
    })


def build_fig1c_left(settings: Dict[str, Any]) -> FigureBundle:
    return _build_fig1c('diagonal', 'fig1c-left', settings)


def build_fig1c_right(settings: Dict[str, Any]) -> FigureBundle:
    return _build_fig1c('mixed', 'fig1c-right', settings)


def build_fig2d_model(settings: Dict[str, Any]) -> FigureBundle:
    times = default_time_grid(float(settings.get('t_max', 3.0)), int(settings.get('steps', 200)))
    psi0 = basis_state(2)
    bundle = FigureBundle('fig2d-model', metadata={'initial_state': 2})
    runs = []
    for w, gamma in ((2.8, 1.0), (3.8, 2.0), (4.5, 8.0), (4.5, 17.0)):
        trace = evolve(ParamPoint(w, gamma), psi0, times)
        bundle.tables[f'{_w_label(w)}_gamma{gamma:g}'] = trace.to_frame()
        runs.append({'w': w, 'gamma': gamma})
    two_rate = {'w': 4.5, 'gamma1': 17.0, 'gamma2': 8.0, 't_m': float(settings.get('t_m', 0.5))}
    trace = evolve_piecewise(two_rate['w'], two_rate['gamma1'], two_rate['gamma2'], two_rate['t_m'], psi0, times)
    bundle.tables['two_rate'] = trace.to_frame()
    bundle.metadata.update({'runs': runs, 'two_rate': two_rate})
    return bundle


def _snapshot_grid(w: float, settings: Dict[str, Any]) -> np.ndarray:
    lo = float(settings.get('ratio_min', 1e-4))
    hi = float(settings.get('ratio_max', 50.0))
    points = int(settings.get('snapshot_points', 60))
    return w * np.logspace(math.log10(lo), math.log10(hi), points)


def build_fig3a(settings: Dict[str, Any]) -> FigureBundle:
    t0 = float(settings.get('snapshot_t0', 0.8))
    bundle = FigureBundle('fig3a', metadata={'t0': t0, 'w': list(SNAPSHOT_WS)})
    for w in SNAPSHOT_WS:
        pairs = decay_snapshot(w, _snapshot_grid(w, settings), t0, max_workers=settings.get('max_workers', 1))
        bundle.tables[_w_label(w)] = pd.DataFrame(pairs, columns=['gamma', 'N_t0'])
    return bundle


def build_fig3b(settings: Dict[str, Any]) -> FigureBundle:
    t0 = float(settings.get('snapshot_t0', 0.8))
    bundle = FigureBundle('fig3b', metadata={'t0': t0, 'w': list(SNAPSHOT_WS), 'dropped': {}})
    for w in SNAPSHOT_WS:
        pairs = decay_snapshot(w, _snapshot_grid(w, settings), t0, max_workers=settings.get('max_workers', 1))
        curve = extract_alpha(pairs, t0, w=w)
        bundle.tables[_w_label(w)] = pd.DataFrame(curve.samples, columns=['gamma', 'alpha'])
        bundle.metadata['dropped'][_w_label(w)] = curve.dropped
    return bundle


def _fit_ladder(w: float, ladder: np.ndarray, times: np.ndarray, rng: np.random.Generator,
                settings: Dict[str, Any]) -> Dict[float, Any]:
    sigma = float(settings.get('sigma', 0.02))
    reps = int(settings.get('reps', 3))
    t_m = float(settings.get('t_m', 0.5))
    fits = {}
    for nominal in ladder:
        nominal = float(nominal)
        data = synth_dataset(w, nominal, nominal / 2.0, t_m, sigma, reps, times, rng, nominal_gamma=nominal)
        fits[nominal] = fit_two_rate(data, w, nominal)
    return fits


def build_fig3dh(settings: Dict[str, Any]) -> FigureBundle:
    """
    Synthetic measurement ladder per w → two-rate fits → eigenvalues of the
    fitted H(Γ̄₁) → EP estimates, alongside the theoretical arcs.

    A coarse ladder gives the eigenvalue curves; each EP is then fitted on a
    zoomed ladder of half-width `zoom` around the theoretical location (around
    3√3 when w has none).
    """
    seed = int(settings.get('seed', DEFAULT_SEED))
    rng = np.random.default_rng(seed)
    ladder_points = int(settings.get('ladder_points', 13))
    zoom = float(settings.get('zoom', 0.5))
    zoom_points = int(settings.get('zoom_points', 9))
    times = default_time_grid(float(settings.get('t_max', 3.0)), int(settings.get('steps', 60)))

    bundle = FigureBundle('fig3d-h', metadata={
        'seed': seed,
        'sigma': float(settings.get('sigma', 0.02)),
        'reps': int(settings.get('reps', 3)),
        't_m': float(settings.get('t_m', 0.5)),
        'estimates': {},
    })
    estimates = []
    for w in EP_WS:
        theory = locate_ep2(w)
        centres = [r.location.gamma for r in theory] or [3.0 * math.sqrt(3.0)]
        lo, hi = min(centres) - 3.0, max(centres) + 3.0
        coarse = measured_eigencurves(_fit_ladder(w, np.linspace(max(lo, 0.1), hi, ladder_points), times, rng, settings), w)
        table = branches_frame('gamma', coarse.grid, coarse.branches)
        bundle.tables[f'{_w_label(w)}_eigenvalues'] = table

        per_w = {'theory': [r.to_dict() for r in theory], 'fitted': [], 'errors': []}
        for centre in centres:
            ladder = np.linspace(centre - zoom, centre + zoom, zoom_points)
            zoomed = measured_eigencurves(_fit_ladder(w, ladder, times, rng, settings), w)
            try:
                estimate = ep_from_branch_set(zoomed)
            except NexusError as exc:
                logger.info("No EP identified at w=%g near %.4f: %s", w, centre, exc)
                per_w['errors'].append(str(exc))
                continue
            per_w['fitted'].append(estimate.to_dict())
            estimates.append({'w': w, 'gamma_ep': estimate.gamma_ep, 'stderr': estimate.stderr})
        bundle.metadata['estimates'][_w_label(w)] = per_w

    bundle.tables['estimates'] = pd.DataFrame(estimates, columns=['w', 'gamma_ep', 'stderr'])
    records = trace_arcs(W_NEXUS, 6.0, 50)
    bundle.tables['theory_arcs'] = pd.DataFrame(
        [{'w': r.location.w, 'gamma': r.location.gamma, 'arc': r.arc} for r in records])
    return bundle


BUILDERS: Dict[str, Callable[[Dict[str, Any]], FigureBundle]] = {
    'fig1a': build_fig1a,
    'fig1b': build_fig1b,
    'fig1c-left': build_fig1c_left,
    'fig1c-right': build_fig1c_right,
    'fig2d-model': build_fig2d_model,
    'fig3a': build_fig3a,
    'fig3b': build_fig3b,
    'fig3d-h': build_fig3dh,
}


def build_figure(figure_id: str, settings: Optional[Dict[str, Any]] = None) -> FigureBundle:
    """
    Build the data bundle for a figure.

    Args:
        figure_id: One of FIGURE_IDS
        settings: Flat overrides (grid sizes, eps, seed, max_workers, ...)

    Returns:
        FigureBundle
    """
    if figure_id not in BUILDERS:
        raise ValueError(f"unknown figure '{figure_id}', expected one of {FIGURE_IDS}")
    logger.info("Building %s", figure_id)
    return BUILDERS[figure_id](dict(settings or {}))
