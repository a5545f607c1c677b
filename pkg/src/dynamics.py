"""
Non-Hermitian Schrödinger evolution ψ(t) = exp(−iHt)ψ₀, population
observables, decay snapshots and synthetic two-rate datasets.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.linalg import expm

from src.complex_linalg import eigensystem
from src.model import build_hamiltonian
from src.utils import ParamPoint

logger = logging.getLogger(__name__)

OBSERVABLES = ('N', 'N1', 'N2', 'N3')
RECORD_COLUMNS = ['t', 'observable', 'mean', 'std', 'repetitions']

GAP_THRESHOLD = 1e-6
COND_LIMIT = 1e8


def basis_state(index: int) -> np.ndarray:
    """|index⟩ for index in 1..3."""
    if index not in (1, 2, 3):
        raise ValueError(f"basis state index must be 1, 2 or 3, got {index}")
    psi = np.zeros(3, dtype=complex)
    psi[index - 1] = 1.0
    return psi


def default_time_grid(t_max: float = 3.0, steps: int = 200) -> np.ndarray:
    return np.linspace(0.0, t_max, steps)


@dataclass
class DynamicsTrace:
    """
    Sampled evolution.

    Attributes:
        times: Dimensionless times Ω₁t, shape (n,)
        states: Amplitudes ψ(t), shape (n, 3)
    """

    times: np.ndarray
    states: np.ndarray

    @property
    def populations(self) -> np.ndarray:
        """N₁, N₂, N₃ per time, shape (n, 3)."""
        return np.abs(self.states) ** 2

    @property
    def total(self) -> np.ndarray:
        return self.populations.sum(axis=1)

    def observable(self, label: str) -> np.ndarray:
        """Series for 'N', 'N1', 'N2' or 'N3'."""
        if label == 'N':
            return self.total
        if label in ('N1', 'N2', 'N3'):
            return self.populations[:, int(label[1]) - 1]
        raise ValueError(f"unknown observable '{label}', expected one of {OBSERVABLES}")

    def to_frame(self) -> pd.DataFrame:
        pops = self.populations
        return pd.DataFrame({
            't': self.times,
            'N': self.total,
            'N1': pops[:, 0],
            'N2': pops[:, 1],
            'N3': pops[:, 2],
        })


@dataclass
class MeasurementSet:
    """
    Averaged population records, one row per (t, observable).

    Attributes:
        w: Coupling ratio
        nominal_gamma: Calibrated dissipation Γ̄ of the run
        records: DataFrame with columns t, observable, mean, std, repetitions
        provenance: Generator truth for synthetic data
    """

    w: float
    nominal_gamma: float
    records: pd.DataFrame
    provenance: Dict[str, Any] = field(default_factory=dict)

    def select(self, label: str) -> pd.DataFrame:
        return self.records[self.records['observable'] == label].sort_values('t', kind='stable')

    def observables(self) -> List[str]:
        present = set(self.records['observable'])
        return [label for label in OBSERVABLES if label in present]

    def times(self) -> np.ndarray:
        return np.unique(self.records['t'].to_numpy(dtype=float))


def _check_inputs(psi0: np.ndarray, t_grid: np.ndarray) -> None:
    if psi0.shape != (3,):
        raise ValueError("initial state must be a 3-vector")
    if abs(np.linalg.norm(psi0) - 1.0) > 1e-9:
        raise ValueError("initial state must have unit norm")
    if t_grid.ndim != 1 or len(t_grid) == 0:
        raise ValueError("time grid must be a non-empty 1-d sequence")
    if t_grid[0] < 0 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("time grid must be strictly increasing from t >= 0")


def propagate(H: np.ndarray, psi0: np.ndarray, times: np.ndarray,
              gap_threshold: float = GAP_THRESHOLD, cond_limit: float = COND_LIMIT) -> np.ndarray:
    """
    exp(−iHt)ψ₀ at each t.

    Uses the eigendecomposition when eigenvalues are separated by more than
    gap_threshold and the eigenvector matrix is well conditioned; otherwise
    scipy's scaling-and-squaring expm at every time point.

    Returns:
        States, shape (len(times), 3)
    """
    system = eigensystem(H, strict=False)
    V = system.vectors
    if system.min_gap() > gap_threshold and np.linalg.cond(V) < cond_limit:
        coefficients = np.linalg.solve(V, psi0)
        phases = np.exp(-1j * np.outer(times, system.values))
        return (phases * coefficients) @ V.T
    logger.debug("Using matrix exponential path (gap %.2e)", system.min_gap())
    return np.array([expm(-1j * H * t) @ psi0 for t in times])


def evolve(p: ParamPoint, psi0: np.ndarray, t_grid: Sequence[float],
           gap_threshold: float = GAP_THRESHOLD) -> DynamicsTrace:
    """
    Evolve ψ₀ under H(p).

    Args:
        p: Parameter point
        psi0: Unit-norm initial state
        t_grid: Strictly increasing times from t ≥ 0
        gap_threshold: Smallest eigenvalue gap for the eigendecomposition path

    Returns:
        DynamicsTrace
    """
    psi0 = np.asarray(psi0, dtype=complex)
    times = np.asarray(t_grid, dtype=float)
    _check_inputs(psi0, times)
    states = propagate(build_hamiltonian(p), psi0, times, gap_threshold=gap_threshold)
    return DynamicsTrace(times=times, states=states)


def evolve_piecewise(w: float, gamma1: float, gamma2: float, t_m: float,
                     psi0: np.ndarray, t_grid: Sequence[float]) -> DynamicsTrace:
    """
    Evolve under H(Γ̄₁) for t < t_m and H(Γ̄₂) for t ≥ t_m.

    The state is continuous at t_m.

    Args:
        w: Coupling ratio
        gamma1: Dissipation before t_m
        gamma2: Dissipation from t_m on
        t_m: Switching time, ≥ 0
        psi0: Unit-norm initial state
        t_grid: Strictly increasing times from t ≥ 0

    Returns:
        DynamicsTrace
    """
    if t_m < 0:
        raise ValueError(f"t_m must be non-negative, got {t_m}")
    if gamma1 == gamma2:
        return evolve(ParamPoint(w, gamma1), psi0, t_grid)

    psi0 = np.asarray(psi0, dtype=complex)
    times = np.asarray(t_grid, dtype=float)
    _check_inputs(psi0, times)
    H1 = build_hamiltonian(ParamPoint(w, gamma1))
    H2 = build_hamiltonian(ParamPoint(w, gamma2))

    before = times < t_m
    states = np.empty((len(times), 3), dtype=complex)
    if before.any():
        states[before] = propagate(H1, psi0, times[before])
    if t_m == 0:
        psi_m = psi0
    else:
        psi_m = propagate(H1, psi0, np.array([t_m]))[0]
    after = ~before
    if after.any():
        states[after] = propagate(H2, psi_m, times[after] - t_m)
    return DynamicsTrace(times=times, states=states)


def decay_snapshot(w: float, gamma_grid: Sequence[float], t0: float,
                   max_workers: int = 1) -> List[Tuple[float, float]]:
    """
    Total population N(t0) from |2⟩ for each Γ̄.

    Args:
        w: Coupling ratio
        gamma_grid: Dissipation values
        t0: Snapshot time, > 0
        max_workers: Threads across Γ̄ values

    Returns:
        (Γ̄, N(t0)) pairs in grid order
    """
    if not t0 > 0:
        raise ValueError(f"t0 must be positive, got {t0}")
    psi0 = basis_state(2)

    def total_at(gamma):
        trace = evolve(ParamPoint(w, float(gamma)), psi0, [t0])
        return float(gamma), float(trace.total[0])

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(total_at, gamma_grid))


def synth_dataset(w: float, gamma1: float, gamma2: float, t_m: float,
                  noise_sigma: float, repetitions: int, t_grid: Sequence[float],
                  rng: np.random.Generator,
                  observables: Sequence[str] = ('N', 'N2'),
                  psi0: Optional[np.ndarray] = None,
                  nominal_gamma: Optional[float] = None) -> MeasurementSet:
    """
    Synthetic averaged measurements from the two-rate model.

    Each record is the mean and sample standard deviation of `repetitions`
    draws of model value + N(0, σ²), clipped at 0.

    Args:
        w: Coupling ratio
        gamma1: Dissipation before t_m
        gamma2: Dissipation from t_m on
        t_m: Switching time
        noise_sigma: Gaussian noise per draw, relative to N₀ = 1
        repetitions: Draws per record, ≥ 1
        t_grid: Measurement times
        rng: Seeded random source
        observables: Labels to record
        psi0: Initial state, |2⟩ by default
        nominal_gamma: Calibrated Γ̄ of the run, gamma1 by default

    Returns:
        MeasurementSet with provenance holding the generator parameters
    """
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be non-negative")
    if repetitions < 1:
        raise ValueError("repetitions must be at least 1")
    for label in observables:
        if label not in OBSERVABLES:
            raise ValueError(f"unknown observable '{label}'")
    if psi0 is None:
        psi0 = basis_state(2)

    trace = evolve_piecewise(w, gamma1, gamma2, t_m, psi0, t_grid)
    clean = np.stack([trace.observable(label) for label in observables], axis=1)
    draws = clean[:, :, None] + rng.normal(0.0, noise_sigma, size=clean.shape + (repetitions,))
    draws = np.clip(draws, 0.0, None)
    means = draws.mean(axis=2)
    if repetitions > 1:
        stds = draws.std(axis=2, ddof=1)
    else:
        stds = np.full(means.shape, float(noise_sigma))
    if noise_sigma == 0:
        means = clean
        stds = np.zeros_like(clean)

    rows = []
    for i, t in enumerate(trace.times):
        for j, label in enumerate(observables):
            rows.append((float(t), label, float(means[i, j]), float(stds[i, j]), int(repetitions)))
    records = pd.DataFrame(rows, columns=RECORD_COLUMNS)

    provenance = {
        'generator': 'two-rate',
        'w': w,
        'gamma1': gamma1,
        'gamma2': gamma2,
        't_m': t_m,
        'noise_sigma': noise_sigma,
        'repetitions': repetitions,
        'initial_state': [[float(x.real), float(x.imag)] for x in psi0],
    }
    return MeasurementSet(
        w=w,
        nominal_gamma=gamma1 if nominal_gamma is None else nominal_gamma,
        records=records,
        provenance=provenance,
    )
