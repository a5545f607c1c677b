"""
Analysis chain for population data: single-rate calibration, the two-rate
piecewise fit, the α exponent of the effective decay rate, and exceptional
point estimates from measured eigenvalue curves.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import make_smoothing_spline
from scipy.optimize import least_squares, minimize, minimize_scalar

from src.complex_linalg import eigensystem
from src.dynamics import MeasurementSet, basis_state, evolve_piecewise
from src.model import build_hamiltonian
from src.spectral_atlas import SpectralBranchSet, track_eigensystems
from src.utils import (
    DegenerateDataError,
    NoBracketError,
    NotConvergedError,
    ParamPoint,
    complex_pair,
)

logger = logging.getLogger(__name__)

FIT_OBSERVABLES = ('N', 'N2', 'N3')
MAX_ITERATIONS = 500
RSS_RTOL = 1e-8
DEVIATION_SIGMA = 3.0
IDENTIFIABLE_SPLIT = 0.02
# extra simplex starts for t_m, as fractions of the time span
SWITCH_SEED_FRACTIONS = (0.1, 0.25, 0.5)


@dataclass
class FitResult:
    """Two-rate fit outcome."""

    gamma1: float
    gamma2: float
    t_m: float
    rss: float
    iterations: int
    converged: bool
    observables: List[str] = field(default_factory=list)
    rss_history: List[float] = field(default_factory=list)
    tm_identifiable: bool = True
    single_rate_gamma: Optional[float] = None
    single_rate_rss: Optional[float] = None
    initial: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'gamma1': self.gamma1,
            'gamma2': self.gamma2,
            't_m': self.t_m,
            'rss': self.rss,
            'iterations': self.iterations,
            'converged': self.converged,
            'observables': list(self.observables),
            'tm_identifiable': self.tm_identifiable,
            'single_rate_gamma': self.single_rate_gamma,
            'single_rate_rss': self.single_rate_rss,
            'initial': list(self.initial),
        }


@dataclass
class AlphaCurve:
    """Local log-log slope α of γ = −ln N(t0)/t0 against Γ̄."""

    samples: List[Tuple[float, float]]
    t0: float
    w: Optional[float] = None
    dropped: List[float] = field(default_factory=list)

    @property
    def gammas(self) -> np.ndarray:
        return np.array([g for g, _ in self.samples])

    @property
    def alphas(self) -> np.ndarray:
        return np.array([a for _, a in self.samples])


@dataclass
class EPEstimate:
    """Exceptional point fitted from two coalescing branches."""

    gamma_ep: float
    stderr: float
    value: complex
    rss: float
    window: Tuple[float, float]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'gamma_ep': self.gamma_ep,
            'stderr': self.stderr,
            'value': complex_pair(self.value),
            'rss': self.rss,
            'window': list(self.window),
            'uncertainty': 'fit covariance standard error',
        }


def inverse_variance_weights(sigmas: np.ndarray) -> np.ndarray:
    """
    Per-point 1/σ² weights.

    σ is floored at half the median positive σ; unit weights throughout
    when no σ is positive.
    """
    sigmas = np.asarray(sigmas, dtype=float)
    positive = sigmas[sigmas > 0]
    if len(positive) == 0:
        return np.ones_like(sigmas)
    floor = 0.5 * float(np.median(positive))
    return 1.0 / np.maximum(sigmas, floor) ** 2


def fit_single_rate(data: MeasurementSet) -> float:
    """
    Calibration fit N₃(t) = e^{−2Γ̄t}.

    Weighted least squares for ln N₃ = −2Γ̄t through the origin, weights
    N₃² times inverse_variance_weights. Records with mean ≤ 0 are
    ignored.

    Args:
        data: Measurements holding N3 records

    Returns:
        Fitted Γ̄ (≥ 0)

    Raises:
        DegenerateDataError: Fewer than two distinct times, or a flat
            series away from 1
    """
    rows = data.select('N3')
    rows = rows[rows['mean'] > 0]
    t = rows['t'].to_numpy(dtype=float)
    n3 = rows['mean'].to_numpy(dtype=float)
    sigma = rows['std'].to_numpy(dtype=float)

    if len(np.unique(t)) < 2:
        raise DegenerateDataError("N3 fit needs at least two distinct times")
    if np.all(n3 == n3[0]):
        if n3[0] == 1.0:
            return 0.0
        raise DegenerateDataError("N3 values are all equal; no decay information")

    weights = n3 ** 2 * inverse_variance_weights(sigma)
    y = np.log(n3)
    denominator = 2.0 * np.sum(weights * t * t)
    if denominator == 0:
        raise DegenerateDataError("N3 records carry no time lever arm")
    gamma = -float(np.sum(weights * t * y)) / float(denominator)
    return max(gamma, 0.0)


class _TwoRateObjective:
    """Weighted residuals of piecewise-model observables against data means."""

    def __init__(self, data: MeasurementSet, w: float, observables: Sequence[str]):
        self.w = w
        self.observables = list(observables)
        self.times = data.times()
        self.psi0 = basis_state(2)

        frames = [data.select(label) for label in self.observables]
        self.labels = np.concatenate([[i] * len(f) for i, f in enumerate(frames)]).astype(int)
        record_t = np.concatenate([f['t'].to_numpy(dtype=float) for f in frames])
        self.index = np.searchsorted(self.times, record_t)
        self.means = np.concatenate([f['mean'].to_numpy(dtype=float) for f in frames])
        self.sigmas = np.concatenate([f['std'].to_numpy(dtype=float) for f in frames])

        self.weights = inverse_variance_weights(self.sigmas)

    def model(self, gamma1: float, gamma2: float, t_m: float) -> np.ndarray:
        trace = evolve_piecewise(self.w, gamma1, gamma2, t_m, self.psi0, self.times)
        series = np.stack([trace.observable(label) for label in self.observables])
        return series[self.labels, self.index]

    def rss(self, gamma1: float, gamma2: float, t_m: float) -> float:
        residual = self.means - self.model(gamma1, gamma2, t_m)
        return float(np.sum(self.weights * residual ** 2))


def _initial_switch_time(objective: _TwoRateObjective, nominal_gamma: float, sigma_multiple: float) -> float:
    """First time the data leave the nominal single-rate model by more than the threshold."""
    model = objective.model(nominal_gamma, nominal_gamma, 0.0)
    deviation = np.abs(objective.means - model)
    median_sigma = float(np.median(objective.sigmas)) if len(objective.sigmas) else 0.0
    threshold = sigma_multiple * np.maximum(np.maximum(objective.sigmas, median_sigma), 1e-6)
    record_t = objective.times[objective.index]
    exceeding = record_t[deviation > threshold]
    t_lo, t_hi = objective.times[0], objective.times[-1]
    if len(exceeding) == 0:
        return 0.5 * (t_lo + t_hi)
    return float(np.clip(exceeding.min(), t_lo, t_hi))


def fit_two_rate(data: MeasurementSet, w: float, nominal_gamma: float,
                 observables: Optional[Sequence[str]] = None,
                 max_iterations: int = MAX_ITERATIONS,
                 rss_rtol: float = RSS_RTOL,
                 deviation_sigma: float = DEVIATION_SIGMA,
                 strict: bool = False) -> FitResult:
    """
    Fit (Γ̄₁, Γ̄₂, t_m) of the piecewise model to population data.

    Starts from Γ̄₁ = nominal, Γ̄₂ = nominal/2 and t_m at the first notable
    deviation from the nominal single-rate model, then refines with a
    bounded Nelder-Mead simplex. Further simplex runs start t_m at fixed
    fractions of the time span; the lowest rss wins. The nested
    single-rate optimum is also computed and kept when it is better.

    Args:
        data: Measurements
        w: Coupling ratio
        nominal_gamma: Calibrated Γ̄ of the run
        observables: Labels to fit; N and N2 present in the data by default
        max_iterations: Simplex iteration cap
        rss_rtol: Convergence tolerance on rss, relative to the initial rss
        deviation_sigma: Multiple of σ defining a notable deviation
        strict: Raise NotConvergedError when the cap is hit

    Returns:
        FitResult

    Raises:
        NotConvergedError: Iteration cap hit and strict is set
    """
    present = data.observables()
    if observables is None:
        observables = [label for label in ('N', 'N2') if label in present]
    observables = [label for label in observables if label in present and label in FIT_OBSERVABLES]
    if not observables:
        raise ValueError("data holds none of the fittable observables N, N2, N3")
    objective = _TwoRateObjective(data, w, observables)
    if len(objective.times) < 6:
        raise ValueError("two-rate fit needs at least 6 time points")

    t_lo, t_hi = float(objective.times[0]), float(objective.times[-1])
    t_init = _initial_switch_time(objective, nominal_gamma, deviation_sigma)
    starts = [t_init]
    for fraction in SWITCH_SEED_FRACTIONS:
        t_seed = t_lo + fraction * (t_hi - t_lo)
        if all(abs(t_seed - t) > 0.05 * (t_hi - t_lo) for t in starts):
            starts.append(t_seed)

    def target(x):
        return objective.rss(max(x[0], 0.0), max(x[1], 0.0), float(np.clip(x[2], t_lo, t_hi)))

    best = None
    for t_start in starts:
        x0 = np.array([nominal_gamma, nominal_gamma / 2.0, t_start])
        rss0 = objective.rss(*x0)
        history: List[float] = []

        def record(xk, history=history):
            history.append(target(xk))

        result = minimize(
            target,
            x0,
            method='Nelder-Mead',
            bounds=[(0.0, None), (0.0, None), (t_lo, t_hi)],
            callback=record,
            options={
                'maxiter': max_iterations,
                'fatol': rss_rtol * max(rss0, 1e-300),
                'xatol': 1e-5,
            },
        )
        logger.debug("Simplex from t_m=%.4g: rss %.6g after %d iterations", t_start, result.fun, result.nit)
        if best is None or result.fun < best[0].fun:
            best = (result, x0, history)
    result, x0, history = best

    gamma1, gamma2, t_m = (float(v) for v in result.x)
    gamma1, gamma2 = max(gamma1, 0.0), max(gamma2, 0.0)
    t_m = float(np.clip(t_m, t_lo, t_hi))
    rss = float(result.fun)
    converged = bool(result.success)

    upper = max(4.0 * nominal_gamma, 1.0)
    single = minimize_scalar(lambda g: objective.rss(g, g, t_m), bounds=(0.0, upper), method='bounded')
    single_gamma, single_rss = float(single.x), float(single.fun)
    if single_rss < rss:
        logger.info("Single-rate model fits better (rss %.4g < %.4g); keeping it", single_rss, rss)
        gamma1 = gamma2 = single_gamma
        rss = single_rss

    split = abs(gamma1 - gamma2)
    identifiable = split >= IDENTIFIABLE_SPLIT * max(gamma1, gamma2, 1e-300)

    fit = FitResult(
        gamma1=gamma1,
        gamma2=gamma2,
        t_m=t_m,
        rss=rss,
        iterations=int(result.nit),
        converged=converged,
        observables=list(observables),
        rss_history=history,
        tm_identifiable=identifiable,
        single_rate_gamma=single_gamma,
        single_rate_rss=single_rss,
        initial=(float(x0[0]), float(x0[1]), float(x0[2])),
    )
    if not converged:
        logger.warning("Two-rate fit stopped after %d iterations: %s", fit.iterations, result.message)
        if strict:
            raise NotConvergedError(f"two-rate fit did not converge in {max_iterations} iterations", fit)
    return fit


def extract_alpha(snapshot: Sequence[Tuple[float, float]], t0: float, w: Optional[float] = None) -> AlphaCurve:
    """
    α = d ln γ / d ln Γ̄ with γ = −ln N(t0)/t0.

    ln γ against ln Γ̄ is smoothed by a cubic smoothing spline (penalty by
    generalized cross-validation) and differentiated by central differences.
    Points with N(t0) outside (0, 1) are dropped and listed.

    Args:
        snapshot: (Γ̄, N(t0)) pairs sorted by Γ̄
        t0: Snapshot time
        w: Coupling ratio, recorded on the curve

    Returns:
        AlphaCurve
    """
    if not t0 > 0:
        raise ValueError(f"t0 must be positive, got {t0}")
    gammas = np.array([g for g, _ in snapshot], dtype=float)
    totals = np.array([n for _, n in snapshot], dtype=float)
    if np.any(np.diff(gammas) <= 0):
        raise ValueError("snapshot must be sorted by strictly increasing gamma")

    keep = (totals < 1.0) & (totals > 0.0) & (gammas > 0.0)
    dropped = [float(g) for g in gammas[~keep]]
    if dropped:
        logger.warning("Dropped %d snapshot points without decay: %s", len(dropped), dropped)
    gammas, totals = gammas[keep], totals[keep]
    if len(gammas) < 5:
        raise DegenerateDataError("alpha extraction needs at least 5 decaying points")

    log_gamma = np.log(gammas)
    log_rate = np.log(-np.log(totals) / t0)
    spline = make_smoothing_spline(log_gamma, log_rate)
    smoothed = spline(log_gamma)
    alphas = np.gradient(smoothed, log_gamma)
    return AlphaCurve(
        samples=[(float(g), float(a)) for g, a in zip(gammas, alphas)],
        t0=t0,
        w=w,
        dropped=dropped,
    )


def select_coalescing_pair(branches: np.ndarray) -> Tuple[int, int]:
    """Pair of branches with the smallest minimum gap over the window."""
    pairs = [(0, 1), (0, 2), (1, 2)]
    gaps = [np.min(np.abs(branches[i] - branches[j])) for i, j in pairs]
    return pairs[int(np.argmin(gaps))]


def _square_root_residuals(params: np.ndarray, gamma: np.ndarray, h: np.ndarray) -> np.ndarray:
    gamma_ep, b1r, b1i, b2r, b2i = params
    x = gamma - gamma_ep
    model = x * (complex(b1r, b1i) + complex(b2r, b2i) * x)
    diff = h - model
    return np.concatenate([diff.real, diff.imag])


def ep_from_eigencurves(gamma: Sequence[float], branch_a: Sequence[complex],
                        branch_b: Sequence[complex]) -> EPEstimate:
    """
    Locate an EP2 from two sampled eigenvalue branches.

    Uses the label-independent h = (λa − λb)², which vanishes linearly at an
    EP2 (square-root normal form λ± = λ₀ ± C√(Γ̄ − Γ̄_EP)). A complex quadratic
    fit of h seeds a real root inside the window, refined by nonlinear least
    squares on h = (Γ̄ − Γ̄_EP)(β₁ + β₂(Γ̄ − Γ̄_EP)).

    Args:
        gamma: Γ̄ samples, at least 8, increasing
        branch_a: First branch eigenvalues
        branch_b: Second branch eigenvalues

    Returns:
        EPEstimate with a covariance-based standard error

    Raises:
        NoBracketError: No degeneracy indicated inside the window
    """
    g = np.asarray(gamma, dtype=float)
    a = np.asarray(branch_a, dtype=complex)
    b = np.asarray(branch_b, dtype=complex)
    if len(g) < 8 or len(a) != len(g) or len(b) != len(g):
        raise ValueError("need at least 8 samples per branch on a shared grid")
    if np.any(np.diff(g) <= 0):
        raise ValueError("gamma samples must be strictly increasing")

    gaps = np.abs(a - b)
    k_min = int(np.argmin(gaps))
    if k_min in (0, len(g) - 1):
        raise NoBracketError("branch gap is smallest at the window edge")

    h = (a - b) ** 2
    centre = 0.5 * (g[0] + g[-1])
    width = g[-1] - g[0]
    x = g - centre
    vandermonde = np.stack([x * x, x, np.ones_like(x)], axis=1).astype(complex)
    coeffs, *_ = np.linalg.lstsq(vandermonde, h, rcond=None)
    roots = np.roots(coeffs) if abs(coeffs[0]) > 0 else np.roots(coeffs[1:])
    candidates = [k for k, r in enumerate(roots)
                  if abs(r.imag) <= 0.1 * width and g[0] <= centre + r.real <= g[-1]]
    if not candidates:
        raise NoBracketError("no real zero of the branch splitting inside the window")
    chosen = min(candidates, key=lambda k: abs(centre + roots[k].real - g[k_min]))
    seed = roots[chosen]

    beta2 = coeffs[0]
    if len(roots) == 2:
        beta1 = beta2 * (seed - roots[1 - chosen])
    else:
        beta1 = coeffs[1]
    p0 = np.array([centre + seed.real, beta1.real, beta1.imag, beta2.real, beta2.imag])

    fit = least_squares(_square_root_residuals, p0, args=(g, h), method='lm')
    gamma_ep = float(fit.x[0])
    if not g[0] <= gamma_ep <= g[-1]:
        raise NoBracketError(f"fitted degeneracy {gamma_ep:.6g} falls outside the window")

    dof = 2 * len(g) - len(fit.x)
    rss = float(2.0 * fit.cost)
    stderr = float('nan')
    if dof > 0:
        try:
            covariance = np.linalg.inv(fit.jac.T @ fit.jac) * (rss / dof)
            stderr = float(math.sqrt(max(covariance[0, 0], 0.0)))
        except np.linalg.LinAlgError:
            logger.warning("Singular Jacobian; EP uncertainty unavailable")

    mean_curve = 0.5 * (a + b)
    value = complex(np.interp(gamma_ep, g, mean_curve.real), np.interp(gamma_ep, g, mean_curve.imag))
    return EPEstimate(gamma_ep=gamma_ep, stderr=stderr, value=value, rss=rss,
                      window=(float(g[0]), float(g[-1])))


def ep_from_branch_set(branches: SpectralBranchSet) -> EPEstimate:
    """ep_from_eigencurves on the coalescing pair of a branch set."""
    i, j = select_coalescing_pair(branches.branches)
    return ep_from_eigencurves(branches.grid, branches.branches[i], branches.branches[j])


def measured_eigencurves(fits: Mapping[float, FitResult], w: float) -> SpectralBranchSet:
    """
    Eigenvalues of H(Γ̄₁) from fitted datasets, tracked across nominal Γ̄.

    Args:
        fits: Two-rate fit per nominal Γ̄
        w: Coupling ratio

    Returns:
        SpectralBranchSet on the nominal Γ̄ grid
    """
    nominal = sorted(fits)
    if len(nominal) < 2:
        raise ValueError("need fits at two or more nominal gammas")
    systems = [eigensystem(build_hamiltonian(ParamPoint(w, fits[g].gamma1)), strict=False)
               for g in nominal]
    return track_eigensystems(nominal, systems, w=w)
