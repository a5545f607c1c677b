"""
Spectral atlas: branch-tracked sweeps over Γ̄, the discriminant locator for
second-order exceptional points, the two exceptional arcs and their cusp.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from src.complex_linalg import EigenSystem, eigensystem, match_branches, overlap
from src.model import build_hamiltonian, nexus_point
from src.utils import ParamPoint, complex_pair

logger = logging.getLogger(__name__)

LOWER = 'lower'
UPPER = 'upper'
NEXUS = 'nexus'

W_NEXUS = 2.0 * math.sqrt(2.0)
BISECTION_STEPS = 60


@dataclass
class EPRecord:
    """A located spectral degeneracy."""

    order: int
    location: ParamPoint
    value: complex
    arc: str
    locator_residual: float

    def to_dict(self) -> Dict[str, Any]:
        return {
            'order': self.order,
            'location': [self.location.w, self.location.gamma],
            'value': complex_pair(self.value),
            'arc': self.arc,
            'locator_residual': self.locator_residual,
        }


@dataclass
class SpectralBranchSet:
    """
    Eigenvalue branches tracked along a Γ̄ grid.

    Attributes:
        grid: Γ̄ values, shape (n,)
        branches: Tracked eigenvalues, shape (3, n)
        vectors: Tracked right eigenvectors, shape (n, 3, 3), columns by branch
        overlaps: Matched overlap per step and branch, shape (n - 1, 3)
    """

    grid: np.ndarray
    branches: np.ndarray
    vectors: np.ndarray
    overlaps: np.ndarray
    w: Optional[float] = None
    coalesced: List[int] = field(default_factory=list)

    def ep_flags(self, gap_tol: float = 1e-6, overlap_tol: float = 1e-6) -> List[int]:
        """
        Grid indices where some pair is degenerate in value and in vector.

        Args:
            gap_tol: Relative eigenvalue gap, scaled by max(1, |λ|)
            overlap_tol: Tolerance on 1 − |⟨u|v⟩|

        Returns:
            Sorted grid indices
        """
        flagged = []
        for n in range(len(self.grid)):
            values = self.branches[:, n]
            for i, j in ((0, 1), (0, 2), (1, 2)):
                scale = max(1.0, abs(values[i]), abs(values[j]))
                if abs(values[i] - values[j]) >= gap_tol * scale:
                    continue
                if overlap(self.vectors[n][:, i], self.vectors[n][:, j]) > 1.0 - overlap_tol:
                    flagged.append(n)
                    break
        return flagged


def discriminant(p: ParamPoint) -> float:
    """
    Discriminant of the reduced cubic μ³ − Γ̄μ² + qμ − Γ̄, q = w² + 1.

    Δ = −4Γ̄⁴ + Γ̄²(q² + 18q − 27) − 4q³. Zero at degeneracies; positive
    where all three eigenvalues are purely imaginary.
    """
    q = p.q
    x = p.gamma * p.gamma
    return -4.0 * x * x + x * (q * q + 18.0 * q - 27.0) - 4.0 * q ** 3


def classify_region(p: ParamPoint) -> str:
    """
    'three-imaginary' (Δ > 0), 'pair-plus-imaginary' (Δ < 0) or 'degenerate'.
    """
    delta = discriminant(p)
    tol = 1e-12 * p.q ** 3
    if abs(delta) <= tol:
        return 'degenerate'
    return 'three-imaginary' if delta > 0 else 'pair-plus-imaginary'


def _locator_residual(p: ParamPoint) -> float:
    return abs(discriminant(p)) / p.q ** 3


def _double_root(p: ParamPoint) -> complex:
    """Degenerate eigenvalue −iμ, μ a common root of the reduced cubic and its derivative."""
    spread = math.sqrt(max(4.0 * p.gamma ** 2 - 12.0 * p.q, 0.0))
    candidates = [(2.0 * p.gamma + spread) / 6.0, (2.0 * p.gamma - spread) / 6.0]

    def cubic(mu):
        return abs(mu ** 3 - p.gamma * mu ** 2 + p.q * mu - p.gamma)

    mu = min(candidates, key=cubic)
    return complex(0.0, -mu)


def _bisect(w: float, lo: float, hi: float, steps: int) -> float:
    f_lo = discriminant(ParamPoint(w, lo))
    f_hi = discriminant(ParamPoint(w, hi))
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi
    if (f_lo > 0) == (f_hi > 0):
        return 0.5 * (lo + hi)
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        f_mid = discriminant(ParamPoint(w, mid))
        if f_mid == 0:
            return mid
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def locate_ex() -> EPRecord:
    """
    The exceptional nexus, from 3μ₀ = Γ̄, 3μ₀² = w² + 1, μ₀³ = Γ̄.

    Returns:
        Order-3 record at (2√2, 3√3) with value −√3 i
    """
    location = nexus_point()
    return EPRecord(
        order=3,
        location=location,
        value=complex(0.0, -math.sqrt(3.0)),
        arc=NEXUS,
        locator_residual=_locator_residual(location),
    )


def locate_ep2(w: float, bisection_steps: int = BISECTION_STEPS) -> List[EPRecord]:
    """
    Second-order exceptional points on the real Γ̄ axis at fixed w.

    Closed-form roots Γ̄² = [b ± √((q−9)³(q−1))]/8, b = q² + 18q − 27, each
    refined by bisection on the sign change of the discriminant.

    Args:
        w: Coupling ratio, w > 0
        bisection_steps: Bisection iterations per root

    Returns:
        [] below the nexus, [nexus] at w = 2√2, [lower, upper] above
    """
    if not w > 0:
        raise ValueError(f"w must be positive, got {w}")
    if math.isclose(w, W_NEXUS, rel_tol=1e-12):
        return [locate_ex()]
    if w < W_NEXUS:
        return []

    q = w * w + 1.0
    b = q * q + 18.0 * q - 27.0
    root_disc = math.sqrt((q - 9.0) ** 3 * (q - 1.0))
    seeds = [math.sqrt((b - root_disc) / 8.0), math.sqrt((b + root_disc) / 8.0)]
    separation = seeds[1] - seeds[0]

    records = []
    for seed, arc in zip(seeds, (LOWER, UPPER)):
        half_width = min(0.01 * seed, 0.5 * separation)
        gamma = _bisect(w, seed - half_width, seed + half_width, bisection_steps)
        location = ParamPoint(w, gamma)
        records.append(EPRecord(
            order=2,
            location=location,
            value=_double_root(location),
            arc=arc,
            locator_residual=_locator_residual(location),
        ))
    return records


def arc_gap(w: float) -> float:
    """Γ̄_upper − Γ̄_lower at fixed w ≥ 2√2; zero at the nexus."""
    records = locate_ep2(w)
    if not records:
        raise ValueError(f"no exceptional points at w={w} below the nexus")
    if len(records) == 1:
        return 0.0
    return records[1].location.gamma - records[0].location.gamma


def trace_arcs(w_min: float, w_max: float, n_samples: int, max_workers: int = 1,
               bisection_steps: int = BISECTION_STEPS) -> List[EPRecord]:
    """
    Sample both exceptional arcs on a uniform w grid.

    Args:
        w_min: Lower end, ≥ 2√2
        w_max: Upper end
        n_samples: Number of w samples, ≥ 2
        max_workers: Threads for the per-w location
        bisection_steps: Bisection iterations per root

    Returns:
        Records in w order, lower before upper at each w
    """
    if w_min < W_NEXUS * (1.0 - 1e-12):
        raise ValueError(f"w range must start at or above 2√2, got {w_min}")
    if n_samples < 2 or not w_max > w_min:
        raise ValueError("need n_samples >= 2 and w_max > w_min")

    w_grid = np.linspace(w_min, w_max, n_samples)
    if math.isclose(w_min, W_NEXUS, rel_tol=1e-12):
        w_grid[0] = W_NEXUS
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        per_w = list(pool.map(partial(locate_ep2, bisection_steps=bisection_steps), w_grid))
    return [record for records in per_w for record in records]


def track_eigensystems(grid: Sequence[float], systems: Sequence[EigenSystem], w: Optional[float] = None) -> SpectralBranchSet:
    """
    Carry branch identity along a sequence of eigensystems.

    Args:
        grid: Parameter values labelling the systems
        systems: Eigensystems in grid order
        w: Coupling ratio, recorded for provenance

    Returns:
        SpectralBranchSet with branches ordered as in the first system
    """
    n = len(systems)
    branches = np.empty((3, n), dtype=complex)
    vectors = np.empty((n, 3, 3), dtype=complex)
    overlaps = np.empty((max(n - 1, 0), 3))
    coalesced = []

    branches[:, 0] = systems[0].values
    vectors[0] = systems[0].vectors
    for k in range(1, n):
        system = systems[k]
        perm, matched = match_branches(vectors[k - 1], system.vectors, branches[:, k - 1], system.values)
        order = list(perm)
        branches[:, k] = system.values[order]
        vectors[k] = system.vectors[:, order]
        overlaps[k - 1] = matched
        if matched.min() < 0.5:
            logger.debug("Weak branch overlap %.3f at grid value %g", matched.min(), grid[k])
    for k, system in enumerate(systems):
        if system.coalesced:
            coalesced.append(k)

    return SpectralBranchSet(
        grid=np.asarray(grid, dtype=float),
        branches=branches,
        vectors=vectors,
        overlaps=overlaps,
        w=w,
        coalesced=coalesced,
    )


def sweep_spectrum(w: float, gamma_grid: Sequence[float], max_workers: int = 1) -> SpectralBranchSet:
    """
    Eigenvalues of H(w, Γ̄) along a Γ̄ grid with branch tracking.

    Eigensystems are computed in parallel and tracked in grid order, so the
    result does not depend on max_workers.

    Args:
        w: Coupling ratio
        gamma_grid: Strictly increasing Γ̄ values, at least two
        max_workers: Threads for the per-point eigensystems

    Returns:
        SpectralBranchSet
    """
    grid = np.asarray(gamma_grid, dtype=float)
    if grid.ndim != 1 or len(grid) < 2:
        raise ValueError("gamma grid needs at least two points")
    if np.any(np.diff(grid) <= 0):
        raise ValueError("gamma grid must be strictly increasing")

    def solve(gamma):
        return eigensystem(build_hamiltonian(ParamPoint(w, float(gamma))))

    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        systems = list(pool.map(solve, grid))
    logger.debug("Swept %d points at w=%g", len(grid), w)
    return track_eigensystems(grid, systems, w=w)
