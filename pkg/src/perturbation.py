"""
Perturbations of the exceptional nexus Hamiltonian H' = H_EX + zH₁.

Splitting exponents come from log-log fits of |E'_j − E_EX| against |z|;
Berry phases from discrete parallel transport around |z| = ε.
"""
import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from src.complex_linalg import EigenSystem, adjugate, eigensystem, match_branches
from src.model import build_hamiltonian, nexus_point
from src.utils import TrackingLostError

logger = logging.getLogger(__name__)

DIAGONAL = 'diagonal'
MIXED = 'mixed'
CASES = (DIAGONAL, MIXED)

BIORTHOGONAL = 'biorthogonal'
RIGHT = 'right'
CONVENTIONS = (BIORTHOGONAL, RIGHT)

NEXUS_VALUE = -1j * math.sqrt(3.0)
MIN_TRACKING_OVERLAP = 0.5
MIN_LOOP_SAMPLES = 256
# fixed adjugate column/row for the holomorphic gauge; largest at the nexus
GAUGE_INDEX = 2


@dataclass(frozen=True)
class PerturbationCase:
    """Perturbation direction H₁."""

    kind: str
    h1: np.ndarray


@dataclass
class ScalingFit:
    """Log-log slope of one branch's splitting from the nexus eigenvalue."""

    branch_id: int
    exponent: float
    fit_quality: float
    eps_window: Tuple[float, float]

    def to_dict(self) -> Dict[str, Any]:
        return {
            'branch_id': self.branch_id,
            'exponent': self.exponent,
            'fit_quality': self.fit_quality,
            'eps_window': list(self.eps_window),
        }


@dataclass
class BerryResult:
    """Phase accumulated by one branch until it returns to itself."""

    branch_id: int
    cycles_to_closure: int
    phase: float
    loop_radius: float
    n_samples: int
    convention: str = BIORTHOGONAL

    @property
    def phase_over_pi(self) -> float:
        return self.phase / math.pi

    def to_dict(self) -> Dict[str, Any]:
        return {
            'branch_id': self.branch_id,
            'cycles_to_closure': self.cycles_to_closure,
            'phase': self.phase,
            'phase_over_pi': self.phase_over_pi,
            'loop_radius': self.loop_radius,
            'n_samples': self.n_samples,
            'convention': self.convention,
        }


def perturbation_case(kind: str) -> PerturbationCase:
    """
    Build a perturbation direction.

    Args:
        kind: 'diagonal' for H₁ = |3⟩⟨3|, 'mixed' for
            H₁ = i|1⟩⟨3| − i|3⟩⟨1| + (√3/3)|2⟩⟨1| + (√6/6)|2⟩⟨3|

    Returns:
        PerturbationCase
    """
    h1 = np.zeros((3, 3), dtype=complex)
    if kind == DIAGONAL:
        h1[2, 2] = 1.0
    elif kind == MIXED:
        h1[0, 2] = 1j
        h1[2, 0] = -1j
        h1[1, 0] = math.sqrt(3.0) / 3.0
        h1[1, 2] = math.sqrt(6.0) / 6.0
    else:
        raise ValueError(f"unknown perturbation case '{kind}', expected one of {CASES}")
    return PerturbationCase(kind=kind, h1=h1)


def nexus_hamiltonian() -> np.ndarray:
    return build_hamiltonian(nexus_point())


def perturbed_hamiltonian(case: PerturbationCase, z: complex) -> np.ndarray:
    return nexus_hamiltonian() + z * case.h1


def perturbed_spectrum(case: PerturbationCase, eps: float, theta: float) -> EigenSystem:
    """
    Eigensystem of H_EX + εe^{iθ}H₁.

    Args:
        case: Perturbation direction
        eps: Perturbation strength |z|, ≥ 0
        theta: Phase of z

    Returns:
        EigenSystem
    """
    if eps < 0:
        raise ValueError(f"eps must be non-negative, got {eps}")
    z = eps * complex(math.cos(theta), math.sin(theta))
    return eigensystem(perturbed_hamiltonian(case, z))


def _reorder(system: EigenSystem, order: Sequence[int]) -> EigenSystem:
    order = list(order)
    return EigenSystem(
        values=system.values[order],
        vectors=system.vectors[:, order],
        residual=system.residual,
        coalesced=system.coalesced,
    )


def _track(previous: EigenSystem, current: EigenSystem, where: str) -> EigenSystem:
    perm, matched = match_branches(previous.vectors, current.vectors, previous.values, current.values)
    if matched.min() < MIN_TRACKING_OVERLAP:
        raise TrackingLostError(
            f"branch overlap {matched.min():.3f} below {MIN_TRACKING_OVERLAP} at {where}"
        )
    return _reorder(current, perm)


def scaling_exponents(case: PerturbationCase, theta: float, eps_grid: Sequence[float]) -> List[ScalingFit]:
    """
    Splitting exponents of the three perturbed branches.

    Args:
        case: Perturbation direction
        theta: Phase of z, fixed along the sweep
        eps_grid: Log-spaced |z| values within [1e-5, 1e-2], at least 8

    Returns:
        One ScalingFit per tracked branch

    Raises:
        TrackingLostError: Consecutive samples share no clear branch identity
    """
    eps = np.sort(np.asarray(eps_grid, dtype=float))
    if len(eps) < 8:
        raise ValueError("eps grid needs at least 8 points")
    if eps[0] < 1e-5 * (1 - 1e-9) or eps[-1] > 1e-2 * (1 + 1e-9):
        raise ValueError("eps grid must lie within [1e-5, 1e-2]")

    tracked = [perturbed_spectrum(case, eps[0], theta)]
    for value in eps[1:]:
        tracked.append(_track(tracked[-1], perturbed_spectrum(case, value, theta), f"eps={value:.3e}"))

    log_eps = np.log(eps)
    fits = []
    for j in range(3):
        log_split = np.log(np.array([abs(s.values[j] - NEXUS_VALUE) for s in tracked]))
        slope, intercept = np.polyfit(log_eps, log_split, 1)
        predicted = slope * log_eps + intercept
        ss_res = float(np.sum((log_split - predicted) ** 2))
        ss_tot = float(np.sum((log_split - log_split.mean()) ** 2))
        quality = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
        fits.append(ScalingFit(
            branch_id=j,
            exponent=float(slope),
            fit_quality=quality,
            eps_window=(float(eps[0]), float(eps[-1])),
        ))
    return sorted(fits, key=lambda f: f.exponent)


def gauge_vectors(H: np.ndarray, value: complex) -> Tuple[np.ndarray, np.ndarray]:
    """
    Holomorphic left/right eigenvector gauge: a fixed row and column of
    adj(H − λI). Single valued in (z, λ), so loops close without phase fixing.
    """
    adj = adjugate(H - value * np.eye(3))
    return adj[GAUGE_INDEX, :], adj[:, GAUGE_INDEX]


def transport_phase(rights: Sequence[np.ndarray], lefts: Optional[Sequence[np.ndarray]] = None) -> float:
    """
    Discrete Wilson-loop phase −Σ arg(o_k) around a closed sample path.

    With lefts, o_k = ℓ_k·R_{k+1} / ℓ_k·R_k (biorthogonal transport);
    without, o_k = ⟨v_k|v_{k+1}⟩ with unit right vectors. The path is closed
    by pairing the last sample with the first.

    Args:
        rights: Right eigenvectors along the path
        lefts: Left eigenvectors (row vectors) along the path

    Returns:
        Phase in radians
    """
    n = len(rights)
    total = 0.0
    for k in range(n):
        nxt = rights[(k + 1) % n]
        if lefts is None:
            step = np.vdot(rights[k], nxt)
        else:
            step = (lefts[k] @ nxt) / (lefts[k] @ rights[k])
        total += float(np.angle(step))
    return -total


def _loop_systems(case: PerturbationCase, eps: float, n_samples: int) -> List[EigenSystem]:
    thetas = 2.0 * math.pi * np.arange(n_samples) / n_samples
    return [perturbed_spectrum(case, eps, float(theta)) for theta in thetas]


def _walk(systems: List[EigenSystem], cycles: int) -> List[EigenSystem]:
    """Track branches through `cycles` loops; returns cycles·n + 1 samples."""
    n = len(systems)
    path = [systems[0]]
    for k in range(1, cycles * n + 1):
        path.append(_track(path[-1], systems[k % n], f"loop step {k}"))
    return path


def _cycle_permutation(start: EigenSystem, end: EigenSystem) -> Tuple[int, int, int]:
    """Start-branch index reached by each branch after one loop."""
    perm = []
    for j in range(3):
        distances = np.abs(start.values - end.values[j])
        perm.append(int(np.argmin(distances)))
    return tuple(perm)


def _closure_order(perm: Sequence[int], j: int) -> int:
    order, current = 1, perm[j]
    while current != j:
        current = perm[current]
        order += 1
    return order


def loop_spectrum(case: PerturbationCase, eps: float, n_theta: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Tracked eigenvalues along one loop z = εe^{iθ}, θ ∈ [0, 2π].

    Returns:
        (thetas, branches) with shapes (n_theta + 1,) and (3, n_theta + 1)
    """
    systems = _loop_systems(case, eps, n_theta)
    path = _walk(systems, 1)
    thetas = 2.0 * math.pi * np.arange(n_theta + 1) / n_theta
    return thetas, np.array([s.values for s in path]).T


def branch_permutation(case: PerturbationCase, eps: float, n_samples: int) -> Tuple[int, int, int]:
    """
    Branch permutation after one loop of z around |z| = ε.

    Returns:
        perm with perm[j] the starting branch that branch j lands on
    """
    systems = _loop_systems(case, eps, n_samples)
    path = _walk(systems, 1)
    return _cycle_permutation(path[0], path[-1])


def berry_phase(
    case: PerturbationCase,
    eps: float = 0.1,
    n_samples: int = 1024,
    convention: str = BIORTHOGONAL,
) -> List[BerryResult]:
    """
    Berry phase of each perturbed branch around z = εe^{iθ}.

    Branches are followed by eigenvector overlap for as many loops as it takes
    each to return to its starting eigenvalue (1, 2 or 3).
    Phases are taken in the adjugate gauge; another single-valued gauge can
    move whole turns of 2π between branches of a cycle.

    Args:
        case: Perturbation direction
        eps: Loop radius, > 0
        n_samples: θ samples per loop, ≥ 256
        convention: 'biorthogonal' (left-right) or 'right' (right-right)

    Returns:
        One BerryResult per starting branch

    Raises:
        TrackingLostError: Consecutive samples share no clear branch identity
    """
    if not eps > 0:
        raise ValueError(f"eps must be positive, got {eps}")
    if n_samples < MIN_LOOP_SAMPLES:
        raise ValueError(f"n_samples must be at least {MIN_LOOP_SAMPLES}")
    if convention not in CONVENTIONS:
        raise ValueError(f"unknown convention '{convention}', expected one of {CONVENTIONS}")

    systems = _loop_systems(case, eps, n_samples)
    one_loop = _walk(systems, 1)
    perm = _cycle_permutation(one_loop[0], one_loop[-1])
    logger.info("Loop permutation for %s case at eps=%g: %s", case.kind, eps, perm)

    max_cycles = max(_closure_order(perm, j) for j in range(3))
    path = _walk(systems, max_cycles) if max_cycles > 1 else one_loop
    thetas = 2.0 * math.pi * np.arange(max_cycles * n_samples + 1) / n_samples

    results = []
    for j in range(3):
        cycles = _closure_order(perm, j)
        steps = cycles * n_samples
        samples = path[:steps]
        if convention == BIORTHOGONAL:
            lefts, rights = [], []
            for k, system in enumerate(samples):
                z = eps * complex(math.cos(thetas[k]), math.sin(thetas[k]))
                left, right = gauge_vectors(perturbed_hamiltonian(case, z), system.values[j])
                lefts.append(left)
                rights.append(right)
            phase = transport_phase(rights, lefts)
        else:
            phase = transport_phase([system.vectors[:, j] for system in samples])
        results.append(BerryResult(
            branch_id=j,
            cycles_to_closure=cycles,
            phase=phase,
            loop_radius=eps,
            n_samples=n_samples,
            convention=convention,
        ))
    return results
