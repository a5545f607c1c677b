"""
Model Hamiltonians for the three-state dissipative system.

H = [[0, 1, 0], [1, 0, w], [0, w, −iΓ̄]] in units of Ω₁, plus the two
effective two-level reductions (strong coupling and Zeno subspace) and the
closed-form characteristic polynomial.
"""
import math
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from src.utils import ParamPoint

STRONG_COUPLING = 'strong-coupling'
ZENO = 'zeno'
REGIMES = (STRONG_COUPLING, ZENO)

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
IDENTITY2 = np.eye(2, dtype=complex)


@dataclass(frozen=True)
class EffectiveTwoLevel:
    """2x2 effective Hamiltonian and the regime it describes."""

    entries: np.ndarray
    regime: str


@dataclass(frozen=True)
class CubicCoeffs:
    """
    Characteristic polynomial λ³ + aλ² + bλ + c of the model and its real
    reduction μ³ + pμ² + qμ + r under λ = −iμ.
    """

    a: complex
    b: complex
    c: complex
    p: float
    q: float
    r: float

    def complex_coeffs(self) -> Tuple[complex, complex, complex]:
        return self.a, self.b, self.c


def build_hamiltonian(p: ParamPoint) -> np.ndarray:
    """
    Build the model Hamiltonian.

    Args:
        p: Parameter point (w, Γ̄)

    Returns:
        3x3 complex matrix in units of Ω₁
    """
    H = np.zeros((3, 3), dtype=complex)
    H[0, 1] = H[1, 0] = 1.0
    H[1, 2] = H[2, 1] = p.w
    H[2, 2] = -1j * p.gamma
    return H


def _check_regime(regime: str) -> None:
    if regime not in REGIMES:
        raise ValueError(f"unknown regime '{regime}', expected one of {REGIMES}")


def effective_hamiltonian(p: ParamPoint, regime: str) -> EffectiveTwoLevel:
    """
    Effective two-level Hamiltonian.

    strong-coupling: −i(Γ̄/2)I + wσₓ + i(Γ̄/2)σ_z, state |1⟩ decoupled.
    zeno: −i(w²/2Γ̄)I + σₓ + i(w²/2Γ̄)σ_z, state |3⟩ adiabatically eliminated.

    Args:
        p: Parameter point
        regime: 'strong-coupling' or 'zeno'

    Returns:
        EffectiveTwoLevel

    Raises:
        ZeroDivisionError: zeno regime at Γ̄ = 0
    """
    _check_regime(regime)
    if regime == STRONG_COUPLING:
        half = p.gamma / 2.0
        entries = -1j * half * IDENTITY2 + p.w * SIGMA_X + 1j * half * SIGMA_Z
    else:
        if p.gamma == 0:
            raise ZeroDivisionError("zeno regime needs gamma > 0")
        rate = p.w * p.w / (2.0 * p.gamma)
        entries = -1j * rate * IDENTITY2 + SIGMA_X + 1j * rate * SIGMA_Z
    return EffectiveTwoLevel(entries=entries, regime=regime)


def effective_eigenvalues(p: ParamPoint, regime: str) -> np.ndarray:
    """Closed-form eigenvalues tr/2 ± √(((a−d)/2)² + bc) of the effective model."""
    m = effective_hamiltonian(p, regime).entries
    centre = (m[0, 0] + m[1, 1]) / 2.0
    root = np.sqrt(complex(((m[0, 0] - m[1, 1]) / 2.0) ** 2 + m[0, 1] * m[1, 0]))
    return np.array([centre + root, centre - root], dtype=complex)


def ep2_condition(w: float, arc: str) -> float:
    """
    Γ̄ at which the effective two-level model has an EP2.

    Args:
        w: Coupling ratio, w > 0
        arc: 'strong-coupling' (Γ̄ = 2w) or 'zeno' (Γ̄ = w²/2)

    Returns:
        Dissipation Γ̄ at the effective exceptional point
    """
    _check_regime(arc)
    if not w > 0:
        raise ValueError(f"w must be positive, got {w}")
    if arc == STRONG_COUPLING:
        return 2.0 * w
    return w * w / 2.0


def char_poly_coeffs(p: ParamPoint) -> CubicCoeffs:
    """
    Closed-form characteristic polynomial of build_hamiltonian(p).

    Returns:
        (a, b, c) = (iΓ̄, −(w²+1), −iΓ̄) and (p, q, r) = (−Γ̄, w²+1, −Γ̄)
    """
    return CubicCoeffs(
        a=1j * p.gamma,
        b=complex(-p.q),
        c=-1j * p.gamma,
        p=-p.gamma,
        q=p.q,
        r=-p.gamma,
    )


def nexus_point() -> ParamPoint:
    """(w, Γ̄) = (2√2, 3√3), where both exceptional arcs meet."""
    return ParamPoint(w=2.0 * math.sqrt(2.0), gamma=3.0 * math.sqrt(3.0))
