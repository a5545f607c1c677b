"""
Tests for the three-level model and its effective two-level limits.
"""
import math

import numpy as np
import pytest

from src.complex_linalg import char_poly, eigensystem
from src.model import (
    STRONG_COUPLING,
    ZENO,
    build_hamiltonian,
    char_poly_coeffs,
    effective_eigenvalues,
    effective_hamiltonian,
    ep2_condition,
    nexus_point,
)
from src.utils import ParamPoint

POPULATION = 10_000


class TestParamPoint:
    """Test suite for ParamPoint validation."""

    def test_q_is_w_squared_plus_one(self):
        """Test q = w² + 1."""
        assert ParamPoint(3.0, 1.0).q == pytest.approx(10.0)

    def test_negative_values_rejected(self):
        """Test negative w or Γ̄ raises ValueError."""
        with pytest.raises(ValueError):
            ParamPoint(-1.0, 1.0)
        with pytest.raises(ValueError):
            ParamPoint(1.0, -0.5)

    def test_non_finite_rejected(self):
        """Test NaN and inf raise ValueError."""
        with pytest.raises(ValueError):
            ParamPoint(float('nan'), 1.0)
        with pytest.raises(ValueError):
            ParamPoint(1.0, float('inf'))

    def test_zero_allowed(self):
        """Test the origin is a valid point."""
        p = ParamPoint(0.0, 0.0)
        assert p.w == 0.0 and p.gamma == 0.0


class TestBuildHamiltonian:
    """Test suite for build_hamiltonian."""

    def test_entries(self):
        """Test the matrix layout."""
        H = build_hamiltonian(ParamPoint(2.5, 4.0))
        expected = np.array([[0, 1, 0], [1, 0, 2.5], [0, 2.5, -4j]], dtype=complex)
        assert np.array_equal(H, expected)

    def test_symmetric_not_hermitian(self):
        """Test H is complex symmetric, and Hermitian only without loss."""
        H = build_hamiltonian(ParamPoint(2.0, 3.0))
        assert np.array_equal(H, H.T)
        assert not np.allclose(H, H.conj().T)
        H0 = build_hamiltonian(ParamPoint(2.0, 0.0))
        assert np.allclose(H0, H0.conj().T)

    def test_char_poly_closed_form(self):
        """Test the closed-form coefficients match the matrix."""
        rng = np.random.default_rng(2)
        for _ in range(POPULATION):
            p = ParamPoint(*rng.uniform(0.0, 10.0, size=2))
            coeffs = char_poly_coeffs(p)
            assert np.allclose(char_poly(build_hamiltonian(p)), coeffs.complex_coeffs(), atol=1e-12)
            assert (coeffs.p, coeffs.q, coeffs.r) == pytest.approx((-p.gamma, p.q, -p.gamma))

    def test_spectrum_symmetric_under_reflection(self):
        """Test the spectrum is closed under λ ↦ −conj(λ)."""
        rng = np.random.default_rng(4)
        for _ in range(POPULATION):
            p = ParamPoint(*rng.uniform(0.0, 10.0, size=2))
            values = eigensystem(build_hamiltonian(p), strict=False).values
            for value in values:
                assert np.min(np.abs(values + np.conj(value))) < 1e-10 * max(1.0, abs(value))

    def test_eigenvalues_in_lower_half_plane(self):
        """Test no eigenvalue has positive imaginary part."""
        values = eigensystem(build_hamiltonian(ParamPoint(3.0, 7.0))).values
        assert np.all(values.imag <= 1e-12)
        assert values.sum() == pytest.approx(-7j)


class TestNexusPoint:
    """Test suite for nexus_point."""

    def test_location(self):
        """Test the nexus lies at (2√2, 3√3)."""
        p = nexus_point()
        assert p.w == pytest.approx(2.0 * math.sqrt(2.0), abs=1e-12)
        assert p.gamma == pytest.approx(3.0 * math.sqrt(3.0), abs=1e-12)

    def test_reduced_cubic_is_perfect_cube(self):
        """Test μ³ − Γ̄μ² + qμ − Γ̄ = (μ − √3)³ at the nexus."""
        coeffs = char_poly_coeffs(nexus_point())
        mu0 = math.sqrt(3.0)
        assert coeffs.p == pytest.approx(-3.0 * mu0)
        assert coeffs.q == pytest.approx(3.0 * mu0 ** 2)
        assert coeffs.r == pytest.approx(-mu0 ** 3)


class TestEffectiveHamiltonian:
    """Test suite for the effective two-level models."""

    def test_zeno_entries(self):
        """Test the zeno model is [[0, 1], [1, −iw²/Γ̄]]."""
        model = effective_hamiltonian(ParamPoint(2.0, 4.0), ZENO)
        expected = np.array([[0, 1], [1, -1j]], dtype=complex)
        assert model.regime == ZENO
        assert np.allclose(model.entries, expected)

    def test_strong_coupling_entries(self):
        """Test the strong-coupling model is [[0, w], [w, −iΓ̄]]."""
        model = effective_hamiltonian(ParamPoint(5.0, 3.0), STRONG_COUPLING)
        expected = np.array([[0, 5], [5, -3j]], dtype=complex)
        assert np.allclose(model.entries, expected)

    def test_zeno_decay_rates(self):
        """Test both zeno eigenvalues decay at rate 0.5 at w=2, Γ̄=4."""
        values = effective_eigenvalues(ParamPoint(2.0, 4.0), ZENO)
        assert np.allclose(-values.imag, 0.5)
        assert np.allclose(np.sort(values.real), [-math.sqrt(3.0) / 2.0, math.sqrt(3.0) / 2.0])

    def test_zeno_needs_dissipation(self):
        """Test the zeno model at Γ̄ = 0 raises ZeroDivisionError."""
        with pytest.raises(ZeroDivisionError):
            effective_hamiltonian(ParamPoint(2.0, 0.0), ZENO)

    def test_unknown_regime(self):
        """Test an unknown regime raises ValueError."""
        with pytest.raises(ValueError):
            effective_hamiltonian(ParamPoint(2.0, 1.0), 'weak')

    @pytest.mark.parametrize('regime', [STRONG_COUPLING, ZENO])
    def test_gap_closes_at_ep2_condition(self, regime):
        """Test the effective eigenvalues coalesce at ep2_condition."""
        w = 7.0
        values = effective_eigenvalues(ParamPoint(w, ep2_condition(w, regime)), regime)
        assert abs(values[0] - values[1]) < 1e-6

    def test_strong_coupling_tracks_full_spectrum(self):
        """Test the strong-coupling eigenvalues approach the full ones at large w."""
        w = 20.0
        for gamma in (0.0, 10.0, 20.0):
            p = ParamPoint(w, gamma)
            full = eigensystem(build_hamiltonian(p)).values
            for value in effective_eigenvalues(p, STRONG_COUPLING):
                nearest = full[np.argmin(np.abs(full - value))]
                assert abs(nearest - value) / abs(nearest) < 2.0 / w ** 2


class TestEP2Condition:
    """Test suite for ep2_condition."""

    def test_strong_coupling(self):
        """Test Γ̄ = 2w."""
        assert ep2_condition(6.0, STRONG_COUPLING) == pytest.approx(12.0)

    def test_zeno(self):
        """Test Γ̄ = w²/2."""
        assert ep2_condition(6.0, ZENO) == pytest.approx(18.0)

    def test_non_positive_w(self):
        """Test w ≤ 0 raises ValueError."""
        with pytest.raises(ValueError):
            ep2_condition(0.0, ZENO)
