"""
Tests for perturbations around the exceptional nexus.
"""
import math

import numpy as np
import pytest

from src.perturbation import (
    BIORTHOGONAL,
    DIAGONAL,
    MIXED,
    NEXUS_VALUE,
    RIGHT,
    berry_phase,
    branch_permutation,
    gauge_vectors,
    loop_spectrum,
    perturbation_case,
    perturbed_hamiltonian,
    perturbed_spectrum,
    scaling_exponents,
    transport_phase,
)
from src.utils import TrackingLostError

EPS_GRID = np.logspace(-4, -2, 12)
THETAS = [0.0, 0.3, 1.0, 2.0]


def fixed_points(perm):
    return sum(1 for j, target in enumerate(perm) if j == target)


class TestPerturbationCase:
    """Test suite for perturbation directions."""

    def test_diagonal(self):
        """Test the diagonal case is |3⟩⟨3|."""
        h1 = perturbation_case(DIAGONAL).h1
        expected = np.zeros((3, 3), dtype=complex)
        expected[2, 2] = 1.0
        assert np.array_equal(h1, expected)

    def test_mixed(self):
        """Test the mixed case entries."""
        h1 = perturbation_case(MIXED).h1
        assert h1[0, 2] == 1j
        assert h1[2, 0] == -1j
        assert h1[1, 0] == pytest.approx(math.sqrt(3.0) / 3.0)
        assert h1[1, 2] == pytest.approx(math.sqrt(6.0) / 6.0)
        assert np.count_nonzero(h1) == 4

    def test_unknown_case(self):
        """Test an unknown case raises ValueError."""
        with pytest.raises(ValueError):
            perturbation_case('offdiagonal')

    def test_zero_perturbation_is_nexus(self):
        """Test ε = 0 returns the nexus eigenvalue."""
        system = perturbed_spectrum(perturbation_case(DIAGONAL), 0.0, 0.0)
        assert np.all(np.abs(system.values - NEXUS_VALUE) < 1e-9)

    def test_negative_eps(self):
        """Test a negative strength raises ValueError."""
        with pytest.raises(ValueError):
            perturbed_spectrum(perturbation_case(DIAGONAL), -0.1, 0.0)


class TestScalingExponents:
    """Test suite for splitting exponents."""

    @pytest.mark.parametrize('theta', THETAS)
    def test_diagonal_cube_root(self, theta):
        """Test all three branches split as ε^(1/3) over ε ∈ [1e-4, 1e-2]."""
        fits = scaling_exponents(perturbation_case(DIAGONAL), theta, EPS_GRID)
        assert len(fits) == 3
        for fit in fits:
            assert fit.exponent == pytest.approx(1.0 / 3.0, abs=0.02)
            assert fit.fit_quality > 0.999

    @pytest.mark.parametrize('theta', THETAS)
    def test_mixed_square_root_and_linear(self, theta):
        """Test the mixed case splits as ε^(1/2), ε^(1/2), ε over ε ∈ [1e-4, 1e-2]."""
        fits = scaling_exponents(perturbation_case(MIXED), theta, EPS_GRID)
        exponents = [fit.exponent for fit in fits]
        assert exponents == pytest.approx([0.5, 0.5, 1.0], abs=0.02)
        assert all(fit.fit_quality > 0.999 for fit in fits)

    def test_window_recorded(self):
        """Test each fit records the ε window."""
        fits = scaling_exponents(perturbation_case(DIAGONAL), 0.3, EPS_GRID)
        assert fits[0].eps_window == pytest.approx((1e-4, 1e-2))
        assert fits[0].to_dict()['eps_window'] == pytest.approx([1e-4, 1e-2])

    def test_too_few_points(self):
        """Test fewer than 8 points raise ValueError."""
        with pytest.raises(ValueError):
            scaling_exponents(perturbation_case(DIAGONAL), 0.3, np.logspace(-5, -3, 5))

    def test_outside_window(self):
        """Test a grid reaching beyond 1e-2 raises ValueError."""
        with pytest.raises(ValueError):
            scaling_exponents(perturbation_case(DIAGONAL), 0.3, np.logspace(-4, -1, 10))

    def test_tracking_loss_propagates(self, mocker):
        """Test lost branch identity surfaces as TrackingLostError."""
        mocker.patch('src.perturbation.match_branches',
                     return_value=((0, 1, 2), np.array([0.1, 0.9, 0.9])))
        with pytest.raises(TrackingLostError):
            scaling_exponents(perturbation_case(DIAGONAL), 0.3, EPS_GRID)


class TestBranchPermutation:
    """Test suite for the loop permutation."""

    def test_diagonal_three_cycle(self):
        """Test the diagonal case permutes all three branches cyclically."""
        perm = branch_permutation(perturbation_case(DIAGONAL), 0.1, 512)
        assert sorted(perm) == [0, 1, 2]
        assert fixed_points(perm) == 0

    def test_mixed_two_plus_one(self):
        """Test the mixed case swaps two branches and fixes one."""
        perm = branch_permutation(perturbation_case(MIXED), 0.1, 512)
        assert sorted(perm) == [0, 1, 2]
        assert fixed_points(perm) == 1

    def test_loop_spectrum_shapes_and_closure(self):
        """Test the loop ends on a permutation of its starting eigenvalues."""
        thetas, branches = loop_spectrum(perturbation_case(DIAGONAL), 0.1, 256)
        assert thetas.shape == (257,)
        assert branches.shape == (3, 257)
        assert thetas[-1] == pytest.approx(2.0 * math.pi)
        start = np.sort_complex(branches[:, 0])
        end = np.sort_complex(branches[:, -1])
        assert np.allclose(start, end, atol=1e-9)
        assert not np.allclose(branches[:, 0], branches[:, -1], atol=1e-3)


class TestTransportPhase:
    """Test suite for the discrete transport phase."""

    def test_constant_vector_has_no_phase(self):
        """Test an unchanging vector accumulates nothing."""
        v = np.array([1.0, 1j, 0.5])
        assert transport_phase([v] * 10) == pytest.approx(0.0, abs=1e-12)
        assert transport_phase([v] * 10, [v.conj()] * 10) == pytest.approx(0.0, abs=1e-12)

    def test_winding_vector(self):
        """Test e^{iθ} winding gives −2π."""
        base = np.array([1.0, 0.0, 0.0], dtype=complex)
        rights = [base * np.exp(1j * 2.0 * math.pi * k / 64) for k in range(64)]
        assert transport_phase(rights) == pytest.approx(-2.0 * math.pi, abs=1e-9)

    @pytest.mark.parametrize('convention', [BIORTHOGONAL, RIGHT])
    def test_gauge_invariance(self, convention):
        """Test random per-sample rescaling changes the phase by a multiple of 2π."""
        rng = np.random.default_rng(9)
        n = 40
        angles = np.linspace(0.0, 2.0 * math.pi, n, endpoint=False)
        rights = [np.array([1.0, np.exp(1j * a), 0.3 * np.exp(2j * a)]) for a in angles]
        rights = [r / np.linalg.norm(r) for r in rights]
        lefts = [r.conj() + 0.1 * np.array([0.0, 1.0, 1j]) for r in rights] if convention == BIORTHOGONAL else None

        scales = np.exp(1j * rng.uniform(0.0, 2.0 * math.pi, size=n))
        rescaled = [s * r for s, r in zip(scales, rights)]
        if lefts is None:
            before = transport_phase(rights)
            after = transport_phase(rescaled)
        else:
            left_scales = rng.uniform(0.5, 2.0, size=n) * np.exp(1j * rng.uniform(0.0, 2.0 * math.pi, size=n))
            before = transport_phase(rights, lefts)
            after = transport_phase(rescaled, [s * l for s, l in zip(left_scales, lefts)])
        turns = (after - before) / (2.0 * math.pi)
        assert turns == pytest.approx(round(turns), abs=1e-9)

    def test_gauge_vectors_are_eigenvectors(self):
        """Test the adjugate gauge gives left and right eigenvectors."""
        case = perturbation_case(MIXED)
        H = perturbed_hamiltonian(case, 0.1j)
        system = perturbed_spectrum(case, 0.1, math.pi / 2.0)
        for value in system.values:
            left, right = gauge_vectors(H, value)
            assert np.linalg.norm(H @ right - value * right) < 1e-9 * np.linalg.norm(right)
            assert np.linalg.norm(left @ H - value * left) < 1e-9 * np.linalg.norm(left)


class TestBerryPhase:
    """Test suite for Berry phases around the nexus."""

    def test_diagonal_quantized(self):
        """Test every diagonal branch closes after 3 cycles with phase −2π."""
        results = berry_phase(perturbation_case(DIAGONAL), 0.1, 2048)
        assert [r.cycles_to_closure for r in results] == [3, 3, 3]
        for r in results:
            assert r.phase_over_pi == pytest.approx(-2.0, abs=0.01)
            assert r.convention == BIORTHOGONAL

    def test_mixed_cycles_and_phases(self):
        """Test the mixed case phases on its 2-cycle and its fixed branch."""
        results = berry_phase(perturbation_case(MIXED), 0.1, 2048)
        cycles = sorted(r.cycles_to_closure for r in results)
        assert cycles == [1, 2, 2]
        pair = [r for r in results if r.cycles_to_closure == 2]
        single = [r for r in results if r.cycles_to_closure == 1][0]
        assert pair[0].phase == pytest.approx(pair[1].phase, abs=1e-9)
        # adjugate gauge: −(3 − 2√2)π on the pair, −2√2π on the fixed branch
        assert pair[0].phase_over_pi == pytest.approx(2.0 * math.sqrt(2.0) - 3.0, abs=0.01)
        assert single.phase_over_pi == pytest.approx(-2.0 * math.sqrt(2.0), abs=0.01)
        assert pair[0].phase_over_pi + single.phase_over_pi == pytest.approx(-3.0, abs=0.01)

    @pytest.mark.parametrize('cycles, reported', [(2, -2.17), (1, -0.83)])
    def test_mixed_agrees_with_reported_values_mod_two_pi(self, cycles, reported):
        """Test the mixed phases match −2.17π and −0.83π up to whole turns."""
        results = berry_phase(perturbation_case(MIXED), 0.1, 2048)
        phase = [r for r in results if r.cycles_to_closure == cycles][0].phase_over_pi
        offset = (phase - reported) / 2.0
        assert offset == pytest.approx(round(offset), abs=0.025)

    def test_converges_with_sampling(self):
        """Test doubling the samples moves the phase by under 0.01π."""
        case = perturbation_case(DIAGONAL)
        coarse = berry_phase(case, 0.1, 1024)
        fine = berry_phase(case, 0.1, 2048)
        for a, b in zip(coarse, fine):
            assert abs(a.phase - b.phase) < 0.01 * math.pi

    def test_right_convention_runs(self):
        """Test the right-right convention keeps the cycle structure."""
        results = berry_phase(perturbation_case(DIAGONAL), 0.1, 512, convention=RIGHT)
        assert [r.cycles_to_closure for r in results] == [3, 3, 3]
        assert all(r.convention == RIGHT for r in results)
        assert all(math.isfinite(r.phase) for r in results)

    def test_result_dict(self):
        """Test the JSON form of a result."""
        result = berry_phase(perturbation_case(DIAGONAL), 0.1, 256)[0]
        data = result.to_dict()
        assert data['n_samples'] == 256
        assert data['loop_radius'] == 0.1
        assert data['phase_over_pi'] == pytest.approx(result.phase / math.pi)

    def test_too_few_samples(self):
        """Test fewer than 256 samples raise ValueError."""
        with pytest.raises(ValueError):
            berry_phase(perturbation_case(DIAGONAL), 0.1, 100)

    def test_non_positive_eps(self):
        """Test a zero radius raises ValueError."""
        with pytest.raises(ValueError):
            berry_phase(perturbation_case(DIAGONAL), 0.0, 512)

    def test_unknown_convention(self):
        """Test an unknown convention raises ValueError."""
        with pytest.raises(ValueError):
            berry_phase(perturbation_case(DIAGONAL), 0.1, 512, convention='left')
