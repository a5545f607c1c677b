"""
Complex 3x3 linear algebra: closed-form cubic roots and eigenpairs of small
non-Hermitian matrices.

Eigenvalues come from the characteristic cubic (Cardano plus Newton polish),
eigenvectors from the adjugate of (H - λI), which is exact for 3x3 and stays
well defined at exceptional points where eigenvectors coalesce.
"""
import itertools
import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from src.utils import IllConditionedError

logger = logging.getLogger(__name__)

OMEGA = complex(-0.5, np.sqrt(3.0) / 2.0)

RESIDUAL_LIMIT = 1e-6
ADJUGATE_FLOOR = 1e-14
COALESCENCE_OVERLAP = 1.0 - 1e-8
COALESCENCE_GAP = 1e-3
NEWTON_STEPS = 3


@dataclass
class EigenSystem:
    """
    Three eigenvalues with unit-norm right eigenvectors.

    Attributes:
        values: Eigenvalues, shape (3,), units of Ω₁
        vectors: Right eigenvectors as columns, shape (3, 3)
        residual: max_k ‖H v_k − λ_k v_k‖
        coalesced: True when two or more eigenpairs were merged at an
            exceptional point (the shared vector is replicated)
    """

    values: np.ndarray
    vectors: np.ndarray
    residual: float
    coalesced: bool = False

    def vector(self, k: int) -> np.ndarray:
        return self.vectors[:, k]

    def min_gap(self) -> float:
        """Smallest pairwise eigenvalue distance."""
        v = self.values
        return float(min(abs(v[0] - v[1]), abs(v[0] - v[2]), abs(v[1] - v[2])))


def as_matrix3(H) -> np.ndarray:
    """Validate and convert to a finite complex 3x3 array."""
    M = np.asarray(H, dtype=complex)
    if M.shape != (3, 3):
        raise ValueError(f"expected a 3x3 matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    return M


def _cube_root(u: complex) -> complex:
    # principal branch: argument in (-π/3, π/3]
    return abs(u) ** (1.0 / 3.0) * np.exp(1j * np.angle(u) / 3.0)


def _cubic_value(lam: complex, a: complex, b: complex, c: complex) -> complex:
    return ((lam + a) * lam + b) * lam + c


def _polish(root: complex, others: Sequence[complex], a: complex, b: complex, c: complex) -> complex:
    """Newton steps that never move a root into a neighbour's basin."""
    value = _cubic_value(root, a, b, c)
    for _ in range(NEWTON_STEPS):
        if value == 0:
            break
        slope = (3.0 * root + 2.0 * a) * root + b
        if slope == 0:
            break
        step = value / slope
        reach = min(abs(root - o) for o in others) if others else np.inf
        if reach > 0 and abs(step) > 0.5 * reach:
            break
        candidate = root - step
        candidate_value = _cubic_value(candidate, a, b, c)
        if abs(candidate_value) >= abs(value):
            break
        root, value = candidate, candidate_value
    return root


def sort_roots(roots: Sequence[complex]) -> np.ndarray:
    """Order by (imaginary, real) lexicographically."""
    ordered = sorted((complex(r) for r in roots), key=lambda z: (z.imag, z.real))
    return np.array(ordered, dtype=complex)


def solve_cubic(a: complex, b: complex, c: complex) -> np.ndarray:
    """
    Roots of λ³ + aλ² + bλ + c by Cardano's formula.

    Args:
        a: Quadratic coefficient
        b: Linear coefficient
        c: Constant coefficient

    Returns:
        Three roots (with multiplicity), sorted by (imag, real)
    """
    a, b, c = complex(a), complex(b), complex(c)
    for name, coefficient in (('a', a), ('b', b), ('c', c)):
        if not np.isfinite(coefficient):
            raise ValueError(f"coefficient {name} is not finite")

    shift = a / 3.0
    p = b - a * a / 3.0
    q = 2.0 * a ** 3 / 27.0 - a * b / 3.0 + c

    if p == 0 and q == 0:
        depressed = [0j, 0j, 0j]
    else:
        s = complex(np.sqrt(q * q / 4.0 + p ** 3 / 27.0))
        u = -q / 2.0 + s
        if abs(-q / 2.0 - s) > abs(u):
            u = -q / 2.0 - s
        C = _cube_root(u)
        depressed = []
        for k in range(3):
            Ck = C * OMEGA ** k
            depressed.append(Ck - p / (3.0 * Ck))

    roots = [t - shift for t in depressed]
    polished = []
    for k, root in enumerate(roots):
        others = [r for j, r in enumerate(roots) if j != k]
        polished.append(_polish(root, others, a, b, c))
    return sort_roots(polished)


def char_poly(H) -> Tuple[complex, complex, complex]:
    """
    Coefficients (a, b, c) of det(λI − H) = λ³ + aλ² + bλ + c.

    Args:
        H: 3x3 matrix

    Returns:
        Tuple (a, b, c)
    """
    M = as_matrix3(H)
    a = -(M[0, 0] + M[1, 1] + M[2, 2])
    b = (M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
         + M[0, 0] * M[2, 2] - M[0, 2] * M[2, 0]
         + M[1, 1] * M[2, 2] - M[1, 2] * M[2, 1])
    c = -determinant(M)
    return complex(a), complex(b), complex(c)


def determinant(M: np.ndarray) -> complex:
    return complex(
        M[0, 0] * (M[1, 1] * M[2, 2] - M[1, 2] * M[2, 1])
        - M[0, 1] * (M[1, 0] * M[2, 2] - M[1, 2] * M[2, 0])
        + M[0, 2] * (M[1, 0] * M[2, 1] - M[1, 1] * M[2, 0])
    )


def adjugate(M: np.ndarray) -> np.ndarray:
    """Transpose of the cofactor matrix, so that M · adj(M) = det(M) · I."""
    cof = np.empty((3, 3), dtype=complex)
    for r in range(3):
        rows = [i for i in range(3) if i != r]
        for c in range(3):
            cols = [j for j in range(3) if j != c]
            minor = (M[rows[0], cols[0]] * M[rows[1], cols[1]]
                     - M[rows[0], cols[1]] * M[rows[1], cols[0]])
            cof[r, c] = (-1) ** (r + c) * minor
    return cof.T


def _gaussian_null_basis(M: np.ndarray) -> List[np.ndarray]:
    """Null space by Gaussian elimination with full pivoting."""
    A = M.astype(complex).copy()
    tol = 1e-10 * max(1.0, float(np.max(np.abs(M))))
    col_order = [0, 1, 2]
    rank = 0
    for k in range(3):
        block = np.abs(A[k:, k:])
        i, j = np.unravel_index(int(np.argmax(block)), block.shape)
        if block[i, j] < tol:
            break
        i += k
        j += k
        A[[k, i], :] = A[[i, k], :]
        A[:, [k, j]] = A[:, [j, k]]
        col_order[k], col_order[j] = col_order[j], col_order[k]
        for r in range(k + 1, 3):
            A[r, k:] -= A[r, k] / A[k, k] * A[k, k:]
        rank += 1

    basis = []
    for free in range(rank, 3):
        x = np.zeros(3, dtype=complex)
        x[free] = 1.0
        for r in range(rank - 1, -1, -1):
            x[r] = -(A[r, r + 1:] @ x[r + 1:]) / A[r, r]
        v = np.zeros(3, dtype=complex)
        v[col_order] = x
        basis.append(v / np.linalg.norm(v))
    return basis


def null_basis(M: np.ndarray) -> List[np.ndarray]:
    """
    Unit vectors spanning the (numerical) null space of a singular 3x3 matrix.

    The largest-norm adjugate column is used when M has rank 2; otherwise the
    basis comes from full-pivoting elimination.
    """
    adj = adjugate(M)
    norms = np.linalg.norm(adj, axis=0)
    best = int(np.argmax(norms))
    scale = max(1.0, float(np.max(np.abs(M)))) ** 2
    if norms[best] > ADJUGATE_FLOOR * scale:
        v = adj[:, best]
        return [v / norms[best]]
    return _gaussian_null_basis(M)


def overlap(u: np.ndarray, v: np.ndarray) -> float:
    """|⟨u|v⟩| / (‖u‖‖v‖)."""
    return float(abs(np.vdot(u, v)) / (np.linalg.norm(u) * np.linalg.norm(v)))


def _clusters(values: np.ndarray, vectors: np.ndarray) -> List[List[int]]:
    scale = max(1.0, float(np.max(np.abs(values))))
    parent = list(range(3))

    def find(i):
        while parent[i] != i:
            i = parent[i]
        return i

    for i, j in itertools.combinations(range(3), 2):
        close = abs(values[i] - values[j]) < COALESCENCE_GAP * scale
        if close and overlap(vectors[:, i], vectors[:, j]) > COALESCENCE_OVERLAP:
            parent[find(j)] = find(i)

    groups = {}
    for i in range(3):
        groups.setdefault(find(i), []).append(i)
    return list(groups.values())


def eigensystem(H, strict: bool = True) -> EigenSystem:
    """
    Eigenvalues and right eigenvectors of a 3x3 matrix.

    Args:
        H: 3x3 complex matrix
        strict: Raise IllConditionedError when the residual exceeds 1e-6

    Returns:
        EigenSystem sorted by (imag, real) of the eigenvalues
    """
    M = as_matrix3(H)
    values = solve_cubic(*char_poly(M))
    identity = np.eye(3)

    vectors = np.empty((3, 3), dtype=complex)
    for k, lam in enumerate(values):
        basis = null_basis(M - lam * identity)
        # distinct basis vectors for repeated semisimple eigenvalues
        taken = [vectors[:, j] for j in range(k) if abs(values[j] - lam) < 1e-8 * max(1.0, abs(lam))]
        chosen = min(basis, key=lambda v: max((overlap(v, t) for t in taken), default=0.0))
        vectors[:, k] = chosen

    coalesced = False
    for group in _clusters(values, vectors):
        if len(group) < 2:
            continue
        coalesced = True
        # trace minus the unmerged values, so Σλ = tr(H) survives the merge
        rest = [k for k in range(3) if k not in group]
        centre = complex((np.trace(M) - values[rest].sum()) / len(group))
        shared = null_basis(M - centre * identity)[0]
        for k in group:
            values[k] = centre
            vectors[:, k] = shared

    residual = max(
        float(np.linalg.norm(M @ vectors[:, k] - values[k] * vectors[:, k]))
        for k in range(3)
    )
    system = EigenSystem(values=values, vectors=vectors, residual=residual, coalesced=coalesced)
    if residual > RESIDUAL_LIMIT:
        message = f"eigen residual {residual:.3e} exceeds {RESIDUAL_LIMIT:.0e}"
        if strict:
            raise IllConditionedError(message, system)
        logger.warning("Accepting ill-conditioned eigensystem: %s", message)
    return system


def match_branches(
    prev_vectors: np.ndarray,
    next_vectors: np.ndarray,
    prev_values: Optional[np.ndarray] = None,
    next_values: Optional[np.ndarray] = None,
) -> Tuple[Tuple[int, int, int], np.ndarray]:
    """
    Assign next-sample eigenpairs to previous branches.

    All 3! assignments are scored by total eigenvector overlap; near-ties
    (within 1e-9) go to the assignment with the smallest eigenvalue motion.

    Args:
        prev_vectors: Columns of the previous sample
        next_vectors: Columns of the next sample
        prev_values: Eigenvalues of the previous sample (tiebreak)
        next_values: Eigenvalues of the next sample (tiebreak)

    Returns:
        (perm, overlaps) where next column perm[k] continues branch k and
        overlaps[k] is the matched overlap
    """
    table = np.array([[overlap(prev_vectors[:, k], next_vectors[:, m]) for m in range(3)]
                      for k in range(3)])
    scored = []
    for perm in itertools.permutations(range(3)):
        total = sum(table[k, perm[k]] for k in range(3))
        motion = 0.0
        if prev_values is not None and next_values is not None:
            motion = sum(abs(prev_values[k] - next_values[perm[k]]) for k in range(3))
        scored.append((total, motion, perm))

    best_total = max(s[0] for s in scored)
    contenders = [s for s in scored if s[0] >= best_total - 1e-9]
    _, _, perm = min(contenders, key=lambda s: (s[1], s[2]))
    return perm, np.array([table[k, perm[k]] for k in range(3)])
