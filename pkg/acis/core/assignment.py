"""
Maximum-score assignment of predictions (rows) to ground-truth segments (columns).

Rectangular matrices are padded to square with zero scores; a row matched to a padding column is
reported as unassigned. Exactly min(t, N) rows are assigned. Among all optimal assignments the
lexicographically smallest mapping is returned, comparing rows in order, columns ascending and
"unassigned" last.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from acis.core.exceptions import ContractViolation, MatchingTooLarge

log = logging.getLogger("acis.core.assignment")

BRUTE_FORCE_LIMIT = 8

# relative slack under which two totals count as a tie
TIE_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Assignment:
    mapping: Tuple[Optional[int], ...]
    total: float

    def pairs(self) -> List[Tuple[int, int]]:
        return [(row, col) for row, col in enumerate(self.mapping) if col is not None]

    def inverse(self) -> Dict[int, int]:
        return {col: row for row, col in self.pairs()}

    @property
    def assigned(self) -> int:
        return sum(1 for col in self.mapping if col is not None)


def score_matrix(
    preds: Sequence[np.ndarray], gts: Sequence[np.ndarray], f: Callable[[np.ndarray, np.ndarray], float]
) -> np.ndarray:
    scores = np.zeros((len(preds), len(gts)))
    for i, pred in enumerate(preds):
        for j, gt in enumerate(gts):
            scores[i, j] = f(pred, gt)
    return scores


def _validate(scores) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.ndim != 2:
        raise ContractViolation(f"score matrix must be 2-dimensional, got shape {scores.shape}")
    if scores.shape[0] == 0 or scores.shape[1] == 0:
        raise ContractViolation(f"score matrix must be non-empty, got shape {scores.shape}")
    if not np.all(np.isfinite(scores)):
        raise ContractViolation("score matrix contains non-finite entries")
    return scores


def _total(scores: np.ndarray, mapping: Sequence[Optional[int]]) -> float:
    total = 0.0
    for row, col in enumerate(mapping):
        if col is not None:
            total += float(scores[row, col])
    return total


def _hungarian(cost: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Square minimum-cost assignment with potentials, O(n^3).
    Returns (row_to_col, u, v) where u, v are optimal duals: cost[i, j] - u[i] - v[j] >= 0,
    with equality on the returned assignment.
    """
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    owner = np.zeros(n + 1, dtype=np.int64)  # owner[j]: 1-based row holding column j, 0 = free
    way = np.zeros(n + 1, dtype=np.int64)

    for row in range(1, n + 1):
        owner[0] = row
        j0 = 0
        minv = np.full(n + 1, np.inf)
        used = np.zeros(n + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = owner[j0]
            free = ~used[1:]
            reduced = cost[i0 - 1] - u[i0] - v[1:]
            better = free & (reduced < minv[1:])
            minv[1:][better] = reduced[better]
            way[1:][better] = j0

            candidates = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(candidates)) + 1
            delta = candidates[j1 - 1]

            u[owner[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if owner[j0] == 0:
                break

        while j0:
            j1 = way[j0]
            owner[j0] = owner[j1]
            j0 = j1

    row_to_col = np.zeros(n, dtype=np.int64)
    for col in range(1, n + 1):
        row_to_col[owner[col] - 1] = col - 1

    return row_to_col, u[1:], v[1:]


def _augment(row: int, tight: np.ndarray, cols: Set[int], owner: Dict[int, int], seen: Set[int]) -> bool:
    for col in np.flatnonzero(tight[row]):
        col = int(col)
        if col not in cols or col in seen:
            continue
        seen.add(col)
        if col not in owner or _augment(owner[col], tight, cols, owner, seen):
            owner[col] = row
            return True
    return False


def _has_perfect_matching(tight: np.ndarray, rows: Sequence[int], cols: Set[int]) -> bool:
    owner: Dict[int, int] = {}
    for row in rows:
        if not _augment(row, tight, cols, owner, set()):
            return False
    return True


def max_matching(scores) -> Assignment:
    scores = _validate(scores)
    t, n_gt = scores.shape
    n = max(t, n_gt)

    cost = np.zeros((n, n))
    cost[:t, :n_gt] = -scores
    row_to_col, u, v = _hungarian(cost)

    # an assignment is optimal iff it only uses tight edges of an optimal dual, so the
    # lexicographically smallest optimum is the smallest perfect matching in the tight graph
    tolerance = TIE_TOLERANCE * max(1.0, float(np.abs(scores).max()))
    tight = cost - u[:, None] - v[None, :] <= tolerance
    tight[np.arange(n), row_to_col] = True

    free = set(range(n))
    mapping: List[Optional[int]] = []
    for row in range(t):
        options = [col for col in range(n_gt) if col in free and tight[row, col]]
        options += [col for col in range(n_gt, n) if col in free and tight[row, col]]
        for col in options:
            remaining = free - {col}
            if _has_perfect_matching(tight, range(row + 1, n), remaining):
                free = remaining
                mapping.append(col if col < n_gt else None)
                break
        else:
            raise RuntimeError("tight graph lost its perfect matching")

    return Assignment(mapping=tuple(mapping), total=_total(scores, mapping))


def brute_force_matching(scores) -> Assignment:
    """Exhaustive enumeration over injective maps in lexicographic order. Test oracle."""
    scores = _validate(scores)
    t, n_gt = scores.shape
    if min(t, n_gt) > BRUTE_FORCE_LIMIT:
        raise MatchingTooLarge(min(t, n_gt), BRUTE_FORCE_LIMIT)

    spare_rows = max(0, t - n_gt)
    candidates: List[Tuple[float, Tuple[Optional[int], ...]]] = []

    def enumerate_maps(row: int, used: Tuple[int, ...], skipped: int, mapping: Tuple[Optional[int], ...]):
        if row == t:
            candidates.append((_total(scores, mapping), mapping))
            return
        for col in range(n_gt):
            if col not in used:
                enumerate_maps(row + 1, used + (col,), skipped, mapping + (col,))
        if skipped < spare_rows:
            enumerate_maps(row + 1, used, skipped + 1, mapping + (None,))

    enumerate_maps(0, (), 0, ())

    best = max(total for total, _ in candidates)
    tolerance = TIE_TOLERANCE * max(1.0, float(np.abs(scores).max()))
    for total, mapping in candidates:
        if total >= best - tolerance:
            return Assignment(mapping=mapping, total=total)

    raise RuntimeError("no candidate reached the best total")


def perturbed_matching(scores, sigma: float, rng: np.random.Generator) -> Assignment:
    """
    Max-matching on scores + eps with eps ~ N(0, sigma^2) i.i.d.
    The mapping comes from the perturbed matrix; the total is reported on the clean scores.
    """
    scores = _validate(scores)
    if sigma < 0:
        raise ContractViolation(f"sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return max_matching(scores)

    noisy = scores + rng.normal(0.0, sigma, size=scores.shape)
    mapping = max_matching(noisy).mapping
    return Assignment(mapping=mapping, total=_total(scores, mapping))
