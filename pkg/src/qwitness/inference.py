"""Statistics of subsystem A conditioned on measurement outcomes at B.

A :class:`ConditionalTable` records, for each outcome bin of a B observable,
its probability and the conditional state of A. From it come the average
conditional ("inferred") variance

    Var_inf(O) = sum_b P(b) Var(O | b)

and the average modulus of conditional means

    |<C>|_inf = sum_b P(b) |<C | b>|.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyBranchError, SpaceMismatchError
from .hilbert import (
    DensityMatrix,
    LinearOperator,
    SpaceDescriptor,
    State,
    conditional_on_isometry,
    local_matrix,
    matrix_moments,
    reduce_to_subsystem,
)

_TAIL_POLICIES = ("clip_to_edge_bins", "drop")
DEFAULT_BINS = 200
DEFAULT_WIDTH_SIGMAS = 6.0


@dataclass(frozen=True)
class BinningSpec:
    """Uniform binning of B outcomes on ``[lo, hi]``.

    With ``relative=True`` the range is taken relative to the mean of the B
    marginal, so a constant offset of the B observable leaves the grouping
    of outcomes unchanged.
    """

    lo: float
    hi: float
    bin_count: int = DEFAULT_BINS
    tail_policy: str = "clip_to_edge_bins"
    zero_prob_threshold: float = 1e-10
    relative: bool = False

    def __post_init__(self):
        if not self.lo < self.hi:
            raise ValueError(f"binning needs lo < hi, got [{self.lo}, {self.hi}]")
        if self.bin_count < 1:
            raise ValueError("bin_count must be >= 1")
        if self.tail_policy not in _TAIL_POLICIES:
            raise ValueError(f"tail_policy must be one of {_TAIL_POLICIES}")

    @classmethod
    def around_marginal(cls, sd: float, sigmas: float = DEFAULT_WIDTH_SIGMAS, bin_count: int = DEFAULT_BINS, **kw):
        """``mean +- sigmas * sd`` with ``bin_count`` bins (the quadrature default)."""
        half = sigmas * max(sd, 1e-12)
        return cls(-half, half, bin_count, relative=True, **kw)

    def refined(self, factor: int = 2) -> "BinningSpec":
        return BinningSpec(
            self.lo, self.hi, self.bin_count * factor, self.tail_policy, self.zero_prob_threshold, self.relative
        )

    def to_dict(self) -> dict:
        return {
            "lo": self.lo,
            "hi": self.hi,
            "bin_count": self.bin_count,
            "tail_policy": self.tail_policy,
            "zero_prob_threshold": self.zero_prob_threshold,
            "relative": self.relative,
        }


@dataclass(frozen=True)
class ConditionalBin:
    outcome: float
    probability: float
    state: DensityMatrix
    eigenvalue_count: int


@dataclass(frozen=True)
class ConditionalTable:
    space: SpaceDescriptor
    bins: tuple
    b_label: str
    binning: BinningSpec | None
    dropped_mass: float
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def probabilities(self) -> np.ndarray:
        return np.array([b.probability for b in self.bins])

    @property
    def outcomes(self) -> np.ndarray:
        return np.array([b.outcome for b in self.bins])

    def __len__(self):
        return len(self.bins)

    @property
    def metadata(self) -> dict:
        return {
            "b_observable": self.b_label,
            "bins": "exact" if self.binning is None else self.binning.bin_count,
            "occupied_bins": len(self.bins),
            "dropped_mass": self.dropped_mass,
            "binning": None if self.binning is None else self.binning.to_dict(),
        }

    def recombined(self) -> np.ndarray:
        """``sum_b P(b) rho_A|b``, which should reproduce the reduced state of A."""
        return sum(b.probability * b.state.matrix for b in self.bins)

    def moments(self, a_observable: LinearOperator):
        """Per-bin ``(means, variances)`` of a Hermitian A observable."""
        m = local_matrix(a_observable, self.space, "A")
        key = ("hermitian", m.shape, m.tobytes())
        if key not in self._cache:
            stats = [matrix_moments(b.state.matrix, m) for b in self.bins]
            self._cache[key] = (np.array([s[0] for s in stats]), np.array([s[1] for s in stats]))
        return self._cache[key]

    def complex_means(self, operator: LinearOperator) -> np.ndarray:
        m = local_matrix(operator, self.space, "A")
        return np.array([np.einsum("ij,ji->", b.state.matrix, m) for b in self.bins])


def _group_exact(eigvals: np.ndarray):
    scale = max(1.0, float(np.max(np.abs(eigvals))))
    order = np.argsort(eigvals, kind="stable")
    groups, current = [], [order[0]]
    for prev, nxt in zip(order[:-1], order[1:]):
        if eigvals[nxt] - eigvals[prev] > 1e-9 * scale:
            groups.append(current)
            current = []
        current.append(nxt)
    groups.append(current)
    return [(float(np.mean(eigvals[g])), np.array(g)) for g in groups], 0


def _group_binned(eigvals: np.ndarray, binning: BinningSpec, origin: float):
    lo, hi = binning.lo + origin, binning.hi + origin
    width = (hi - lo) / binning.bin_count
    idx = np.floor((eigvals - lo) / width).astype(int)
    outside = (idx < 0) | (idx >= binning.bin_count)
    if binning.tail_policy == "clip_to_edge_bins":
        idx = np.clip(idx, 0, binning.bin_count - 1)
        keep = np.ones_like(outside)
    else:
        keep = ~outside
    groups = []
    for k in np.unique(idx[keep]):
        members = np.flatnonzero((idx == k) & keep)
        groups.append((lo + (k + 0.5) * width, members))
    return groups, np.flatnonzero(~keep)


def conditional_table(
    state: State,
    b_observable: LinearOperator,
    binning: BinningSpec | None = None,
    zero_prob_threshold: float | None = None,
    workers: int | None = None,
) -> ConditionalTable:
    """Condition A on the outcomes of ``b_observable`` measured on B.

    ``b_observable`` is diagonalised; eigenvalues are grouped either exactly
    (``binning=None``, degenerate eigenvalues merged into one outcome) or
    into the bins of ``binning``. Bins whose probability falls below the
    zero-probability threshold are dropped, the rest renormalised, and the
    dropped mass kept in :attr:`ConditionalTable.dropped_mass`.
    """
    space = state.space
    if not space.is_bipartite:
        raise SpaceMismatchError("conditioning needs a bipartite state")
    mb = local_matrix(b_observable, space, "B")
    if np.max(np.abs(mb - mb.conj().T)) > 1e-12 * max(1.0, np.max(np.abs(mb))):
        raise ValueError("B observable is not Hermitian")
    eigvals, eigvecs = np.linalg.eigh(mb)
    threshold = zero_prob_threshold
    if threshold is None:
        threshold = binning.zero_prob_threshold if binning is not None else 1e-10

    if binning is None:
        groups, _ = _group_exact(eigvals)
    else:
        origin = 0.0
        if binning.relative:
            rho_b = reduce_to_subsystem(state, "B").matrix
            origin = float(np.real(np.einsum("ij,ji->", rho_b, mb)))
        groups, _ = _group_binned(eigvals, binning, origin)

    def run(group):
        outcome, members = group
        prob, cond = conditional_on_isometry(state, eigvecs[:, members])
        return outcome, prob, cond, len(members)

    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            raw = list(pool.map(run, groups))
    else:
        raw = [run(g) for g in groups]

    kept = [item for item in raw if item[1] >= threshold]
    if not kept:
        raise EmptyBranchError("every outcome bin of the B observable is empty")
    total_kept = sum(item[1] for item in kept)
    dropped = max(0.0, 1.0 - total_kept)
    part = space.part("A")
    bins = tuple(
        ConditionalBin(
            outcome=outcome,
            probability=prob / total_kept,
            state=DensityMatrix.from_unnormalized(part, cond),
            eigenvalue_count=count,
        )
        for outcome, prob, cond, count in kept
    )
    return ConditionalTable(space, bins, b_observable.label, binning, dropped)


def inferred_variance(table: ConditionalTable, a_observable: LinearOperator) -> float:
    """Average conditional variance ``sum_b P(b) Var(O | b)``."""
    _, variances = table.moments(a_observable)
    return float(np.dot(table.probabilities, variances))


def inferred_mean_modulus(table: ConditionalTable, c_operator: LinearOperator) -> float:
    """``sum_b P(b) |<C | b>|``; ``C`` need not be Hermitian (e.g. a commutator)."""
    means = table.complex_means(c_operator)
    return float(np.dot(table.probabilities, np.abs(means)))


def subsystem_moments(state: State, observable: LinearOperator, subsystem="A"):
    """Unconditional ``(mean, variance)`` of a local observable on a bipartite state."""
    m = local_matrix(observable, state.space, subsystem)
    rho = reduce_to_subsystem(state, subsystem).matrix
    return matrix_moments(rho, m)


def subsystem_complex_mean(state: State, operator: LinearOperator, subsystem="A") -> complex:
    m = local_matrix(operator, state.space, subsystem)
    rho = reduce_to_subsystem(state, subsystem).matrix
    return complex(np.einsum("ij,ji->", rho, m))


def default_binning(state: State, b_observable: LinearOperator, bin_count: int = DEFAULT_BINS) -> BinningSpec:
    """Quadrature default: 200 bins over the B marginal mean +- 6 standard deviations."""
    _, var_b = subsystem_moments(state, b_observable, "B")
    return BinningSpec.around_marginal(float(np.sqrt(var_b)), bin_count=bin_count)
