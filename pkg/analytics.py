"""Limit-study analytics over an IpcMatrix.

All functions are pure: they read an immutable matrix (or results derived
from it) and return new objects. Losses are percentages; ties use a relative
tolerance of TIE_EPSILON.
"""
import itertools
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from harness import IpcMatrix
from models import ValidationError

logger = logging.getLogger(__name__)

TIE_EPSILON = 1e-9
ZERO_LOSS_PCT = TIE_EPSILON * 100.0
EXCEEDANCE_THRESHOLDS = (1.0, 2.5, 5.0, 10.0)
NEAR_OPTIMAL_PCT = 0.5
HEADROOM_THRESHOLD_PCT = 2.5

# upper edges are closed: a loss of exactly 0.1 lands in "0-0.1"
BUCKET_EDGES = np.array([ZERO_LOSS_PCT, 0.1, 0.5, 1.0, 2.0, 5.0, 10.0])
BUCKET_LABELS = ("0", "0-0.1", "0.1-0.5", "0.5-1", "1-2", "2-5", "5-10", ">10")

OBJECTIVES = ("loss", "ipc")


def _relative_loss(oracle_ipc, ipc):
    """Percent shortfall of `ipc` against `oracle_ipc`; anything within the tie tolerance is exactly 0."""
    oracle_ipc = np.asarray(oracle_ipc, dtype=np.float64)
    ipc = np.asarray(ipc, dtype=np.float64)
    loss = (oracle_ipc - ipc) / oracle_ipc * 100.0
    loss[ipc >= oracle_ipc * (1.0 - TIE_EPSILON)] = 0.0
    return loss


@dataclass(frozen=True, eq=False)
class OracleResult:
    """
    Per-timestep best IPC and the policies that reach it.

    Attributes:
        keys (tuple): (benchmark, timestep) per row, matching the matrix.
        policies (tuple): Policy ids, matching the matrix columns.
        oracle_ipc (np.ndarray): Max IPC per timestep.
        winners (np.ndarray): Boolean (timesteps x policies) winner mask.
    """

    keys: tuple
    policies: tuple
    oracle_ipc: np.ndarray
    winners: np.ndarray

    def winner_set(self, row):
        return frozenset(p for p, won in zip(self.policies, self.winners[row]) if won)

    @property
    def winner_sets(self):
        return [self.winner_set(i) for i in range(len(self.keys))]

    @property
    def ties_present(self):
        return bool((self.winners.sum(axis=1) > 1).any())


@dataclass(frozen=True, eq=False)
class LossRow:
    """Per-timestep losses of one policy (or policy subset) with the IPC it achieved."""

    policy_id: str
    keys: tuple
    loss: np.ndarray
    ipc: np.ndarray

    def __len__(self):
        return len(self.keys)

    @property
    def benchmarks(self):
        return tuple(dict.fromkeys(b for b, _ in self.keys))

    def for_benchmark(self, benchmark):
        mask = np.array([b == benchmark for b, _ in self.keys])
        return self.loss[mask]


@dataclass(frozen=True, eq=False)
class LossTable:
    policies: tuple
    keys: tuple
    loss: np.ndarray
    ipc: np.ndarray

    def row(self, policy):
        try:
            j = self.policies.index(policy)
        except ValueError:
            raise ValidationError(f"policy {policy!r} is not in the loss table", "policy") from None
        return LossRow(policy, self.keys, self.loss[:, j], self.ipc[:, j])

    def rows(self):
        return [self.row(p) for p in self.policies]


@dataclass(frozen=True)
class PolicySummary:
    policy_id: str
    timesteps: int
    mean_loss_pct: float
    match_rate_pct: float
    exceedances: dict
    mean_ipc: float
    within_half_pct: float
    benchmarks_over_2_5: int


@dataclass(frozen=True)
class OptimalityFrequency:
    """Share of timesteps where each policy is in the winner set; tied winners all get full credit."""

    frequencies: dict
    timesteps: int
    ties_present: bool

    @property
    def total_pct(self):
        return sum(self.frequencies.values())


@dataclass(frozen=True)
class BucketHistogram:
    policy_id: str
    counts: tuple
    labels: tuple = BUCKET_LABELS

    @property
    def total(self):
        return sum(self.counts)

    def as_dict(self):
        return dict(zip(self.labels, self.counts))


@dataclass(frozen=True)
class BoxStats:
    benchmark: str
    count: int
    min: float
    q1: float
    median: float
    q3: float
    max: float


@dataclass(frozen=True)
class DuelStats:
    """
    Head-to-head record of policy A against policy B.

    speedup on a win is (IPC_A / IPC_B - 1) * 100; slowdown on a loss is
    (1 - IPC_A / IPC_B) * 100. Means over an empty set are None.
    """

    policy_a: str
    policy_b: str
    timesteps: int
    wins: int
    losses: int
    ties: int
    win_rate_pct: float
    loss_rate_pct: float
    tie_rate_pct: float
    mean_speedup_on_wins_pct: Optional[float]
    mean_slowdown_on_losses_pct: Optional[float]


@dataclass(frozen=True)
class Headroom:
    baseline: str
    reference: str
    threshold_pct: float
    timesteps: int
    mean_improvement_pct: float
    count_above: int
    mean_above_pct: Optional[float]
    benchmarks_covered: int
    benchmarks_total: int
    ratio_of_means_pct: float


@dataclass(frozen=True, eq=False)
class SubsetSelection:
    """The best size-k policy subset when the best member is picked at every timestep."""

    k: int
    policies: tuple
    objective: str
    mean_loss_pct: float
    match_rate_pct: float
    within_half_pct: float
    mean_ipc: float
    loss_row: LossRow

    @property
    def subset_id(self):
        return "+".join(self.policies)


def _check_aligned(matrix, oracle):
    if matrix.keys != oracle.keys or matrix.policies != oracle.policies:
        raise ValidationError("oracle was computed from a different matrix", "oracle")


def compute_oracle(matrix: IpcMatrix) -> OracleResult:
    oracle_ipc = matrix.ipc.max(axis=1)
    winners = matrix.ipc >= oracle_ipc[:, None] * (1.0 - TIE_EPSILON)
    return OracleResult(matrix.keys, matrix.policies, oracle_ipc, winners)


def compute_loss(matrix: IpcMatrix, oracle: OracleResult, policy: str) -> LossRow:
    """Loss = (IPC_oracle - IPC_policy) / IPC_oracle * 100 at every timestep."""
    _check_aligned(matrix, oracle)
    ipc = matrix.column(policy)
    return LossRow(policy, matrix.keys, _relative_loss(oracle.oracle_ipc, ipc), ipc.copy())


def compute_loss_table(matrix: IpcMatrix, oracle: OracleResult) -> LossTable:
    _check_aligned(matrix, oracle)
    loss = _relative_loss(oracle.oracle_ipc[:, None], matrix.ipc)
    return LossTable(matrix.policies, matrix.keys, loss, matrix.ipc.copy())


def summarize_policy(loss_row: LossRow, winner_sets=None) -> PolicySummary:
    """
    Mean loss, oracle match rate and exceedance counts for one loss row.

    With `winner_sets`, a timestep matches when the policy is in its winner
    set; otherwise when its loss is within the tie tolerance. The two agree
    for rows produced by compute_loss.
    """
    loss = loss_row.loss
    if winner_sets is not None:
        matched = np.array([loss_row.policy_id in winners for winners in winner_sets])
    else:
        matched = loss <= ZERO_LOSS_PCT
    over = loss > HEADROOM_THRESHOLD_PCT
    return PolicySummary(
        policy_id=loss_row.policy_id,
        timesteps=len(loss),
        mean_loss_pct=float(loss.mean()),
        match_rate_pct=float(matched.mean() * 100.0),
        exceedances={t: int((loss > t).sum()) for t in EXCEEDANCE_THRESHOLDS},
        mean_ipc=float(loss_row.ipc.mean()),
        within_half_pct=float((loss <= NEAR_OPTIMAL_PCT).mean() * 100.0),
        benchmarks_over_2_5=len({b for (b, _), hit in zip(loss_row.keys, over) if hit}),
    )


def best_static(matrix: IpcMatrix) -> str:
    """Policy with the highest mean IPC over all timesteps; the lexicographically first id wins ties."""
    means = matrix.ipc.mean(axis=0)
    return matrix.policies[int(np.argmax(means))]


def optimality_frequency(oracle: OracleResult) -> OptimalityFrequency:
    shares = oracle.winners.mean(axis=0) * 100.0
    return OptimalityFrequency(
        frequencies={p: float(s) for p, s in zip(oracle.policies, shares)},
        timesteps=len(oracle.keys),
        ties_present=oracle.ties_present,
    )


def bucket_histogram(loss_row: LossRow) -> BucketHistogram:
    index = np.searchsorted(BUCKET_EDGES, loss_row.loss, side="left")
    counts = np.bincount(index, minlength=len(BUCKET_LABELS))
    return BucketHistogram(loss_row.policy_id, tuple(int(c) for c in counts))


def _box(label, values):
    lo, q1, median, q3, hi = np.percentile(values, [0, 25, 50, 75, 100], method="linear")
    return BoxStats(label, len(values), float(lo), float(q1), float(median), float(q3), float(hi))


def per_benchmark_distribution(loss_row: LossRow) -> dict:
    """Five-number summary of the loss per benchmark (linear interpolation between order statistics)."""
    return {b: _box(b, loss_row.for_benchmark(b)) for b in loss_row.benchmarks}


def global_distribution(loss_row: LossRow) -> BoxStats:
    return _box("all", loss_row.loss)


def pairwise_compare(matrix: IpcMatrix, policy_a: str, policy_b: str) -> DuelStats:
    if policy_a == policy_b:
        raise ValidationError("a policy cannot be compared with itself", "policy")
    a = matrix.column(policy_a)
    b = matrix.column(policy_b)
    tie = np.abs(a - b) <= TIE_EPSILON * np.maximum(a, b)
    win = (a > b) & ~tie
    lose = (a < b) & ~tie
    n = len(a)
    wins, losses = int(win.sum()), int(lose.sum())
    win_rate = wins / n * 100.0
    loss_rate = losses / n * 100.0
    ratio = a / b
    return DuelStats(
        policy_a=policy_a,
        policy_b=policy_b,
        timesteps=n,
        wins=wins,
        losses=losses,
        ties=n - wins - losses,
        win_rate_pct=win_rate,
        loss_rate_pct=loss_rate,
        tie_rate_pct=100.0 - win_rate - loss_rate,
        mean_speedup_on_wins_pct=float(((ratio[win] - 1.0) * 100.0).mean()) if wins else None,
        mean_slowdown_on_losses_pct=float(((1.0 - ratio[lose]) * 100.0).mean()) if losses else None,
    )


def baseline_headroom(matrix: IpcMatrix, baseline: str, reference="oracle",
                      threshold_pct=HEADROOM_THRESHOLD_PCT) -> Headroom:
    """
    How much a reference (the oracle or another policy) improves on a baseline.

    The headline figure is the mean of per-timestep ratios
    (IPC_ref - IPC_base) / IPC_base * 100; the ratio of mean IPCs is reported
    alongside it.
    """
    base = matrix.column(baseline)
    ref = matrix.ipc.max(axis=1) if reference == "oracle" else matrix.column(reference)
    improvement = (ref - base) / base * 100.0
    above = improvement > threshold_pct
    covered = {b for (b, _), hit in zip(matrix.keys, above) if hit}
    return Headroom(
        baseline=baseline,
        reference=reference,
        threshold_pct=threshold_pct,
        timesteps=len(base),
        mean_improvement_pct=float(improvement.mean()),
        count_above=int(above.sum()),
        mean_above_pct=float(improvement[above].mean()) if above.any() else None,
        benchmarks_covered=len(covered),
        benchmarks_total=len(matrix.benchmarks),
        ratio_of_means_pct=float((ref.mean() / base.mean() - 1.0) * 100.0),
    )


def best_k_subset(matrix: IpcMatrix, oracle: OracleResult, k: int, objective="loss") -> SubsetSelection:
    """
    Exhaustively pick the size-k policy subset with the lowest mean subset loss.

    Subset loss at a timestep is the loss of the subset's best member. Ties
    go to the higher subset match rate, then to the lexicographically
    smallest id tuple. With objective="ipc" the subset maximising mean
    subset IPC is chosen instead, under the same tie rules.
    """
    _check_aligned(matrix, oracle)
    n_policies = len(matrix.policies)
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= n_policies:
        raise ValidationError(f"k must be in [1, {n_policies}], got {k!r}", "k")
    if objective not in OBJECTIVES:
        raise ValidationError(f"objective must be one of {', '.join(OBJECTIVES)}, got {objective!r}",
                              "objective")

    best = None
    for combo in itertools.combinations(range(n_policies), k):
        subset_ipc = matrix.ipc[:, combo].max(axis=1)
        loss = _relative_loss(oracle.oracle_ipc, subset_ipc)
        score = float(loss.mean()) if objective == "loss" else -float(subset_ipc.mean())
        match = float((loss <= ZERO_LOSS_PCT).mean() * 100.0)
        # combinations() yields id tuples in lexicographic order, so only strict improvements replace
        if best is None or (score, -match) < best[0]:
            best = ((score, -match), combo, loss, subset_ipc)

    _, combo, loss, subset_ipc = best
    ids = tuple(matrix.policies[j] for j in combo)
    row = LossRow("+".join(ids), matrix.keys, loss, subset_ipc)
    selection = SubsetSelection(
        k=k,
        policies=ids,
        objective=objective,
        mean_loss_pct=float(loss.mean()),
        match_rate_pct=float((loss <= ZERO_LOSS_PCT).mean() * 100.0),
        within_half_pct=float((loss <= NEAR_OPTIMAL_PCT).mean() * 100.0),
        mean_ipc=float(subset_ipc.mean()),
        loss_row=row,
    )
    logger.debug("best %d-subset %s: mean loss %.6f%%", k, selection.subset_id, selection.mean_loss_pct)
    return selection
