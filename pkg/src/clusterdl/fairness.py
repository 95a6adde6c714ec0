"""Group-fairness metrics, accuracy summaries, and protocol accounting.

The two group metrics compare a majority group (0) with a minority group
(1) over a log of (true label, predicted label, group) records:

* demographic parity gap: sum over labels of the absolute difference in
  prediction frequency between the groups,
* equalized odds gap: sum over labels of the absolute difference in
  per-label recall between the groups; labels missing ground truth in
  either group are skipped and reported.

The combined score ``fair_accuracy`` trades mean accuracy against the
max-min accuracy spread. The module also prices each protocol's
per-round traffic and detects when head selections have settled.
"""

from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import tinynet
from .params import assemble, serialized_nbytes

#: Default weight on mean accuracy in the combined score.
DEFAULT_FAIRNESS_WEIGHT = 2.0 / 3.0


@dataclass(frozen=True)
class PredictionLog:
    """Per-sample outcomes: true label, predicted label, group id."""

    y_true: np.ndarray
    y_pred: np.ndarray
    group: np.ndarray

    def __post_init__(self) -> None:
        y_true = np.ascontiguousarray(self.y_true, dtype=np.int64)
        y_pred = np.ascontiguousarray(self.y_pred, dtype=np.int64)
        group = np.ascontiguousarray(self.group, dtype=np.int64)
        object.__setattr__(self, "y_true", y_true)
        object.__setattr__(self, "y_pred", y_pred)
        object.__setattr__(self, "group", group)
        if not y_true.shape == y_pred.shape == group.shape or y_true.ndim != 1:
            raise ValueError("y_true, y_pred and group must be equal-length vectors")
        if y_true.size == 0:
            raise ValueError("prediction log is empty")

    def __len__(self) -> int:
        return int(self.y_true.size)

    def restrict(self, groups: dict[int, int]) -> "PredictionLog":
        """Keep only the given groups, relabelled via the mapping."""
        mask = np.isin(self.group, list(groups))
        if not mask.any():
            raise ValueError(f"no samples belong to groups {sorted(groups)}")
        relabel = np.vectorize(groups.__getitem__)
        return PredictionLog(
            self.y_true[mask], self.y_pred[mask], relabel(self.group[mask])
        )


def _group_masks(log: PredictionLog, group_a: int, group_b: int):
    mask_a = log.group == group_a
    mask_b = log.group == group_b
    if not mask_a.any():
        raise ValueError(f"group {group_a} has no samples")
    if not mask_b.any():
        raise ValueError(f"group {group_b} has no samples")
    return mask_a, mask_b


def demographic_parity(log: PredictionLog, group_a: int = 0, group_b: int = 1) -> float:
    """Total variation style gap between the groups' prediction frequencies."""
    mask_a, mask_b = _group_masks(log, group_a, group_b)
    labels = np.union1d(log.y_true, log.y_pred)
    gap = 0.0
    for y in labels:
        rate_a = float((log.y_pred[mask_a] == y).mean())
        rate_b = float((log.y_pred[mask_b] == y).mean())
        gap += abs(rate_a - rate_b)
    return gap


def equalized_odds_details(
    log: PredictionLog, group_a: int = 0, group_b: int = 1
) -> tuple[float, list[int]]:
    """Equalized odds gap plus the labels skipped for missing ground truth."""
    mask_a, mask_b = _group_masks(log, group_a, group_b)
    labels = np.unique(log.y_true)
    gap = 0.0
    skipped: list[int] = []
    for y in labels:
        true_a = mask_a & (log.y_true == y)
        true_b = mask_b & (log.y_true == y)
        if not true_a.any() or not true_b.any():
            skipped.append(int(y))
            continue
        recall_a = float((log.y_pred[true_a] == y).mean())
        recall_b = float((log.y_pred[true_b] == y).mean())
        gap += abs(recall_a - recall_b)
    return gap, skipped


def equalized_odds(log: PredictionLog, group_a: int = 0, group_b: int = 1) -> float:
    """Sum over labels of absolute per-label recall differences."""
    gap, _ = equalized_odds_details(log, group_a, group_b)
    return gap


def worst_pair_gaps(log: PredictionLog) -> tuple[float, float]:
    """Max of (demographic parity, equalized odds) over all group pairs.

    Aggregate extension for more than two groups; the headline metrics
    above are the plain two-group definitions.
    """
    groups = sorted(np.unique(log.group))
    if len(groups) < 2:
        raise ValueError("need at least two groups")
    dp = eo = 0.0
    for i, a in enumerate(groups):
        for b in groups[i + 1 :]:
            dp = max(dp, demographic_parity(log, a, b))
            eo = max(eo, equalized_odds(log, a, b))
    return dp, eo


def fair_accuracy(accuracies, weight: float = DEFAULT_FAIRNESS_WEIGHT) -> float:
    """Weighted blend of mean accuracy and the max-min accuracy spread.

    ``weight * mean(acc) + (1 - weight) * (1 - (max(acc) - min(acc)))``.
    """
    accs = [float(a) for a in accuracies]
    if not accs:
        raise ValueError("need at least one accuracy")
    if not 0.0 <= weight <= 1.0:
        raise ValueError("weight must lie in [0, 1]")
    spread_penalty = 1.0 - (max(accs) - min(accs))
    return weight * float(np.mean(accs)) + (1.0 - weight) * spread_penalty


# ------------------------------------------------------------ evaluation

def _effective_params(state) -> "tinynet.ParamVector":
    slot = state.last_selected if state.last_selected is not None else 0
    return assemble(state.core, state.head_bank[slot])


def per_cluster_accuracy(states, spec, test_sets, arch) -> list[float]:
    """Mean test accuracy of each cluster's nodes on the cluster test set."""
    out = []
    for j in range(spec.num_clusters):
        pool = test_sets[j]
        accs = []
        for i in spec.cluster_nodes(j):
            preds = tinynet.predict(arch, _effective_params(states[i]), pool.features)
            accs.append(float((preds == pool.labels).mean()))
        out.append(float(np.mean(accs)))
    return out


def build_prediction_log(states, spec, test_sets, arch) -> PredictionLog:
    """Pool every node's predictions on its own cluster's test set.

    The group column carries the cluster id; pair it down to two groups
    with :func:`majority_minority` + ``restrict`` for the headline gaps.
    """
    trues, preds, groups = [], [], []
    for j in range(spec.num_clusters):
        pool = test_sets[j]
        for i in spec.cluster_nodes(j):
            p = tinynet.predict(arch, _effective_params(states[i]), pool.features)
            trues.append(pool.labels)
            preds.append(p)
            groups.append(np.full(len(pool), j))
    return PredictionLog(
        np.concatenate(trues), np.concatenate(preds), np.concatenate(groups)
    )


def majority_minority(spec) -> tuple[int, int]:
    """(largest, smallest) cluster ids; ties resolved to the lowest id."""
    sizes = spec.sizes
    maj = int(np.argmax(sizes))
    rest = [(size, j) for j, size in enumerate(sizes) if j != maj]
    mino = min(rest, key=lambda t: (t[0], t[1]))[1] if rest else maj
    return maj, mino


# ------------------------------------------------------- comm accounting

def comm_volume(algorithm: str, n: int, r: int, total_len: int, core_len: int) -> int:
    """Bytes all nodes put on the wire in one round.

    Every node sends to its r neighbors. Full-model protocols ship the
    serialized parameter vector; the clustered protocol adds a 4-byte head
    index per message; the heads-local protocol ships only the core.
    """
    if algorithm in ("el", "dpsgd"):
        per_message = serialized_nbytes(total_len)
    elif algorithm == "facade":
        per_message = serialized_nbytes(total_len) + 4
    elif algorithm == "deprl_lite":
        per_message = serialized_nbytes(core_len)
    else:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    return n * r * per_message


def cumulative_bytes(records) -> int:
    """Total round traffic across a record stream."""
    return sum(rec.bytes_sent for rec in records)


# ------------------------------------------------------------ settlement

@dataclass(frozen=True)
class SettlementReport:
    """Whether/when clusters locked onto stable, distinct heads."""

    settled: bool
    settle_round: int | None
    cluster_heads: tuple[int, ...]  # modal head per cluster (terminal window)
    never_selected: tuple[int, ...]  # head slots no node ever picked

    def to_json(self) -> dict:
        return {
            "settled": self.settled,
            "settle_round": self.settle_round,
            "cluster_heads": list(self.cluster_heads),
            "never_selected": list(self.never_selected),
        }


def settlement(histories, spec, num_heads: int, window: int = 10) -> SettlementReport:
    """Detect head-selection settlement from per-node selection histories.

    Settled at round s means: over rounds s..s+window-1 every node keeps a
    constant selection, nodes of the same cluster agree, and different
    clusters hold different heads. The report also lists head slots that
    were never selected by any node (the tell-tale of an unused bank entry).
    """
    if window < 1:
        raise ValueError("window must be positive")
    if len(histories) != spec.num_nodes:
        raise ValueError("one history per node required")
    lengths = {len(h) for h in histories}
    if len(lengths) != 1:
        raise ValueError("histories must have equal length")
    rounds = lengths.pop()

    ever = {int(s) for h in histories for s in h}
    never = tuple(sorted(set(range(num_heads)) - ever))

    def window_assignment(start: int):
        assign = []
        for j in range(spec.num_clusters):
            values = {
                histories[i][t]
                for i in spec.cluster_nodes(j)
                for t in range(start, start + window)
            }
            if len(values) != 1:
                return None
            assign.append(int(values.pop()))
        if len(set(assign)) != spec.num_clusters:
            return None  # two clusters sharing a head is not settled
        return tuple(assign)

    settle_round = None
    assignment = None
    for start in range(0, rounds - window + 1):
        assignment = window_assignment(start)
        if assignment is not None:
            settle_round = start
            break

    tail = max(0, rounds - window)
    modal = tuple(
        int(
            Counter(
                int(histories[i][t])
                for i in spec.cluster_nodes(j)
                for t in range(tail, rounds)
            ).most_common(1)[0][0]
        )
        for j in range(spec.num_clusters)
    )
    if settle_round is not None:
        return SettlementReport(True, settle_round, assignment, never)
    return SettlementReport(False, None, modal, never)


# ---------------------------------------------------------------- report

@dataclass(frozen=True)
class FairnessReport:
    """Final-model summary used by the CLI and the experiment tests."""

    per_cluster_acc: tuple[float, ...]
    acc_majority: float
    acc_minority: float
    acc_all: float
    demographic_parity: float
    equalized_odds: float
    eo_skipped_labels: tuple[int, ...]
    fair_acc: float

    def to_json(self) -> dict:
        return {
            "per_cluster_acc": list(self.per_cluster_acc),
            "acc_majority": self.acc_majority,
            "acc_minority": self.acc_minority,
            "acc_all": self.acc_all,
            "demographic_parity": self.demographic_parity,
            "equalized_odds": self.equalized_odds,
            "eo_skipped_labels": list(self.eo_skipped_labels),
            "fair_acc": self.fair_acc,
        }


def fairness_report(
    states, spec, test_sets, arch, weight: float = DEFAULT_FAIRNESS_WEIGHT
) -> FairnessReport:
    """Evaluate final states into the headline metrics."""
    log = build_prediction_log(states, spec, test_sets, arch)
    return report_from_log(log, spec, weight)


def report_from_log(
    log: PredictionLog, spec, weight: float = DEFAULT_FAIRNESS_WEIGHT
) -> FairnessReport:
    """Same as :func:`fairness_report` but from an existing prediction log."""
    per_cluster = []
    for j in range(spec.num_clusters):
        mask = log.group == j
        if not mask.any():
            raise ValueError(f"log has no samples for cluster {j}")
        per_cluster.append(float((log.y_pred[mask] == log.y_true[mask]).mean()))
    maj, mino = majority_minority(spec)
    if spec.num_clusters >= 2:
        pair = log.restrict({maj: 0, mino: 1})
        dp = demographic_parity(pair)
        eo, skipped = equalized_odds_details(pair)
    else:
        dp, eo, skipped = 0.0, 0.0, []
    # every node contributes equally many predictions, so the pooled mean
    # weights nodes (not clusters) equally
    acc_all = float((log.y_pred == log.y_true).mean())
    return FairnessReport(
        per_cluster_acc=tuple(per_cluster),
        acc_majority=per_cluster[maj],
        acc_minority=per_cluster[mino],
        acc_all=acc_all,
        demographic_parity=dp,
        equalized_odds=eo,
        eo_skipped_labels=tuple(skipped),
        fair_acc=fair_accuracy(per_cluster, weight),
    )


# -------------------------------------------------------------- log IO

def save_prediction_log(path, log: PredictionLog) -> None:
    """Write the log as ``true,pred,group`` CSV."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true", "pred", "group"])
        for t, p, g in zip(log.y_true, log.y_pred, log.group):
            writer.writerow([int(t), int(p), int(g)])


def load_prediction_log(path) -> PredictionLog:
    """Read a CSV written by :func:`save_prediction_log`."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["true", "pred", "group"]:
            raise ValueError(f"{path}: bad prediction log header {header!r}")
        rows = [(int(a), int(b), int(c)) for a, b, c in reader]
    if not rows:
        raise ValueError(f"{path}: no rows")
    arr = np.array(rows, dtype=np.int64)
    return PredictionLog(arr[:, 0], arr[:, 1], arr[:, 2])
