"""Ranking evaluation: AUC, the month-on-month baseline, and reporting.

AUC here is the probability that a random positive outranks a random
negative; ties receive half credit by default so a constant scorer lands at
0.5 (the strictly-greater reading is available via ``tie_credit=False``).
Communities lacking either class report an undefined AUC and drop out of
the macro average.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, UndefinedAucError
from .predictions import PredictionMatrix
from .snapshots import Catalogs, InteractionRecord, TrendSample, observed_months, rank_lists_for_sales, sales_matrix


def _average_ranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(values, kind="mergesort")
    sorted_v = values[order]
    ranks = np.empty(values.size)
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def auc(scores, labels, tie_credit: bool = True) -> float:
    """Pairwise ranking quality via the rank-sum method, O(n log n).

    Equals the mean over (positive, negative) pairs of 1 if the positive
    scores higher, else 0, with ties worth 0.5 when ``tie_credit`` is on.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = np.asarray(labels).ravel()
    pos = scores[labels > 0]
    neg = scores[labels <= 0]
    if pos.size == 0 or neg.size == 0:
        raise UndefinedAucError(
            f"AUC undefined with {pos.size} positives and {neg.size} negatives")
    if tie_credit:
        ranks = _average_ranks(np.concatenate([pos, neg]))
        pos_rank_sum = ranks[:pos.size].sum()
        return float((pos_rank_sum - pos.size * (pos.size + 1) / 2.0) / (pos.size * neg.size))
    neg_sorted = np.sort(neg)
    wins = np.searchsorted(neg_sorted, pos, side="left").sum()
    return float(wins / (pos.size * neg.size))


@dataclass
class CommunityResult:
    community: str
    auc: float | None
    positives: int
    negatives: int
    top: list[tuple[str, float]]


@dataclass
class EvalReport:
    """Per-community AUC plus the unweighted macro average over defined ones."""

    rows: list[CommunityResult]
    macro_auc: float | None

    def to_text(self) -> str:
        lines = [f"{'community':<16} {'auc':>9} {'pos':>6} {'neg':>6}  top tags"]
        for row in self.rows:
            shown = "undefined" if row.auc is None else f"{row.auc:.4f}"
            tags = " ".join(t for t, _ in row.top)
            lines.append(f"{row.community:<16} {shown:>9} {row.positives:>6} {row.negatives:>6}  {tags}")
        macro = "undefined" if self.macro_auc is None else f"{self.macro_auc:.4f}"
        lines.append(f"{'macro-average':<16} {macro:>9}")
        return "\n".join(lines) + "\n"

    def to_ndjson(self) -> str:
        lines = []
        for row in self.rows:
            lines.append(json.dumps({
                "community": row.community,
                "auc": row.auc,
                "positives": row.positives,
                "negatives": row.negatives,
                "topn": ";".join(t for t, _ in row.top),
            }, sort_keys=True))
        return "\n".join(lines) + "\n"


def community_aucs(predictions: list[PredictionMatrix], samples: list[TrendSample],
                   n_communities: int, tie_credit: bool = True
                   ) -> tuple[list[float | None], list[int], list[int]]:
    """Per-community AUC over valid (attribute, label) pairs, pooled across samples."""
    per_scores: list[list[np.ndarray]] = [[] for _ in range(n_communities)]
    per_labels: list[list[np.ndarray]] = [[] for _ in range(n_communities)]
    for pred, sample in zip(predictions, samples):
        for k in range(n_communities):
            mask = sample.validity[k] > 0
            if mask.any():
                per_scores[k].append(pred.scores[k][mask])
                per_labels[k].append(sample.labels[k][mask])
    aucs: list[float | None] = []
    positives: list[int] = []
    negatives: list[int] = []
    for k in range(n_communities):
        if per_scores[k]:
            scores = np.concatenate(per_scores[k])
            labels = np.concatenate(per_labels[k])
        else:
            scores = np.empty(0)
            labels = np.empty(0)
        n_pos = int((labels > 0).sum())
        n_neg = int(labels.size - n_pos)
        positives.append(n_pos)
        negatives.append(n_neg)
        try:
            aucs.append(auc(scores, labels, tie_credit=tie_credit))
        except UndefinedAucError:
            aucs.append(None)
    return aucs, positives, negatives


def macro_average(values: list[float | None]) -> float | None:
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


def evaluate_predictions(predictions: list[PredictionMatrix], samples: list[TrendSample],
                         catalogs: Catalogs, top_n: int = 10,
                         tie_credit: bool = True) -> EvalReport:
    """Score a prediction set against its samples and emit the report."""
    if not predictions or len(predictions) != len(samples):
        raise ValueError("need one prediction per sample")
    aucs, positives, negatives = community_aucs(
        predictions, samples, catalogs.n_communities, tie_credit=tie_credit)
    top = predictions[0].top_lists(top_n)
    rows = []
    for k, community in enumerate(catalogs.communities):
        tags = [(catalogs.attributes[j], float(predictions[0].scores[k, j])) for j in top[k]]
        rows.append(CommunityResult(community=community, auc=aucs[k],
                                    positives=positives[k], negatives=negatives[k],
                                    top=tags))
    return EvalReport(rows=rows, macro_auc=macro_average(aucs))


def mom_baseline(records: list[InteractionRecord], catalogs: Catalogs,
                 target_month: int, k_percent: float = 50.0,
                 score_mode: str = "sales") -> PredictionMatrix:
    """Month-on-month baseline: last month's top list is next month's forecast.

    Scores are the previous month's sales min-max scaled to [0, 1] per
    community so AUC is computable; ``score_mode="membership"`` scores 1
    for list members and 0 otherwise instead.  The attached ranked lists
    are the previous month's top-K% lists.
    """
    span = observed_months(records)
    prev = target_month - 1
    if span is None or not (span[0] <= prev <= span[1]):
        raise DataError(f"month {prev} needed by the month-on-month baseline is missing")
    sales = sales_matrix(records, catalogs, prev)
    lists = rank_lists_for_sales(sales, k_percent)
    if score_mode == "sales":
        scores = np.zeros_like(sales)
        for k in range(sales.shape[0]):
            row = sales[k]
            spread = row.max() - row.min()
            if spread > 0:
                scores[k] = (row - row.min()) / spread
    elif score_mode == "membership":
        scores = np.zeros_like(sales)
        for k, lst in enumerate(lists):
            scores[k, lst] = 1.0
    else:
        raise ValueError(f"unknown score_mode {score_mode!r}")
    return PredictionMatrix(scores=scores, target_month=target_month, ranked_lists=lists)
