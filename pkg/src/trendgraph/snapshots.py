"""Monthly interaction records and the graph snapshots derived from them.

Ingests the interaction CSV, builds per-month weighted bipartite graphs
between communities and attribute tags, derives hypergraphs (one hyperedge
per community, connecting every attribute that community bought that
month), computes trend labels, and slices the timeline into fixed-length
observation windows with a train/validation/test split.

Months are abstract 1-based indices.  Attributes keep their catalog slot in
every month, so tensor shapes are stable; a month without interactions for
an attribute simply leaves it isolated.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import CsvFormatError, InsufficientHistoryError, NegativeSalesError

CSV_HEADER = ["month", "community", "attribute", "sales"]


@dataclass(frozen=True)
class InteractionRecord:
    """One (month, community, attribute) purchase count; sales is always >= 1."""

    month: int
    community: str
    attribute: str
    sales: int


@dataclass(frozen=True)
class Catalogs:
    """Stable id -> index assignment for communities and attributes."""

    communities: tuple[str, ...]
    attributes: tuple[str, ...]

    @property
    def n_communities(self) -> int:
        return len(self.communities)

    @property
    def n_attributes(self) -> int:
        return len(self.attributes)

    def community_index(self) -> dict[str, int]:
        return {c: k for k, c in enumerate(self.communities)}

    def attribute_index(self) -> dict[str, int]:
        return {a: j for j, a in enumerate(self.attributes)}


@dataclass
class BipartiteSnapshot:
    """One month's weighted community-attribute graph.

    ``edges`` holds (community_index, attribute_index, weight) triples with
    one edge per interacting pair; ``adjacency[j]`` lists the communities
    adjacent to attribute j.
    """

    month: int
    n_communities: int
    n_attributes: int
    edges: list[tuple[int, int, int]]
    adjacency: list[list[int]]

    def attribute_degree(self, j: int) -> int:
        return len(self.adjacency[j])


@dataclass
class Hypergraph:
    """Incidence form of one month's hypergraph over attribute vertices.

    Hyperedge e collects the attributes bought by community e that month;
    all hyperedge weights are 1.  ``vertex_degrees[v]`` is the weighted
    count of hyperedges containing v and ``edge_degrees[e]`` the vertex
    count of hyperedge e.
    """

    month: int
    incidence: np.ndarray
    edge_weights: np.ndarray
    vertex_degrees: np.ndarray
    edge_degrees: np.ndarray
    active_vertices: frozenset[int]

    @property
    def active_hyperedges(self) -> int:
        return int((self.edge_degrees > 0).sum())


@dataclass
class TrendSample:
    """One training instance: a window of months, its target, and labels."""

    window_months: tuple[int, ...]
    target_month: int
    labels: np.ndarray
    validity: np.ndarray


@dataclass(frozen=True)
class Split:
    """Index lists into a sample sequence ordered by target month."""

    train: tuple[int, ...]
    valid: tuple[int, ...]
    test: tuple[int, ...]


@dataclass
class LabelResult:
    labels: np.ndarray
    validity: np.ndarray
    rank_lists: list[list[int]]


def ingest(path) -> tuple[Catalogs, list[InteractionRecord]]:
    """Read an interaction CSV, summing duplicates and dropping zero-sales rows.

    Catalogs keep first-appearance order (among rows with positive sales);
    records come back sorted by (month, community index, attribute index).
    """
    totals: dict[tuple[int, str, str], int] = {}
    communities: list[str] = []
    attributes: list[str] = []
    seen_c: set[str] = set()
    seen_a: set[str] = set()
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            return Catalogs((), ()), []
        if [h.strip() for h in header] != CSV_HEADER:
            raise CsvFormatError(
                f"line 1: unknown columns {header!r}, expected {CSV_HEADER!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 4:
                raise CsvFormatError(f"line {lineno}: expected 4 fields, got {len(row)}")
            m_raw, community, attribute, s_raw = (f.strip() for f in row)
            try:
                month = int(m_raw)
                sales = int(s_raw)
            except ValueError as exc:
                raise CsvFormatError(f"line {lineno}: {exc}") from None
            if month < 1:
                raise CsvFormatError(f"line {lineno}: month must be >= 1, got {month}")
            if not community or not attribute:
                raise CsvFormatError(f"line {lineno}: empty community or attribute id")
            if sales < 0:
                raise NegativeSalesError(f"line {lineno}: negative sales {sales}")
            if sales == 0:
                continue
            totals[(month, community, attribute)] = totals.get((month, community, attribute), 0) + sales
            if community not in seen_c:
                seen_c.add(community)
                communities.append(community)
            if attribute not in seen_a:
                seen_a.add(attribute)
                attributes.append(attribute)
    catalogs = Catalogs(tuple(communities), tuple(attributes))
    c_idx = catalogs.community_index()
    a_idx = catalogs.attribute_index()
    records = [InteractionRecord(m, c, a, s) for (m, c, a), s in totals.items()]
    records.sort(key=lambda r: (r.month, c_idx[r.community], a_idx[r.attribute]))
    return catalogs, records


def observed_months(records: list[InteractionRecord]) -> tuple[int, int] | None:
    """Closed month range covered by the records, or None when empty."""
    if not records:
        return None
    months = [r.month for r in records]
    return min(months), max(months)


def sales_matrix(records: list[InteractionRecord], catalogs: Catalogs, month: int) -> np.ndarray:
    """Dense per-month sales counts, communities x attributes."""
    out = np.zeros((catalogs.n_communities, catalogs.n_attributes))
    c_idx = catalogs.community_index()
    a_idx = catalogs.attribute_index()
    for r in records:
        if r.month == month:
            out[c_idx[r.community], a_idx[r.attribute]] += r.sales
    return out


def filter_min_sales(records: list[InteractionRecord], catalogs: Catalogs,
                     threshold: int, reference_month: int | None = None
                     ) -> tuple[Catalogs, list[InteractionRecord]]:
    """Drop attributes whose reference-month total sales fall below threshold.

    The default reference month is the latest one.  Dropped attributes
    disappear from the catalog and from every month.
    """
    span = observed_months(records)
    if span is None:
        return catalogs, []
    if reference_month is None:
        reference_month = span[1]
    elif not (span[0] <= reference_month <= span[1]):
        raise ValueError(f"reference month {reference_month} outside data range {span}")
    totals: dict[str, int] = {a: 0 for a in catalogs.attributes}
    for r in records:
        if r.month == reference_month:
            totals[r.attribute] += r.sales
    kept = tuple(a for a in catalogs.attributes if totals[a] >= threshold)
    kept_set = set(kept)
    new_catalogs = Catalogs(catalogs.communities, kept)
    new_records = [r for r in records if r.attribute in kept_set]
    return new_catalogs, new_records


def build_bipartite(records: list[InteractionRecord], catalogs: Catalogs, month: int) -> BipartiteSnapshot:
    """One weighted edge per (community, attribute) pair interacting that month."""
    c_idx = catalogs.community_index()
    a_idx = catalogs.attribute_index()
    weights: dict[tuple[int, int], int] = {}
    for r in records:
        if r.month == month:
            key = (c_idx[r.community], a_idx[r.attribute])
            weights[key] = weights.get(key, 0) + r.sales
    edges = sorted((k, j, w) for (k, j), w in weights.items())
    adjacency: list[list[int]] = [[] for _ in range(catalogs.n_attributes)]
    for k, j, _ in edges:
        adjacency[j].append(k)
    return BipartiteSnapshot(month=month, n_communities=catalogs.n_communities,
                             n_attributes=catalogs.n_attributes, edges=edges,
                             adjacency=adjacency)


def to_hypergraph(snapshot: BipartiteSnapshot) -> Hypergraph:
    """Turn a bipartite snapshot into its hypergraph incidence form.

    Column k of the incidence matrix marks the attributes adjacent to
    community k; hyperedge weights are all 1.
    """
    incidence = np.zeros((snapshot.n_attributes, snapshot.n_communities))
    for k, j, _ in snapshot.edges:
        incidence[j, k] = 1.0
    edge_weights = np.ones(snapshot.n_communities)
    vertex_degrees = (incidence * edge_weights).sum(axis=1)
    edge_degrees = incidence.sum(axis=0)
    active = frozenset(int(j) for j in np.flatnonzero(vertex_degrees > 0))
    return Hypergraph(month=snapshot.month, incidence=incidence, edge_weights=edge_weights,
                      vertex_degrees=vertex_degrees, edge_degrees=edge_degrees,
                      active_vertices=active)


def rank_lists_for_sales(sales: np.ndarray, k_percent: float) -> list[list[int]]:
    """Per-community top-K% attribute lists by sales.

    Only attributes with positive sales count toward the cutoff, which is
    ceil(K/100 * active count); ties break by ascending attribute index.
    """
    if not (0.0 < k_percent <= 100.0):
        raise ValueError(f"k_percent must be in (0, 100], got {k_percent}")
    lists: list[list[int]] = []
    for row in sales:
        active = np.flatnonzero(row > 0)
        if active.size == 0:
            lists.append([])
            continue
        cutoff = math.ceil(k_percent / 100.0 * active.size)
        order = sorted(active, key=lambda j: (-row[j], j))
        lists.append([int(j) for j in order[:cutoff]])
    return lists


def compute_labels(records: list[InteractionRecord], catalogs: Catalogs,
                   target_month: int, k_percent: float = 50.0) -> LabelResult:
    """Label each (community, attribute) pair for the target month.

    A pair is positive when the attribute sits in the community's top-K%
    sales list at the target month but was absent from that list twelve
    months earlier.  When the year-back month is unobserved the validity
    mask is all zeros and no labels are set.
    """
    span = observed_months(records)
    shape = (catalogs.n_communities, catalogs.n_attributes)
    labels = np.zeros(shape)
    target_observed = span is not None and span[0] <= target_month <= span[1]
    prior_observed = span is not None and span[0] <= target_month - 12 <= span[1]
    if target_observed:
        current = rank_lists_for_sales(sales_matrix(records, catalogs, target_month), k_percent)
    else:
        current = [[] for _ in range(catalogs.n_communities)]
    if target_observed and prior_observed:
        validity = np.ones(shape)
        prior = rank_lists_for_sales(sales_matrix(records, catalogs, target_month - 12), k_percent)
        for k in range(catalogs.n_communities):
            fresh = set(current[k]) - set(prior[k])
            for j in fresh:
                labels[k, j] = 1.0
    else:
        validity = np.zeros(shape)
    return LabelResult(labels=labels, validity=validity, rank_lists=current)


def build_windows(records: list[InteractionRecord], catalogs: Catalogs,
                  window_length: int = 12, k_percent: float = 50.0
                  ) -> tuple[list[TrendSample], Split]:
    """Slide stride-1 windows over the month range and split them.

    The last window becomes the test sample and the second-to-last the
    validation sample; everything earlier trains.  With fewer than three
    windows the allocation runs from the end backwards (test, then valid)
    and a warning is emitted.
    """
    span = observed_months(records)
    if span is None:
        raise InsufficientHistoryError("no interaction records")
    first, last = span
    n_months = last - first + 1
    if n_months < window_length + 1:
        raise InsufficientHistoryError(
            f"{n_months} months of data cannot form a {window_length}-month window plus target")
    samples: list[TrendSample] = []
    for start in range(first, last - window_length + 1):
        target = start + window_length
        result = compute_labels(records, catalogs, target, k_percent)
        samples.append(TrendSample(window_months=tuple(range(start, start + window_length)),
                                   target_month=target, labels=result.labels,
                                   validity=result.validity))
    n = len(samples)
    if n >= 3:
        split = Split(train=tuple(range(n - 2)), valid=(n - 2,), test=(n - 1,))
    elif n == 2:
        warnings.warn("only 2 windows available: assigning valid and test, train is empty")
        split = Split(train=(), valid=(0,), test=(1,))
    else:
        warnings.warn("only 1 window available: assigning test, train and valid are empty")
        split = Split(train=(), valid=(), test=(0,))
    return samples, split


@dataclass
class SnapshotSeries:
    """Everything the model consumes: per-month graphs, sales, and samples."""

    catalogs: Catalogs
    months: tuple[int, ...]
    bipartite: dict[int, BipartiteSnapshot]
    hypergraphs: dict[int, Hypergraph]
    sales: dict[int, np.ndarray]
    samples: list[TrendSample] = field(default_factory=list)
    split: Split = Split((), (), ())

    @classmethod
    def build(cls, records: list[InteractionRecord], catalogs: Catalogs,
              window_length: int = 12, k_percent: float = 50.0) -> "SnapshotSeries":
        samples, split = build_windows(records, catalogs, window_length, k_percent)
        first, last = observed_months(records)
        months = tuple(range(first, last + 1))
        bipartite = {m: build_bipartite(records, catalogs, m) for m in months}
        hypergraphs = {m: to_hypergraph(bipartite[m]) for m in months}
        sales = {m: sales_matrix(records, catalogs, m) for m in months}
        return cls(catalogs=catalogs, months=months, bipartite=bipartite,
                   hypergraphs=hypergraphs, sales=sales, samples=samples, split=split)

    @property
    def last_month(self) -> int:
        return self.months[-1]
