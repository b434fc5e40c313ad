import numpy as np
import pytest

from trendgraph.snapshots import Catalogs, InteractionRecord, SnapshotSeries


def random_records(seed, n_communities=3, n_attributes=5, months=15, density=0.7,
                   max_sales=20):
    rng = np.random.default_rng(seed)
    records = []
    for m in range(1, months + 1):
        for c in range(n_communities):
            for a in range(n_attributes):
                if rng.random() < density:
                    records.append(InteractionRecord(
                        m, f"c{c}", f"a{a}", int(rng.integers(1, max_sales))))
    catalogs = Catalogs(tuple(f"c{c}" for c in range(n_communities)),
                        tuple(f"a{a}" for a in range(n_attributes)))
    return records, catalogs


def small_series(seed=0, n_communities=3, n_attributes=5, months=15, **kwargs):
    records, catalogs = random_records(seed, n_communities, n_attributes, months, **kwargs)
    return SnapshotSeries.build(records, catalogs)


@pytest.fixture
def tiny_series():
    return small_series(seed=0)
