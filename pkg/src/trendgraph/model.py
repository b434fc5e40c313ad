"""Full model assembly, training loop, and hyperparameter grid search.

The forward pass, per window month: encode attributes through the bipartite
and hypergraph patterns, embed that month's sales, fuse with the mixing
coefficient, and roll both recurrent cells.  The final score for a
(community, attribute) pair is the sigmoid of the community embedding's dot
product with the evolved attribute state plus the autoregressive sales
forecast.

Three ablations drop one component each: ``bipartite-only`` and
``hypergraph-only`` skip the other encoder entirely, ``gru-only`` drops the
skip cell and reduces the combiner to its recent-state path.  Disabled
parameters keep their slots so checkpoints stay interchangeable.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from itertools import product
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import encoders as enc
from . import evaluate as ev
from . import temporal as tp
from .autodiff import Node, ParameterStore
from .errors import InsufficientHistoryError, NonFiniteError
from .predictions import PredictionMatrix
from .snapshots import Catalogs, SnapshotSeries, TrendSample

ABLATIONS = ("full", "bipartite-only", "hypergraph-only", "gru-only")
SALES_CONV_AXES = ("community", "time")

LR_GRID = (0.001, 0.003, 0.005, 0.008, 0.01)
ALPHA_GRID = (0.0, 0.25, 0.5, 0.75, 1.0)


@dataclass
class ModelConfig:
    """Hyperparameters for one training run; grids feed the search commands."""

    d: int = 64
    alpha: float = 0.5
    p: int = 3
    learning_rate: float = 0.005
    lr_grid: tuple[float, ...] = LR_GRID
    alpha_grid: tuple[float, ...] = ALPHA_GRID
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    window_length: int = 12
    k_percent: float = 50.0
    ablation: str = "full"
    seed: int = 0
    sage_layers: int = 1
    hyper_layers: int = 1
    sales_conv_axis: str = "community"
    ar_shared: bool = False
    bce_eps: float = 1e-7

    def validate(self) -> None:
        if not (0.0 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"ablation must be one of {ABLATIONS}, got {self.ablation!r}")
        if self.sales_conv_axis not in SALES_CONV_AXES:
            raise ValueError(f"sales_conv_axis must be one of {SALES_CONV_AXES}")
        if self.d < 1 or self.p < 1 or self.window_length < 1:
            raise ValueError("d, p and window_length must be positive")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ValueError("batch_size and patience must be positive, max_epochs >= 0")
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not (0.0 < self.k_percent <= 100.0):
            raise ValueError(f"k_percent must be in (0, 100], got {self.k_percent}")
        if self.sage_layers < 1 or self.hyper_layers < 1:
            raise ValueError("both encoders need at least one layer")


def initialize(config: ModelConfig, catalogs: Catalogs) -> ParameterStore:
    """Seeded parameter store: weights uniform in [-1/sqrt(d), 1/sqrt(d)],
    biases and autoregressive coefficients zero.

    Registration order is fixed, so identical seeds give identical stores.
    """
    config.validate()
    rng = np.random.default_rng(config.seed)
    d = config.d
    bound = 1.0 / math.sqrt(d)

    def uniform(shape):
        return rng.uniform(-bound, bound, size=shape)

    store = ParameterStore()
    store.register("community_embed", uniform((catalogs.n_communities, d)))
    store.register("attribute_embed", uniform((catalogs.n_attributes, d)))
    for i in range(config.sage_layers):
        store.register(f"sage_agg_{i}", uniform((d, d)))
        store.register(f"sage_update_{i}", uniform((2 * d, d)))
    for i in range(config.hyper_layers):
        store.register(f"hyper_mix_{i}", uniform((d, d)))
    store.register("sales_conv_kernel", uniform((tp.CONV_WIDTH, d)))
    store.register("sales_conv_bias", np.zeros((1, d)))
    for prefix in ("gru", "skipgru"):
        store.register(f"{prefix}_w_xr", uniform((d, d)))
        store.register(f"{prefix}_w_hr", uniform((d, d)))
        store.register(f"{prefix}_b_r", np.zeros((1, d)))
        store.register(f"{prefix}_w_xu", uniform((d, d)))
        store.register(f"{prefix}_w_hu", uniform((d, d)))
        store.register(f"{prefix}_b_u", np.zeros((1, d)))
        store.register(f"{prefix}_w_xc", uniform((d, d)))
        store.register(f"{prefix}_w_hc", uniform((d, d)))
        store.register(f"{prefix}_b_c", np.zeros((1, d)))
    store.register("combine_recent", uniform((d, d)))
    for i in range(1, config.p):
        store.register(f"combine_skip_{i}", uniform((d, d)))
    store.register("combine_bias", np.zeros((1, d)))
    ar_shape = (1, 1) if config.ar_shared else (catalogs.n_communities, catalogs.n_attributes)
    for lag in range(config.window_length):
        store.register(f"ar_lag_{lag:02d}", np.zeros(ar_shape))
    store.register("ar_bias", np.zeros((1, 1)))
    return store


def _gru_weights(store: ParameterStore, prefix: str) -> tp.GruWeights:
    return tp.GruWeights(
        w_xr=store[f"{prefix}_w_xr"], w_hr=store[f"{prefix}_w_hr"], b_r=store[f"{prefix}_b_r"],
        w_xu=store[f"{prefix}_w_xu"], w_hu=store[f"{prefix}_w_hu"], b_u=store[f"{prefix}_b_u"],
        w_xc=store[f"{prefix}_w_xc"], w_hc=store[f"{prefix}_w_hc"], b_c=store[f"{prefix}_b_c"])


@dataclass
class GraphConstants:
    """Per-month arrays derived once from the snapshots, reused every step."""

    aggregator: dict[int, np.ndarray]
    hyper_left: dict[int, np.ndarray]
    hyper_right: dict[int, np.ndarray]
    patches: dict[int, np.ndarray]
    positions: int
    scaled: dict[int, np.ndarray]


def build_constants(series: SnapshotSeries, config: ModelConfig) -> GraphConstants:
    aggregator = {m: enc.neighbor_mean_matrix(series.bipartite[m]) for m in series.months}
    hyper_left: dict[int, np.ndarray] = {}
    hyper_right: dict[int, np.ndarray] = {}
    for m in series.months:
        left, right = enc.hypergraph_operator_factors(series.hypergraphs[m])
        hyper_left[m] = left
        hyper_right[m] = right
    scaled = {m: tp.scale_sales(series.sales[m]) for m in series.months}
    patches: dict[int, np.ndarray] = {}
    positions = 1
    if config.sales_conv_axis == "community":
        for m in series.months:
            patches[m], positions = tp.sales_patch_matrix(scaled[m])
    else:
        # trailing three months of per-attribute community totals, one window
        n_attributes = series.catalogs.n_attributes
        totals = {m: np.log1p(series.sales[m].sum(axis=0)) for m in series.months}
        zero = np.zeros(n_attributes)
        for m in series.months:
            cols = [totals.get(m - 2, zero), totals.get(m - 1, zero), totals[m]]
            patches[m] = np.ascontiguousarray(np.stack(cols, axis=1))
        positions = 1
    return GraphConstants(aggregator=aggregator, hyper_left=hyper_left,
                          hyper_right=hyper_right, patches=patches,
                          positions=positions, scaled=scaled)


def forward(series: SnapshotSeries, consts: GraphConstants, sample: TrendSample,
            store: ParameterStore, config: ModelConfig,
            attr_range: tuple[int, int] | None = None) -> Node:
    """Score node for one sample, communities x attributes (or a column range)."""
    catalogs = series.catalogs
    n_attributes = catalogs.n_attributes
    a0, a1 = attr_range if attr_range is not None else (0, n_attributes)
    whole = (a0, a1) == (0, n_attributes)
    d = config.d
    community_embed = store["community_embed"]
    attribute_embed = store["attribute_embed"]
    use_bipartite = config.ablation != "hypergraph-only"
    use_hyper = config.ablation != "bipartite-only"
    scale_both = config.ablation in ("full", "gru-only")
    sage_layers = [(store[f"sage_agg_{i}"], store[f"sage_update_{i}"])
                   for i in range(config.sage_layers)]
    hyper_layers = [store[f"hyper_mix_{i}"] for i in range(config.hyper_layers)]
    kernel = store["sales_conv_kernel"]
    conv_bias = store["sales_conv_bias"]

    inputs: list[Node] = []
    for m in sample.window_months:
        parts: list[Node] = []
        if use_bipartite:
            bip = enc.sage_encode(None, community_embed, attribute_embed, sage_layers,
                                  aggregator=ad.constant(consts.aggregator[m]))
            parts.append(ad.scale(bip, 1.0 - config.alpha) if scale_both else bip)
        if use_hyper:
            hyp = enc.hyperconv_encode(None, attribute_embed, hyper_layers,
                                       factors=(ad.constant(consts.hyper_left[m]),
                                                ad.constant(consts.hyper_right[m])))
            parts.append(ad.scale(hyp, config.alpha) if scale_both else hyp)
        parts.append(tp.embed_sales_batch(ad.constant(consts.patches[m]),
                                          consts.positions, kernel, conv_bias))
        x = parts[0]
        for part in parts[1:]:
            x = ad.add(x, part)
        if not whole:
            x = ad.slice_block(x, (a0, a1), (0, d))
        inputs.append(x)

    recent_states = tp.gru_rollout(inputs, _gru_weights(store, "gru"))
    recent = recent_states[-1]
    if config.ablation != "gru-only":
        skip_states = tp.skip_gru_rollout(inputs, _gru_weights(store, "skipgru"), config.p)
        last = len(inputs) - 1
        history = [skip_states[last - i] if last - i >= 0 else None
                   for i in range(1, config.p)]
        evolved = tp.combine_recurrent(recent, history, store["combine_recent"],
                                       [store[f"combine_skip_{i}"] for i in range(1, config.p)],
                                       store["combine_bias"])
    else:
        evolved = ad.add(ad.matmul(recent, store["combine_recent"]), store["combine_bias"])

    n_communities = catalogs.n_communities
    history_nodes = []
    coeff_nodes = []
    for lag, m in enumerate(sample.window_months):
        coeff = store[f"ar_lag_{lag:02d}"]
        scaled = consts.scaled[m]
        if not whole:
            if not config.ar_shared:
                coeff = ad.slice_block(coeff, (0, n_communities), (a0, a1))
            scaled = scaled[:, a0:a1]
        coeff_nodes.append(coeff)
        history_nodes.append(ad.constant(scaled))
    forecast = tp.autoregressive(history_nodes, coeff_nodes, store["ar_bias"])

    affinity = ad.matmul(community_embed, ad.transpose(evolved))
    return ad.sigmoid(ad.add(affinity, forecast))


def predict(series: SnapshotSeries, consts: GraphConstants, sample: TrendSample,
            store: ParameterStore, config: ModelConfig) -> PredictionMatrix:
    scores = forward(series, consts, sample, store, config)
    return PredictionMatrix(scores=scores.value.copy(), target_month=sample.target_month)


def bce_loss(scores: Node, labels: np.ndarray, validity: np.ndarray,
             eps: float = 1e-7) -> Node:
    """Masked binary cross-entropy, summed over valid pairs."""
    return ad.masked_bce(scores, labels, validity, eps=eps)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    validation_auc: float | None
    wall_seconds: float


@dataclass
class TrainResult:
    store: ParameterStore
    epochs: list[EpochRecord]
    best_epoch: int | None
    best_validation_auc: float | None


def train(series: SnapshotSeries, config: ModelConfig,
          store: ParameterStore | None = None, consts: GraphConstants | None = None,
          log_cb: Callable[[EpochRecord], None] | None = None) -> TrainResult:
    """Mini-batch Adam over attribute chunks with early stopping on validation AUC.

    Batches are contiguous attribute ranges; the visiting order of
    (sample, batch) steps is reshuffled each epoch from a seeded generator.
    The best-validation parameter snapshot is restored at the end.  Without
    validation samples (degenerate splits) training runs to max_epochs and
    keeps the final parameters.
    """
    config.validate()
    split = series.split
    if not split.train:
        raise InsufficientHistoryError("the split has no training windows")
    if store is None:
        store = initialize(config, series.catalogs)
    if consts is None:
        consts = build_constants(series, config)
    n_attributes = series.catalogs.n_attributes
    chunks = [(s, min(s + config.batch_size, n_attributes))
              for s in range(0, n_attributes, config.batch_size)]
    steps = [(i, chunk) for i in split.train for chunk in chunks]
    order_rng = np.random.default_rng(config.seed + 1)

    best_val: float | None = None
    best_values = None
    best_epoch: int | None = None
    epochs_without_gain = 0
    records: list[EpochRecord] = []
    for epoch in range(1, config.max_epochs + 1):
        started = time.perf_counter()
        total_loss = 0.0
        for step in order_rng.permutation(len(steps)):
            sample_idx, (a0, a1) = steps[step]
            sample = series.samples[sample_idx]
            store.zero_grads()
            scores = forward(series, consts, sample, store, config, attr_range=(a0, a1))
            loss = bce_loss(scores, sample.labels[:, a0:a1], sample.validity[:, a0:a1],
                            eps=config.bce_eps)
            value = float(loss.value[0, 0])
            if not math.isfinite(value):
                raise NonFiniteError(
                    f"non-finite training loss at epoch {epoch}, sample {sample_idx}, "
                    f"attributes [{a0}, {a1})")
            ad.backward(loss)
            ad.adam_step(store, config.learning_rate)
            total_loss += value
        validation_auc = None
        if split.valid:
            preds = [predict(series, consts, series.samples[i], store, config)
                     for i in split.valid]
            samples = [series.samples[i] for i in split.valid]
            aucs, _, _ = ev.community_aucs(preds, samples, series.catalogs.n_communities)
            validation_auc = ev.macro_average(aucs)
        record = EpochRecord(epoch=epoch, train_loss=total_loss,
                             validation_auc=validation_auc,
                             wall_seconds=time.perf_counter() - started)
        records.append(record)
        if log_cb:
            log_cb(record)
        if validation_auc is not None:
            if best_val is None or validation_auc > best_val:
                best_val = validation_auc
                best_values = store.snapshot_values()
                best_epoch = epoch
                epochs_without_gain = 0
            else:
                epochs_without_gain += 1
                if epochs_without_gain >= config.patience:
                    break
    if best_values is not None:
        store.restore_values(best_values)
    return TrainResult(store=store, epochs=records, best_epoch=best_epoch,
                       best_validation_auc=best_val)


@dataclass
class GridCell:
    learning_rate: float
    alpha: float
    validation_auc: float | None


@dataclass
class GridSearchResult:
    best_config: ModelConfig
    cells: list[GridCell]
    best_result: TrainResult | None


def grid_search(series: SnapshotSeries, config: ModelConfig) -> GridSearchResult:
    """Exhaustive learning-rate x alpha sweep selected on validation AUC.

    Each cell trains its own store with a derived seed (base seed plus cell
    index).  Ties keep the earlier cell, so smaller learning rate wins
    first and smaller alpha second.
    """
    if not config.lr_grid or not config.alpha_grid:
        raise ValueError("grid_search needs non-empty lr_grid and alpha_grid")
    consts = build_constants(series, config)
    cells: list[GridCell] = []
    best_val = -math.inf
    best_config = None
    best_result = None
    for index, (lr, alpha) in enumerate(product(sorted(config.lr_grid),
                                                sorted(config.alpha_grid))):
        cell_config = replace(config, learning_rate=lr, alpha=alpha, seed=config.seed + index)
        result = train(series, cell_config, consts=consts)
        val = result.best_validation_auc
        cells.append(GridCell(learning_rate=lr, alpha=alpha, validation_auc=val))
        if val is not None and val > best_val:
            best_val = val
            best_config = cell_config
            best_result = result
    if best_config is None:
        best_config = replace(config, learning_rate=sorted(config.lr_grid)[0],
                              alpha=sorted(config.alpha_grid)[0])
    return GridSearchResult(best_config=best_config, cells=cells, best_result=best_result)
