"""Joint objective, Adam updates, early stopping and checkpointing."""

from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from .constraints import ConstraintSet, FaultCounter, constraint_loss, sample_boxes
from .data import MAX_RESAMPLE, Dataset, SamplerStats, Triples, batch_iter, corrupt
from .errors import ConfigurationError, NumericFault
from .geometry import conditional_prob, degenerate_rows
from .model import PARAM_NAMES, ParameterStore, init_parameters, save_checkpoint, transformed_pair

logger = logging.getLogger(__name__)

LOG_COLUMNS = ("epoch", "J1", "J2", "L2", "val_metric", "wall_seconds")
MAX_CONSECUTIVE_ABORTS = 3


@dataclass
class TrainConfig:
    """Hyperparameters of one training run.

    The defaults are the confidence-prediction setting; see :meth:`for_task`
    for the ranking preset.
    """

    d: int = 64
    beta: float = 0.01
    lr: float = 1e-4
    batch_size: int = 1024
    alpha: float = 0.1
    n_neg: int = 30
    w_tr: float = 0.1
    w_c: float = 0.1
    n_box_samples: int = 64
    l2_box: float = 1.0
    l2_other: float = 0.001
    max_epochs: int = 1000
    patience: int = 30
    val_metric: str = "mse"
    seed: int = 0
    single_transform: bool = False

    @classmethod
    def for_task(cls, task: str, **overrides) -> "TrainConfig":
        if task == "confidence":
            base = {}
        elif task == "ranking":
            base = dict(d=300, beta=1e-3, batch_size=4096, l2_box=1e-5, l2_other=1e-5, val_metric="ndcg")
        else:
            raise ConfigurationError(f"unknown task {task!r}")
        base.update(overrides)
        return cls(**base)

    @classmethod
    def from_dict(cls, values: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**values)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def validate(self) -> "TrainConfig":
        for name in ("lr", "alpha", "w_tr", "w_c", "l2_box", "l2_other"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be >= 0")
        if self.beta <= 0:
            raise ConfigurationError("beta must be > 0")
        for name in ("d", "batch_size", "n_neg", "n_box_samples", "patience", "max_epochs"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{name} must be >= 1")
        if self.val_metric not in ("mse", "ndcg"):
            raise ConfigurationError("val_metric must be 'mse' or 'ndcg'")
        return self


class Adam:
    """Adam with bias correction over a dict of named arrays."""

    def __init__(self, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: dict = {}
        self.v: dict = {}
        self.t = 0

    def propose(self, params: dict, grads: dict):
        """New parameter values and moments for one step, without committing."""
        t = self.t + 1
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        new_params, new_m, new_v = {}, {}, {}
        for k, g in grads.items():
            m = self.m.get(k, np.zeros_like(g))
            v = self.v.get(k, np.zeros_like(g))
            m = self.beta1 * m + (1.0 - self.beta1) * g
            v = self.beta2 * v + (1.0 - self.beta2) * (g * g)
            new_params[k] = params[k] - self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            new_m[k], new_v[k] = m, v
        return new_params, (t, new_m, new_v)

    def commit(self, state):
        self.t, m, v = state
        self.m.update(m)
        self.v.update(v)

    def step(self, params: dict, grads: dict) -> None:
        new_params, state = self.propose(params, grads)
        params.update(new_params)
        self.commit(state)


@dataclass
class LossParts:
    positive: object
    negative: object
    constraint: object
    l2: object

    @property
    def j1(self):
        return self.positive + self.negative

    @property
    def total(self):
        return self.positive + self.negative + self.constraint + self.l2


@dataclass
class StepReport:
    j1: float
    j2: float
    l2: float
    loss: float
    grad_norm: float
    score_faults: int = 0
    constraint_faults: int = 0


def _valid_scores(params, h, r, t, beta, faults: list | None):
    head, tail = transformed_pair(params, h, r, t)
    bad = degenerate_rows(tail, beta)
    if faults is not None:
        faults.append(int(bad.sum()))
    phi = conditional_prob(head, tail, beta, strict=False)
    return phi, np.flatnonzero(~bad)


def positive_loss(params: dict, batch: Triples, beta: float, faults: list | None = None):
    """Sum of squared residuals ``(phi(l) - s_l)^2`` over the batch."""
    if len(batch) == 0:
        raise ConfigurationError("empty batch")
    phi, keep = _valid_scores(params, batch.h, batch.r, batch.t, beta, faults)
    if keep.size == 0:
        return 0.0
    resid = ad.take(phi, keep) - batch.s[keep]
    return ad.sum(resid * resid)


def negative_loss(params: dict, negatives, beta: float, alpha: float, faults: list | None = None):
    """``alpha`` times the summed squared scores of corrupted triples."""
    if alpha < 0:
        raise ConfigurationError("alpha must be >= 0")
    h, r, t = negatives
    if alpha == 0 or len(h) == 0:
        return 0.0
    phi, keep = _valid_scores(params, h, r, t, beta, faults)
    if keep.size == 0:
        return 0.0
    p = ad.take(phi, keep)
    return alpha * ad.sum(p * p)


def _sq(x):
    return ad.sum(x * x)


def l2_loss(params: dict, l2_box: float, l2_other: float, scale: float = 1.0, frozen=()):
    """Squared-norm penalty: log-offsets with ``l2_box``, everything else with ``l2_other``."""
    if l2_box < 0 or l2_other < 0:
        raise ConfigurationError("L2 coefficients must be >= 0")
    total = 0.0
    if l2_box > 0:
        total = total + (l2_box * scale) * _sq(params["ent_log_off"])
    if l2_other > 0:
        other = None
        for k in ("ent_cen", "head_tau", "head_delta", "tail_tau", "tail_delta"):
            if k in frozen:
                continue
            other = _sq(params[k]) if other is None else other + _sq(params[k])
        total = total + (l2_other * scale) * other
    return total


def objective(
    params: dict,
    batch: Triples,
    negatives,
    phi,
    config: TrainConfig,
    constraints: ConstraintSet | None,
    l2_scale: float,
    score_faults: list | None = None,
    constraint_faults: FaultCounter | None = None,
) -> LossParts:
    """All loss components for one batch on whatever ``params`` holds."""
    frozen = ("tail_tau", "tail_delta") if config.single_transform else ()
    pos = positive_loss(params, batch, config.beta, score_faults)
    neg = negative_loss(params, negatives, config.beta, config.alpha, score_faults)
    if constraints and phi is not None:
        j2 = constraint_loss(constraints, phi, params, config.beta, config.w_tr, config.w_c, constraint_faults)
    else:
        j2 = 0.0
    l2 = l2_loss(params, config.l2_box, config.l2_other, l2_scale, frozen)
    return LossParts(pos, neg, j2, l2)


def step_rngs(seed: int, epoch: int, batch_index: int):
    """Independent generators for negatives and box samples of one batch."""
    ss = np.random.SeedSequence([seed, epoch, batch_index])
    neg_ss, box_ss = ss.spawn(2)
    return np.random.default_rng(neg_ss), np.random.default_rng(box_ss)


def make_step_inputs(dataset: Dataset, batch: Triples, store: ParameterStore, config: TrainConfig,
                     constraints, epoch: int, batch_index: int, stats: SamplerStats | None = None):
    neg_rng, box_rng = step_rngs(config.seed, epoch, batch_index)
    if config.alpha > 0:
        negatives = corrupt(batch.h, batch.r, batch.t, config.n_neg, dataset.observed, neg_rng, stats)
    else:
        negatives = (np.zeros(0, np.int64),) * 3
    phi = None
    if constraints and (config.w_tr > 0 or config.w_c > 0):
        phi = sample_boxes(config.n_box_samples, store.d, box_rng, store)
    return negatives, phi


def _f(x) -> float:
    return float(ad.value_of(x))


def train_step(store: ParameterStore, adam: Adam, config: TrainConfig, batch: Triples, negatives, phi,
               constraints: ConstraintSet | None = None, l2_scale: float = 1.0) -> StepReport:
    """One forward/backward pass and Adam update on ``store`` (in place).

    A non-finite loss, gradient or update leaves the store and optimiser
    untouched and raises :class:`NumericFault`.
    """
    tape = ad.Tape()
    params = store.bind(tape)
    score_faults: list = []
    cfaults = FaultCounter()
    parts = objective(params, batch, negatives, phi, config, constraints, l2_scale, score_faults, cfaults)
    total = parts.total
    if not isinstance(total, ad.Node):
        total = tape.constant(total)
    loss = float(total.value)
    if not math.isfinite(loss):
        raise NumericFault(f"non-finite loss {loss}")
    tape.backward(total)
    trainable = [k for k in PARAM_NAMES if not (config.single_transform and k.startswith("tail_"))]
    grads = {k: params[k].grad for k in trainable}
    gnorm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if not math.isfinite(gnorm):
        raise NumericFault("non-finite gradient")
    new_params, state = adam.propose(store.arrays, grads)
    if not all(np.all(np.isfinite(v)) for v in new_params.values()):
        raise NumericFault("non-finite parameters after update")
    store.arrays.update(new_params)
    adam.commit(state)
    tape.clear()
    return StepReport(
        j1=_f(parts.j1),
        j2=_f(parts.constraint),
        l2=_f(parts.l2),
        loss=loss,
        grad_norm=gnorm,
        score_faults=sum(score_faults),
        constraint_faults=cfaults.skipped,
    )


# -- fitting ------------------------------------------------------------------


def validation_metric(store: ParameterStore, dataset: Dataset, metric: str) -> float:
    from .evaluation import confidence_metrics, rank_queries

    split = dataset.val if len(dataset.val) else dataset.train
    if metric == "mse":
        return confidence_metrics(split, store)[0]
    return rank_queries(split, store).mean_linear


def _better(a: float, b: float | None, metric: str) -> bool:
    if b is None:
        return True
    return a < b if metric == "mse" else a > b


@dataclass
class FitResult:
    store: ParameterStore
    log: list
    best_epoch: int
    best_metric: float
    epochs_run: int
    aborted_steps: int = 0
    exhausted_negatives: int = 0


def fit(
    dataset: Dataset,
    config: TrainConfig,
    constraints: ConstraintSet | None = None,
    store: ParameterStore | None = None,
    checkpoint_path=None,
    log_path=None,
    metric_fn: Callable[[ParameterStore], float] | None = None,
) -> FitResult:
    """Train with early stopping on the validation metric.

    Returns the best-scoring snapshot.  ``metric_fn`` replaces the
    validation metric (it must follow the direction of
    ``config.val_metric``).
    """
    config.validate()
    if constraints:
        constraints.check(dataset.n_relations)
    if store is None:
        store = init_parameters(
            dataset.n_entities, dataset.n_relations, config.d, seed=config.seed, beta=config.beta,
            entity_names=dataset.entity_names, relation_names=dataset.relation_names,
        )
    if config.single_transform:
        store.arrays["tail_tau"][:] = 0.0
        store.arrays["tail_delta"][:] = 0.0
    adam = Adam(config.lr)
    n_batches = math.ceil(len(dataset.train) / config.batch_size)
    l2_scale = 1.0 / n_batches
    stats = SamplerStats()
    evaluate = metric_fn or (lambda s: validation_metric(s, dataset, config.val_metric))

    log, best, best_epoch, best_store = [], None, 0, store.copy()
    since_best = aborts = consecutive = 0
    start = time.perf_counter()
    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        sums = np.zeros(3)
        for b, idx in enumerate(batch_iter(len(dataset.train), config.batch_size, config.seed, epoch)):
            batch = dataset.train.subset(idx)
            negatives, phi = make_step_inputs(dataset, batch, store, config, constraints, epoch, b, stats)
            try:
                rep = train_step(store, adam, config, batch, negatives, phi, constraints, l2_scale)
            except NumericFault as exc:
                aborts += 1
                consecutive += 1
                logger.warning("epoch %d batch %d aborted: %s", epoch, b, exc)
                if consecutive >= MAX_CONSECUTIVE_ABORTS:
                    raise
                continue
            consecutive = 0
            sums += (rep.j1, rep.j2, rep.l2)
        metric = float(evaluate(store))
        log.append(
            dict(zip(LOG_COLUMNS, (epoch, *map(float, sums), metric, time.perf_counter() - start)))
        )
        if log_path is not None:
            write_log(log, log_path)
        if _better(metric, best, config.val_metric):
            best, best_epoch, since_best = metric, epoch, 0
            best_store = store.copy()
            if checkpoint_path is not None:
                save_checkpoint(best_store, checkpoint_path)
        else:
            since_best += 1
            if since_best >= config.patience:
                break
    if stats.exhausted:
        logger.warning("%d negatives were kept after %d redraws still hit observed triples",
                       stats.exhausted, MAX_RESAMPLE)
    return FitResult(best_store, log, best_epoch, best, epoch, aborts, stats.exhausted)


def write_log(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def load_config(path) -> TrainConfig:
    """Read a JSON run configuration (the keys of :class:`TrainConfig`).

    A ``task`` key selects the preset the other keys override.
    """
    values = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(values, dict):
        raise ConfigurationError(f"{path}: config must be a JSON object")
    task = values.get("task", "confidence")
    values = dict(values.get("train", values))
    task = values.pop("task", task)
    known = {f.name for f in dataclasses.fields(TrainConfig)}
    unknown = set(values) - known
    if unknown:
        raise ConfigurationError(f"{path}: unknown config keys {sorted(unknown)}")
    return TrainConfig.for_task(task, **values).validate()
