"""Confidence-prediction error, nDCG fact ranking and box-volume inspection."""

from __future__ import annotations

import csv
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Triples, tail_index
from .errors import UndefinedMetricError
from .geometry import conditional_prob, degenerate_rows, expected_volume
from .model import ParameterStore, apply_transform, tail_transforms, entity_boxes, transformed_pair

logger = logging.getLogger(__name__)

GAIN_MODES = ("linear", "exponential")


def predict(store: ParameterStore, h, r, t) -> tuple[np.ndarray, int]:
    """Scores clamped to [0, 1]; degenerate rows score 0.  Also returns the fault count."""
    h, r, t = (np.asarray(x, dtype=np.int64) for x in (h, r, t))
    store.check_entities(h)
    store.check_entities(t)
    store.check_relations(r)
    head, tail = transformed_pair(store.arrays, h, r, t)
    bad = degenerate_rows(tail, store.beta)
    with np.errstate(all="ignore"):
        phi = conditional_prob(head, tail, store.beta, strict=False)
    phi = np.where(bad | ~np.isfinite(phi), 0.0, np.clip(phi, 0.0, 1.0))
    return phi, int(bad.sum())


def confidence_metrics(triples: Triples, store: ParameterStore) -> tuple[float, float]:
    """``(MSE, MAE)`` of clamped predictions against the stored confidences."""
    if len(triples) == 0:
        raise ValueError("confidence metrics need a non-empty triple set")
    phi, faults = predict(store, triples.h, triples.r, triples.t)
    if faults:
        logger.warning("%d degenerate tail boxes scored as 0", faults)
    err = phi - triples.s
    return float(np.mean(err * err)), float(np.mean(np.abs(err)))


def gain(s, mode: str = "linear"):
    s = np.asarray(s, dtype=np.float64)
    if mode == "linear":
        return s
    if mode == "exponential":
        return np.exp2(s) - 1.0
    raise ValueError(f"unknown gain mode {mode!r}")


def dcg(gains) -> float:
    gains = np.asarray(gains, dtype=np.float64)
    return float(np.sum(gains / np.log2(np.arange(2, gains.size + 2))))


def ndcg(ranked_scores, mode: str = "linear") -> float:
    """nDCG of confidences listed in rank order (0 for irrelevant positions)."""
    g = gain(ranked_scores, mode)
    if not np.any(g > 0):
        raise UndefinedMetricError("nDCG is undefined without a positive gain")
    ideal = np.sort(g)[::-1]
    return dcg(g) / dcg(ideal)


def _ndcg_at_ranks(ranks: np.ndarray, scores: np.ndarray, mode: str) -> float:
    """nDCG given 1-based ranks of the relevant items and their confidences."""
    g = gain(scores, mode)
    if not np.any(g > 0):
        raise UndefinedMetricError("nDCG is undefined without a positive gain")
    actual = float(np.sum(g / np.log2(ranks + 1.0)))
    return actual / dcg(np.sort(g)[::-1])


def rank_tails(store: ParameterStore, h: int, r: int) -> tuple[np.ndarray, np.ndarray]:
    """All entities ordered by descending score (ties by ascending id)."""
    n = store.n_entities
    cand = np.arange(n)
    phi, _ = predict(store, np.full(n, h), np.full(n, r), cand)
    order = np.lexsort((cand, -phi))
    return order, phi[order]


@dataclass
class QueryResult:
    h: int
    r: int
    n_relevant: int
    linear: float
    exponential: float


@dataclass
class RankingResult:
    mean_linear: float
    mean_exponential: float
    queries: list = field(default_factory=list)
    skipped: int = 0


def _query_result(store, h, r, relevant: dict):
    tails = np.fromiter(relevant.keys(), dtype=np.int64)
    conf = np.fromiter(relevant.values(), dtype=np.float64)
    order, _ = rank_tails(store, h, r)
    position = np.empty_like(order)
    position[order] = np.arange(1, order.size + 1)
    ranks = position[tails].astype(np.float64)
    try:
        lin = _ndcg_at_ranks(ranks, conf, "linear")
        ex = _ndcg_at_ranks(ranks, conf, "exponential")
    except UndefinedMetricError:
        return None
    return QueryResult(h, r, len(tails), lin, ex)


def rank_queries(test: Triples, store: ParameterStore, relevance: Triples | None = None, threads: int = 1) -> RankingResult:
    """Mean linear and exponential nDCG over the ``(h, r)`` queries in ``test``.

    Gains come from ``test`` itself unless ``relevance`` (e.g. all splits
    combined) is given.  Queries are visited in sorted ``(h, r)`` order.
    """
    queries = sorted(tail_index(test))
    index = tail_index(relevance if relevance is not None else test)

    def run(q):
        return _query_result(store, q[0], q[1], index[q])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, queries))
    else:
        results = [run(q) for q in queries]
    kept = [res for res in results if res is not None]
    skipped = len(results) - len(kept)
    if skipped:
        logger.warning("skipped %d queries without positive gain", skipped)
    if not kept:
        raise UndefinedMetricError("no query has a positive gain")
    return RankingResult(
        float(np.mean([q.linear for q in kept])),
        float(np.mean([q.exponential for q in kept])),
        kept,
        skipped,
    )


@dataclass
class VolumeRow:
    entity: int
    name: str
    volume: float
    coverage: int


@dataclass
class VolumeReport:
    relation: int
    rows: list
    top: list
    bottom: list


def volume_report(
    store: ParameterStore,
    r: int,
    top_k: int = 10,
    candidates=None,
    cover_set=None,
    threshold: float = 0.9,
    chunk: int = 256,
) -> VolumeReport:
    """Rank entities by how many ``cover_set`` boxes their tail-transformed box covers.

    ``t`` covers ``t'`` when ``P(g_r(t) | g_r(t')) >= threshold``.  Both sets
    default to the whole vocabulary.
    """
    store.check_relations(r)
    n = store.n_entities
    candidates = np.arange(n) if candidates is None else np.asarray(candidates, dtype=np.int64)
    cover_set = np.arange(n) if cover_set is None else np.asarray(cover_set, dtype=np.int64)
    store.check_entities(candidates)
    store.check_entities(cover_set)
    beta = store.beta

    def g(ids):
        return apply_transform(tail_transforms(store.arrays, np.full(ids.size, r)), entity_boxes(store.arrays, ids))

    volumes = expected_volume(g(candidates), beta)
    m = cover_set.size
    coverage = np.zeros(candidates.size, dtype=np.int64)
    rows_per_chunk = max(1, chunk * 64 // max(m, 1))
    for start in range(0, candidates.size, rows_per_chunk):
        block = candidates[start : start + rows_per_chunk]
        a = g(np.repeat(block, m))
        b = g(np.tile(cover_set, block.size))
        with np.errstate(all="ignore"):
            p = conditional_prob(a, b, beta, strict=False)
        p = np.where(degenerate_rows(b, beta), 0.0, p)
        coverage[start : start + block.size] = (p.reshape(block.size, m) >= threshold).sum(axis=1)
    order = np.lexsort((candidates, -volumes, -coverage))
    rows = [
        VolumeRow(int(candidates[i]), store.entity_names[candidates[i]], float(volumes[i]), int(coverage[i]))
        for i in order
    ]
    k = min(top_k, len(rows))
    return VolumeReport(r, rows, rows[:k], rows[::-1][:k])


# -- writers --------------------------------------------------------------------


def write_metrics(metrics: dict, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "value"])
        for k, v in metrics.items():
            w.writerow([k, repr(float(v))])


def write_query_results(result: RankingResult, path, entity_names=None, relation_names=None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["head", "relation", "n_relevant", "ndcg_linear", "ndcg_exponential"])
        for q in result.queries:
            h = entity_names[q.h] if entity_names else q.h
            r = relation_names[q.r] if relation_names else q.r
            w.writerow([h, r, q.n_relevant, repr(q.linear), repr(q.exponential)])


def write_volume_report(rows, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(f"{row.name}\t{row.coverage}\n")
