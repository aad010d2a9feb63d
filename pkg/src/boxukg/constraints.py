"""Transitivity and composition regularisers over relation transforms.

Both losses are evaluated on a shared sample of boxes drawn once per
training step.  Sampled boxes are constants: the regularisers only move
relation transforms, never entity parameters.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, NameResolutionError, ParseError
from .geometry import GumbelBox, conditional_prob, degenerate_rows
from .model import ParameterStore, apply_transform, head_transforms, tail_transforms

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_SIZE = 64


@dataclass(frozen=True)
class ConstraintSet:
    transitive: tuple = ()
    compositions: tuple = ()

    def __post_init__(self):
        if len(set(self.transitive)) != len(self.transitive):
            raise ConfigurationError("duplicate transitive relation")
        if len(set(map(tuple, self.compositions))) != len(self.compositions):
            raise ConfigurationError("duplicate composition rule")

    def __bool__(self):
        return bool(self.transitive or self.compositions)

    def check(self, n_relations: int):
        ids = list(self.transitive) + [r for rule in self.compositions for r in rule]
        bad = [r for r in ids if not 0 <= r < n_relations]
        if bad:
            raise ConfigurationError(f"constraint references unknown relation ids {bad}")


def _resolve(name: str, vocab: dict, path, lineno):
    try:
        return vocab[name]
    except KeyError:
        raise NameResolutionError(f"{path}:{lineno}: unknown relation {name!r}") from None


def load_constraints(path, relation_names) -> ConstraintSet:
    """Parse ``transitive <rel>`` and ``compose <r1> <r2> -> <r3>`` lines.

    ``#`` starts a comment.  Names must exist in ``relation_names``.
    """
    vocab = {name: i for i, name in enumerate(relation_names)}
    transitive, compositions = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            words = line.split()
            if words[0] == "transitive" and len(words) == 2:
                transitive.append(_resolve(words[1], vocab, path, lineno))
            elif words[0] == "compose" and len(words) == 5 and words[3] == "->":
                compositions.append(tuple(_resolve(w, vocab, path, lineno) for w in (words[1], words[2], words[4])))
            else:
                raise ParseError(f"{path}:{lineno}: cannot parse constraint {line!r}")
    return ConstraintSet(tuple(transitive), tuple(compositions))


def bundled_constraints(name: str) -> Path:
    """Path of a shipped constraint file (``cn15k`` or ``nl27k``)."""
    path = Path(__file__).parent / "resources" / f"{name}_constraints.txt"
    if not path.exists():
        raise ConfigurationError(f"no bundled constraint file for {name!r}")
    return path


@dataclass
class FaultCounter:
    skipped: int = 0
    by_term: dict = field(default_factory=dict)

    def add(self, term: str, n: int):
        if n:
            self.skipped += n
            self.by_term[term] = self.by_term.get(term, 0) + n
            logger.warning("%s: dropped %d degenerate sample box(es)", term, n)


def sample_boxes(n: int, d: int, rng: np.random.Generator, store: ParameterStore) -> GumbelBox:
    """``n`` boxes: roughly half synthetic, the rest copies of random entities.

    Synthetic boxes have unit-cube centres and log-offsets uniform on
    ``[log 0.01, log 0.5]``.
    """
    if n < 1:
        raise ConfigurationError("sample size must be >= 1")
    n_entity = n // 2
    n_synth = n - n_entity
    cen = rng.uniform(0.0, 1.0, (n_synth, d))
    off = np.exp(rng.uniform(np.log(0.01), np.log(0.5), (n_synth, d)))
    ids = rng.integers(0, store.n_entities, size=n_entity)
    cen = np.concatenate([cen, store.arrays["ent_cen"][ids]])
    off = np.concatenate([off, np.exp(store.arrays["ent_log_off"][ids])])
    return GumbelBox(cen, off)


def _repeat(r: int, n: int):
    return np.full(n, r, dtype=np.intp)


def _rows(box: GumbelBox, keep: np.ndarray) -> GumbelBox:
    return GumbelBox(ad.take(box.cen, keep), ad.take(box.off, keep))


def _mean_sq_gap(p_terms, keep, n_kept):
    total = None
    for p in p_terms:
        gap = 1.0 - ad.take(p, keep)
        sq = ad.sum(gap * gap)
        total = sq if total is None else total + sq
    return total * (1.0 / n_kept)


def transitivity_loss(r: int, phi: GumbelBox, params: dict, beta: float, faults: FaultCounter | None = None):
    """Mean over sampled ``u`` of ``(P(g_r(u) | f_r(u)) - 1)^2``."""
    n = ad.value_of(phi.cen).shape[0]
    f_u = apply_transform(head_transforms(params, _repeat(r, n)), phi)
    g_u = apply_transform(tail_transforms(params, _repeat(r, n)), phi)
    bad = degenerate_rows(f_u, beta)
    keep = np.flatnonzero(~bad)
    if faults is not None:
        faults.add(f"transitive[{r}]", int(bad.sum()))
    if keep.size == 0:
        return 0.0
    p = conditional_prob(g_u, f_u, beta, strict=False)
    return _mean_sq_gap([p], keep, keep.size)


def box_distance_terms(a: GumbelBox, b: GumbelBox, beta: float):
    """The two conditionals ``P(a | b)`` and ``P(b | a)``."""
    return conditional_prob(a, b, beta, strict=False), conditional_prob(b, a, beta, strict=False)


def box_distance(a: GumbelBox, b: GumbelBox, beta: float):
    """Symmetric score ``(1 - P(a|b))^2 + (1 - P(b|a))^2`` per row."""
    p_ab, p_ba = box_distance_terms(a, b, beta)
    x, y = 1.0 - p_ab, 1.0 - p_ba
    return x * x + y * y


def composition_loss(r1: int, r2: int, r3: int, phi: GumbelBox, params: dict, beta: float, faults=None):
    """Distance of ``f_r3``/``g_r3`` from ``f_r2 . f_r1``/``g_r2 . g_r1`` on the sample."""
    n = ad.value_of(phi.cen).shape[0]
    terms, bad = [], np.zeros(n, dtype=bool)
    for transforms in (head_transforms, tail_transforms):
        direct = apply_transform(transforms(params, _repeat(r3, n)), phi)
        chained = apply_transform(
            transforms(params, _repeat(r2, n)), apply_transform(transforms(params, _repeat(r1, n)), phi)
        )
        bad |= degenerate_rows(direct, beta) | degenerate_rows(chained, beta)
        terms.extend(box_distance_terms(direct, chained, beta))
    keep = np.flatnonzero(~bad)
    if faults is not None:
        faults.add(f"compose[{r1},{r2}->{r3}]", int(bad.sum()))
    if keep.size == 0:
        return 0.0
    return _mean_sq_gap(terms, keep, keep.size)


def constraint_loss(
    constraints: ConstraintSet,
    phi: GumbelBox,
    params: dict,
    beta: float,
    w_tr: float,
    w_c: float,
    faults: FaultCounter | None = None,
):
    """Weighted sum of every declared regulariser on one shared sample."""
    if w_tr < 0 or w_c < 0:
        raise ConfigurationError("constraint weights must be non-negative")
    total = 0.0
    if w_tr > 0:
        for r in constraints.transitive:
            total = total + w_tr * transitivity_loss(r, phi, params, beta, faults)
    if w_c > 0:
        for r1, r2, r3 in constraints.compositions:
            total = total + w_c * composition_loss(r1, r2, r3, phi, params, beta, faults)
    return total
