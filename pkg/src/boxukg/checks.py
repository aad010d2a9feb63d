"""Executable self-checks: finite-difference gradients and Monte-Carlo volumes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .constraints import ConstraintSet, sample_boxes
from .data import ObservedSet, Triples, corrupt
from .geometry import GumbelBox, expected_volume, mc_volume_oracle
from .model import PARAM_NAMES, ParameterStore
from .training import TrainConfig, objective


@dataclass
class GradCheckResult:
    seed: int
    max_rel_error: float
    n_params: int


def toy_problem(seed: int, d: int = 4, n_entities: int = 10, n_relations: int = 2, beta: float = 0.1):
    """Random store, batch, negatives and box sample for a full-loss evaluation."""
    rng = np.random.default_rng(seed)
    arrays = {
        "ent_cen": rng.uniform(0.0, 1.0, (n_entities, d)),
        "ent_log_off": np.log(rng.uniform(0.2, 0.6, (n_entities, d))),
        "head_tau": rng.normal(0.0, 0.1, (n_relations, d)),
        "head_delta": rng.normal(0.0, 0.2, (n_relations, d)),
        "tail_tau": rng.normal(0.0, 0.1, (n_relations, d)),
        "tail_delta": rng.normal(0.0, 0.2, (n_relations, d)),
    }
    store = ParameterStore(arrays, beta)
    n_batch = 8
    batch = Triples(
        rng.integers(0, n_entities, n_batch),
        rng.integers(0, n_relations, n_batch),
        rng.integers(0, n_entities, n_batch),
        rng.uniform(0.0, 1.0, n_batch),
    )
    observed = ObservedSet(batch, n_entities, n_relations)
    negatives = corrupt(batch.h, batch.r, batch.t, 3, observed, rng)
    phi = sample_boxes(8, d, rng, store)
    constraints = ConstraintSet(transitive=(0,), compositions=((0, 1, 1),))
    config = TrainConfig(d=d, beta=beta, alpha=0.5, n_neg=3, w_tr=0.3, w_c=0.2, l2_box=0.1, l2_other=0.05)
    return store, batch, negatives, phi, constraints, config


def _total(arrays, batch, negatives, phi, config, constraints, scale):
    return ad.value_of(objective(arrays, batch, negatives, phi, config, constraints, scale).total)


def gradcheck(seed: int, eps: float = 1e-5, **toy) -> GradCheckResult:
    """Compare tape gradients of the full loss with central differences.

    The error per parameter is ``|analytic - numeric| / max(1, |numeric|)``.
    """
    store, batch, negatives, phi, constraints, config = toy_problem(seed, **toy)
    scale = 0.5
    tape = ad.Tape()
    params = store.bind(tape)
    total = objective(params, batch, negatives, phi, config, constraints, scale).total
    tape.backward(total)
    worst, count = 0.0, 0
    for k in PARAM_NAMES:
        analytic = params[k].grad
        base = store.arrays[k]
        for idx in np.ndindex(base.shape):
            orig = base[idx]
            base[idx] = orig + eps
            up = _total(store.arrays, batch, negatives, phi, config, constraints, scale)
            base[idx] = orig - eps
            down = _total(store.arrays, batch, negatives, phi, config, constraints, scale)
            base[idx] = orig
            numeric = (up - down) / (2 * eps)
            worst = max(worst, abs(analytic[idx] - numeric) / max(1.0, abs(numeric)))
            count += 1
    return GradCheckResult(seed, float(worst), count)


@dataclass
class VolumeCheckResult:
    d: int
    beta: float
    approx: float
    monte_carlo: float
    stderr: float

    @property
    def rel_error(self) -> float:
        return abs(self.approx - self.monte_carlo) / self.monte_carlo


def random_regime_box(rng, min_ratio: float = 10.0, max_ratio: float = 50.0):
    """A box of dimension 1-3 whose every side is ``min_ratio..max_ratio`` times beta."""
    d = int(rng.integers(1, 4))
    beta = float(rng.choice([0.01, 0.05, 0.1]))
    sides = rng.uniform(min_ratio, max_ratio, d) * beta
    return GumbelBox(rng.uniform(-1.0, 1.0, d), sides / 2.0), beta


def mccheck(seed: int, n_samples: int = 1_000_000) -> VolumeCheckResult:
    rng = np.random.default_rng(seed)
    box, beta = random_regime_box(rng)
    mean, se = mc_volume_oracle(box, beta, n_samples, seed=rng.integers(2**32), return_stderr=True)
    approx = float(expected_volume(box, beta))
    return VolumeCheckResult(box.dim, beta, approx, mean, se)
