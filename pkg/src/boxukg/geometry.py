"""Gumbel boxes: intersection, expected volume and conditional probability.

A box is stored by centre and offset; the Gumbel location parameters are
``lo = cen - off`` (min side, GumbelMax) and ``hi = cen + off`` (max side,
GumbelMin).  All functions work row-wise on arrays of shape ``(..., d)`` and
accept plain numpy arrays or autodiff nodes interchangeably.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigurationError, DegenerateBoxError

EULER_GAMMA = 0.5772156649015329

# per-dimension floor on the expected side length of a conditioning box
VOLUME_FLOOR = 1e-30


@dataclass(frozen=True)
class GumbelBox:
    cen: object
    off: object

    @classmethod
    def from_bounds(cls, lo, hi) -> "GumbelBox":
        return cls((lo + hi) * 0.5, (hi - lo) * 0.5)

    @property
    def lo(self):
        return self.cen - self.off

    @property
    def hi(self):
        return self.cen + self.off

    @property
    def dim(self) -> int:
        return ad.value_of(self.cen).shape[-1]

    def values(self) -> "GumbelBox":
        """Detached copy holding plain arrays."""
        return GumbelBox(ad.value_of(self.cen).copy(), ad.value_of(self.off).copy())


def _check_dims(a: GumbelBox, b: GumbelBox):
    sa, sb = ad.value_of(a.cen).shape, ad.value_of(b.cen).shape
    if sa != sb:
        raise ConfigurationError(f"box shapes differ: {sa} vs {sb}")


def intersect(a: GumbelBox, b: GumbelBox, beta: float) -> GumbelBox:
    """Gumbel intersection by min/max stability.

    The min endpoint is the soft maximum of the two min endpoints and the
    max endpoint the soft minimum of the two max endpoints.  The result may
    be empty in some dimension (``lo >= hi``); its volume is then ~0.
    """
    _check_dims(a, b)
    lo = ad.logsumexp([a.lo, b.lo], beta)
    hi = -ad.logsumexp([-a.hi, -b.hi], beta)
    return GumbelBox.from_bounds(lo, hi)


def _side_args(box: GumbelBox, beta: float):
    return 2.0 * box.off - 2.0 * EULER_GAMMA * beta


def expected_sides(box: GumbelBox, beta: float):
    """Per-dimension expected side lengths (the softplus factors)."""
    return ad.softplus(_side_args(box, beta), beta)


def expected_volume(box: GumbelBox, beta: float):
    """Approximate expected volume: product of softplus-smoothed sides."""
    return ad.prod(expected_sides(box, beta), axis=-1)


def log_expected_volume(box: GumbelBox, beta: float):
    return ad.sum(ad.log_softplus(_side_args(box, beta), beta), axis=-1)


def degenerate_rows(box: GumbelBox, beta: float) -> np.ndarray:
    """Boolean mask of rows with some expected side below ``VOLUME_FLOOR``."""
    sides = ad.softplus(_side_args(box.values(), beta), beta)
    return np.any(sides < VOLUME_FLOOR, axis=-1) | ~np.all(np.isfinite(sides), axis=-1)


def conditional_prob(a: GumbelBox, b: GumbelBox, beta: float, strict: bool = True):
    """``E[Vol(a & b)] / E[Vol(b)]``, the first-order estimate of P(a | b).

    Computed as the exponential of a log-volume difference.  With
    ``strict`` a degenerate ``b`` raises :class:`DegenerateBoxError`;
    otherwise the caller is expected to mask such rows via
    :func:`degenerate_rows`.
    """
    if strict:
        bad = degenerate_rows(b, beta)
        if np.any(bad):
            raise DegenerateBoxError(
                f"{int(np.count_nonzero(bad))} conditioning box(es) below the volume floor"
            )
    inter = intersect(a, b, beta)
    return ad.exp(log_expected_volume(inter, beta) - log_expected_volume(b, beta))


def mc_volume_oracle(
    box: GumbelBox, beta: float, n_samples: int, seed=0, return_stderr: bool = False, chunk: int = 200_000
):
    """Monte-Carlo estimate of E[Vol] by sampling Gumbel endpoints.

    ``box`` must be a single box.  Returns the sample mean, or
    ``(mean, standard_error)`` with ``return_stderr``.
    """
    if n_samples < 1:
        raise ConfigurationError("n_samples must be >= 1")
    lo = np.asarray(ad.value_of(box.lo), dtype=np.float64).reshape(-1)
    hi = np.asarray(ad.value_of(box.hi), dtype=np.float64).reshape(-1)
    rng = np.random.default_rng(seed)
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        u_lo = rng.random((n, lo.size))
        u_hi = rng.random((n, lo.size))
        x_lo = lo - beta * np.log(-np.log(u_lo))
        x_hi = hi + beta * np.log(-np.log(u_hi))
        vol = np.prod(np.maximum(0.0, x_hi - x_lo), axis=1)
        total += vol.sum()
        total_sq += np.square(vol).sum()
        done += n
    mean = total / n_samples
    var = max(total_sq / n_samples - mean * mean, 0.0)
    if return_stderr:
        return mean, float(np.sqrt(var / n_samples))
    return mean
