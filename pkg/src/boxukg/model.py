"""Entity boxes, relation transforms, the triple score and checkpoints."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError, ConfigurationError, IdLookupError
from .geometry import GumbelBox, conditional_prob

PARAM_NAMES = ("ent_cen", "ent_log_off", "head_tau", "head_delta", "tail_tau", "tail_delta")
ENTITY_PARAMS = PARAM_NAMES[:2]
RELATION_PARAMS = PARAM_NAMES[2:]

CHECKPOINT_MAGIC = b"BXKG"
CHECKPOINT_VERSION = 1
_HEADER = struct.Struct("<4sIIIId")


@dataclass(frozen=True)
class BoxTransform:
    """Translation ``tau`` and log-scaling ``delta``; the scaling is ``exp(delta)``."""

    tau: object
    delta: object

    @classmethod
    def identity(cls, d: int) -> "BoxTransform":
        return cls(np.zeros(d), np.zeros(d))

    @property
    def scale(self):
        return ad.exp(self.delta)

    def inverse(self) -> "BoxTransform":
        return BoxTransform(-self.tau, -self.delta)


def _check_transform(t: BoxTransform, b: GumbelBox):
    st, sb = ad.value_of(t.tau).shape, ad.value_of(b.cen).shape
    if st != sb:
        raise ConfigurationError(f"transform shape {st} does not match box shape {sb}")


def apply_transform(t: BoxTransform, b: GumbelBox) -> GumbelBox:
    """Shift the centre by ``tau`` and scale the offset by ``exp(delta)``."""
    _check_transform(t, b)
    return GumbelBox(b.cen + t.tau, b.off * ad.exp(t.delta))


def compose(t1: BoxTransform, t2: BoxTransform) -> BoxTransform:
    """The transform equal to applying ``t1`` and then ``t2``."""
    s1, s2 = ad.value_of(t1.tau).shape, ad.value_of(t2.tau).shape
    if s1 != s2:
        raise ConfigurationError(f"transform shapes differ: {s1} vs {s2}")
    return BoxTransform(t1.tau + t2.tau, t1.delta + t2.delta)


class ParameterStore:
    """All trainable arrays of a model plus the global temperature.

    Entities carry ``ent_cen`` and ``ent_log_off``; each relation carries a
    head transform (``head_tau``, ``head_delta``) and a tail transform
    (``tail_tau``, ``tail_delta``).  Every array is ``(count, d)`` float64.
    """

    def __init__(self, arrays: dict, beta: float, entity_names=None, relation_names=None):
        missing = set(PARAM_NAMES) - set(arrays)
        if missing:
            raise ConfigurationError(f"missing parameter arrays: {sorted(missing)}")
        if not beta > 0:
            raise ConfigurationError("beta must be positive")
        self.arrays = {k: np.ascontiguousarray(arrays[k], dtype=np.float64) for k in PARAM_NAMES}
        self.beta = float(beta)
        n_e, d = self.arrays["ent_cen"].shape
        n_r = self.arrays["head_tau"].shape[0]
        for k in ENTITY_PARAMS:
            if self.arrays[k].shape != (n_e, d):
                raise ConfigurationError(f"{k} has shape {self.arrays[k].shape}, expected {(n_e, d)}")
        for k in RELATION_PARAMS:
            if self.arrays[k].shape != (n_r, d):
                raise ConfigurationError(f"{k} has shape {self.arrays[k].shape}, expected {(n_r, d)}")
        self.entity_names = list(entity_names) if entity_names is not None else [str(i) for i in range(n_e)]
        self.relation_names = (
            list(relation_names) if relation_names is not None else [str(i) for i in range(n_r)]
        )
        if len(self.entity_names) != n_e or len(self.relation_names) != n_r:
            raise ConfigurationError("name lists do not match parameter counts")

    @property
    def d(self) -> int:
        return self.arrays["ent_cen"].shape[1]

    @property
    def n_entities(self) -> int:
        return self.arrays["ent_cen"].shape[0]

    @property
    def n_relations(self) -> int:
        return self.arrays["head_tau"].shape[0]

    def copy(self) -> "ParameterStore":
        return ParameterStore(
            {k: v.copy() for k, v in self.arrays.items()}, self.beta, self.entity_names, self.relation_names
        )

    def bind(self, tape: ad.Tape) -> dict:
        """Variables on ``tape`` holding copies of every parameter array."""
        return {k: tape.variable(v) for k, v in self.arrays.items()}

    def check_entities(self, ids):
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_entities):
            raise IdLookupError(f"entity id out of range [0, {self.n_entities})")

    def check_relations(self, ids):
        ids = np.asarray(ids)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_relations):
            raise IdLookupError(f"relation id out of range [0, {self.n_relations})")

    def entity_box(self, ids) -> GumbelBox:
        self.check_entities(ids)
        return entity_boxes(self.arrays, ids)

    def head_transform(self, r) -> BoxTransform:
        self.check_relations(r)
        return head_transforms(self.arrays, r)

    def tail_transform(self, r) -> BoxTransform:
        self.check_relations(r)
        return tail_transforms(self.arrays, r)

    def equals(self, other: "ParameterStore") -> bool:
        """Bit-for-bit equality of all arrays and the temperature."""
        return self.beta == other.beta and all(
            np.array_equal(self.arrays[k], other.arrays[k]) for k in PARAM_NAMES
        )


# -- row gathers over a parameter mapping (arrays or tape variables) --------


def entity_boxes(params: dict, ids) -> GumbelBox:
    return GumbelBox(ad.take(params["ent_cen"], ids), ad.exp(ad.take(params["ent_log_off"], ids)))


def head_transforms(params: dict, r) -> BoxTransform:
    return BoxTransform(ad.take(params["head_tau"], r), ad.take(params["head_delta"], r))


def tail_transforms(params: dict, r) -> BoxTransform:
    return BoxTransform(ad.take(params["tail_tau"], r), ad.take(params["tail_delta"], r))


def transformed_pair(params: dict, h, r, t):
    """``(f_r(box(h)), g_r(box(t)))`` for aligned id arrays."""
    head = apply_transform(head_transforms(params, r), entity_boxes(params, h))
    tail = apply_transform(tail_transforms(params, r), entity_boxes(params, t))
    return head, tail


def triple_scores(params: dict, h, r, t, beta: float, strict: bool = True):
    head, tail = transformed_pair(params, h, r, t)
    return conditional_prob(head, tail, beta, strict=strict)


def score_triple(store: ParameterStore, h, r, t):
    """Confidence P(f_r(h) | g_r(t)) for one triple or aligned id arrays."""
    h, r, t = np.asarray(h), np.asarray(r), np.asarray(t)
    store.check_entities(h)
    store.check_entities(t)
    store.check_relations(r)
    scalar = h.ndim == 0 and r.ndim == 0 and t.ndim == 0
    h, r, t = np.broadcast_arrays(np.atleast_1d(h), np.atleast_1d(r), np.atleast_1d(t))
    phi = triple_scores(store.arrays, h, r, t, store.beta)
    return float(phi[0]) if scalar else phi


def init_parameters(n_entities: int, n_relations: int, d: int, seed=0, beta: float = 0.01, **names) -> ParameterStore:
    """Fresh store: unit-cube centres, offsets near 0.2, near-identity transforms."""
    if n_entities < 1 or n_relations < 1 or d < 1:
        raise ConfigurationError("counts and dimension must be >= 1")
    rng = np.random.default_rng(seed)
    arrays = {
        "ent_cen": rng.uniform(0.0, 1.0, (n_entities, d)),
        "ent_log_off": np.log(0.2) + rng.normal(0.0, 0.01, (n_entities, d)),
        "head_tau": rng.normal(0.0, 1e-3, (n_relations, d)),
        "head_delta": np.zeros((n_relations, d)),
        "tail_tau": rng.normal(0.0, 1e-3, (n_relations, d)),
        "tail_delta": np.zeros((n_relations, d)),
    }
    return ParameterStore(arrays, beta, names.get("entity_names"), names.get("relation_names"))


# -- checkpoints --------------------------------------------------------------


def names_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".names.tsv")


def save_checkpoint(store: ParameterStore, path) -> Path:
    """Write the binary checkpoint and its ``.names.tsv`` sidecar."""
    path = Path(path)
    header = _HEADER.pack(
        CHECKPOINT_MAGIC, CHECKPOINT_VERSION, store.d, store.n_entities, store.n_relations, store.beta
    )
    with open(path, "wb") as fh:
        fh.write(header)
        for k in PARAM_NAMES:
            fh.write(store.arrays[k].astype("<f8").tobytes())
    with open(names_path(path), "w", encoding="utf-8") as fh:
        for i, name in enumerate(store.entity_names):
            fh.write(f"entity\t{i}\t{name}\n")
        for i, name in enumerate(store.relation_names):
            fh.write(f"relation\t{i}\t{name}\n")
    return path


def _read_names(path: Path, n_e: int, n_r: int):
    sidecar = names_path(path)
    if not sidecar.exists():
        return None, None
    ents, rels = [None] * n_e, [None] * n_r
    with open(sidecar, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            kind, idx, name = line.split("\t", 2)
            table = ents if kind == "entity" else rels if kind == "relation" else None
            if table is None or not (0 <= int(idx) < len(table)):
                raise CheckpointError(f"{sidecar}:{lineno}: bad sidecar entry")
            table[int(idx)] = name
    if any(n is None for n in ents) or any(n is None for n in rels):
        raise CheckpointError(f"{sidecar}: incomplete name table")
    return ents, rels


def load_checkpoint(path) -> ParameterStore:
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < _HEADER.size or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad checkpoint: {path} does not start with {CHECKPOINT_MAGIC!r}")
    _, version, d, n_e, n_r, beta = _HEADER.unpack_from(blob)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"bad checkpoint: unsupported format version {version}")
    sizes = [n_e * d] * 2 + [n_r * d] * 4
    if len(blob) != _HEADER.size + 8 * sum(sizes):
        raise CheckpointError(f"bad checkpoint: {path} has wrong length for its header")
    arrays = {}
    offset = _HEADER.size
    for k, size in zip(PARAM_NAMES, sizes):
        rows = n_e if k in ENTITY_PARAMS else n_r
        arrays[k] = np.frombuffer(blob, dtype="<f8", count=size, offset=offset).reshape(rows, d).astype(np.float64)
        offset += 8 * size
    ents, rels = _read_names(path, n_e, n_r)
    return ParameterStore(arrays, beta, ents, rels)
