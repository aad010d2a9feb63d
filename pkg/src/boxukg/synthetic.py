"""Small synthetic UKGs with known structure, for sanity runs and demos."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .constraints import ConstraintSet
from .data import Dataset, Triples, write_split, write_vocabulary
from .model import ParameterStore, triple_scores

PLANTED_STREAM = 0x5EED


def planted_store(n_entities: int, n_relations: int, d: int, beta: float, rng) -> ParameterStore:
    """A ground-truth box model with varied box sizes and non-trivial transforms."""
    arrays = {
        "ent_cen": rng.uniform(0.0, 1.0, (n_entities, d)),
        "ent_log_off": np.log(rng.uniform(0.02, 0.1, (n_entities, d))),
        "head_tau": rng.normal(0.0, 0.05, (n_relations, d)),
        "head_delta": rng.normal(0.7, 0.2, (n_relations, d)),
        "tail_tau": rng.normal(0.0, 0.05, (n_relations, d)),
        "tail_delta": rng.normal(0.0, 0.2, (n_relations, d)),
    }
    return ParameterStore(arrays, beta)


@dataclass
class PlantedUKG:
    dataset: Dataset
    truth: ParameterStore


def planted_ukg(
    n_entities: int = 50,
    n_relations: int = 2,
    n_triples: int = 500,
    d: int = 2,
    beta: float = 0.01,
    split=(1.0, 0.0, 0.0),
    seed: int = 0,
) -> PlantedUKG:
    """Triples whose confidences are scores of a planted box model.

    The ``n_triples`` highest-scoring ``(h, r, t)`` become the facts, so
    every unobserved pair scores below every observed one in the planted
    model.  Facts are split into train/val/test by the ``split`` fractions.
    """
    # a stream of its own, so no training seed can start from the planted boxes
    rng = np.random.default_rng([seed, PLANTED_STREAM])
    truth = planted_store(n_entities, n_relations, d, beta, rng)
    h, r, t = (x.ravel() for x in np.meshgrid(
        np.arange(n_entities), np.arange(n_relations), np.arange(n_entities), indexing="ij"
    ))
    phi = np.clip(triple_scores(truth.arrays, h, r, t, beta), 0.0, 1.0)
    if n_triples > phi.size:
        raise ValueError(f"cannot draw {n_triples} facts from {phi.size} pairs")
    pick = np.sort(np.argsort(-phi, kind="stable")[:n_triples])
    facts = Triples(h[pick], r[pick], t[pick], np.round(phi[pick], 6))
    train, val, test = _split(facts, split, rng)
    dataset = Dataset(
        train, val, test,
        entity_names=[f"e{i}" for i in range(n_entities)],
        relation_names=[f"r{i}" for i in range(n_relations)],
    )
    return PlantedUKG(dataset, truth)


def _split(facts: Triples, fractions, rng):
    order = rng.permutation(len(facts))
    n_train = int(round(fractions[0] * len(facts)))
    n_val = int(round(fractions[1] * len(facts)))
    return (
        facts.subset(np.sort(order[:n_train])),
        facts.subset(np.sort(order[n_train : n_train + n_val])),
        facts.subset(np.sort(order[n_train + n_val :])),
    )


@dataclass
class RuleDataset:
    dataset: Dataset
    constraints: ConstraintSet
    held_out: Triples


def transitive_chain(length: int = 12, n_chains: int = 3, n_distractors: int = 10) -> RuleDataset:
    """Chains ``A_0 -> A_1 -> ...`` under one relation, observed with confidence 1.

    The two-hop pairs ``(A_i, r, A_{i+2})`` are held out and returned
    separately; the relation is declared transitive.
    """
    names, train, held = [], [], []
    for c in range(n_chains):
        base = len(names)
        names.extend(f"c{c}_{i}" for i in range(length))
        train += [(base + i, 0, base + i + 1, 1.0) for i in range(length - 1)]
        held += [(base + i, 0, base + i + 2, 1.0) for i in range(length - 2)]
    names.extend(f"x{i}" for i in range(n_distractors))
    dataset = Dataset(Triples.from_list(train), Triples.empty(), Triples.from_list(held), names, ["r"])
    return RuleDataset(dataset, ConstraintSet(transitive=(0,)), Triples.from_list(held))


def composition_groups(n_groups: int = 30, observed_fraction: float = 0.5, n_distractors: int = 10, seed: int = 0) -> RuleDataset:
    """Groups ``(X_i, r1, Y_i)``, ``(Y_i, r2, Z_i)`` plus some ``(X_i, r3, Z_i)``.

    ``r3 = r1 then r2`` is declared as a composition; the unobserved
    ``(X_i, r3, Z_i)`` facts are held out.
    """
    rng = np.random.default_rng(seed)
    names = []
    train, held = [], []
    observed = rng.random(n_groups) < observed_fraction
    for i in range(n_groups):
        x, y, z = len(names), len(names) + 1, len(names) + 2
        names += [f"x{i}", f"y{i}", f"z{i}"]
        train += [(x, 0, y, 1.0), (y, 1, z, 1.0)]
        (train if observed[i] else held).append((x, 2, z, 1.0))
    names.extend(f"n{i}" for i in range(n_distractors))
    dataset = Dataset(
        Triples.from_list(train), Triples.empty(), Triples.from_list(held), names, ["r1", "r2", "r3"]
    )
    return RuleDataset(dataset, ConstraintSet(compositions=((0, 1, 2),)), Triples.from_list(held))


def write_dataset(dataset: Dataset, directory) -> Path:
    """Write the splits and id files in the layout ``load_dataset_dir`` reads."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_split(dataset.train, directory / "train.tsv")
    write_split(dataset.val, directory / "val.tsv")
    write_split(dataset.test, directory / "test.tsv")
    write_vocabulary(dataset.entity_names, directory / "entity_id.tsv")
    write_vocabulary(dataset.relation_names, directory / "relation_id.tsv")
    return directory
