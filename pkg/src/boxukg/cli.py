"""Command-line entry points: ``python -m boxukg <command> ...``.

A run configuration is a JSON object::

    {
      "task": "confidence",            # or "ranking"; picks the preset
      "data": "path/to/dataset_dir",   # or {"train": ..., "val": ..., ...}
      "constraints": "rules.txt",      # a file, "cn15k"/"nl27k", or null
      "output": "runs",                # parent of the per-run directories
      "train": {"d": 64, "lr": 1e-4}   # TrainConfig overrides
    }

Relative paths are resolved against the config file's folder, except
``output``, which is relative to the working directory.  ``train`` writes a
``manifest.json`` into the run directory before fitting; passing that
manifest back to ``train`` repeats the run.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import difflib
import hashlib
import json
import logging
import sys
from pathlib import Path

from .checks import gradcheck, mccheck
from .constraints import ConstraintSet, bundled_constraints, load_constraints
from .data import Dataset, load_dataset
from .errors import BoxUKGError, CheckpointError, NameResolutionError, NumericFault
from .evaluation import (
    confidence_metrics,
    predict,
    rank_queries,
    rank_tails,
    volume_report,
    write_metrics,
    write_query_results,
    write_volume_report,
)
from .model import ParameterStore, load_checkpoint, names_path
from .training import TrainConfig, fit

logger = logging.getLogger("boxukg")

MANIFEST_VERSION = 1
SPLIT_FILES = {
    "train": "train.tsv",
    "val": "val.tsv",
    "test": "test.tsv",
    "entity_vocab": "entity_id.tsv",
    "relation_vocab": "relation_id.tsv",
}
TOY_CONFIG = Path(__file__).parent / "resources" / "toy" / "config.json"


# -- hashing and config resolution ---------------------------------------------


def blob_hash(path) -> str:
    """Git-style content hash: ``sha1(b"blob <len>\\0" + bytes)``."""
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _resolve_data(data, base: Path) -> dict:
    if isinstance(data, str):
        folder = (base / data).resolve()
        paths = {k: folder / f for k, f in SPLIT_FILES.items()}
        return {k: str(p) for k, p in paths.items() if k == "train" or p.exists()}
    if isinstance(data, dict):
        unknown = set(data) - set(SPLIT_FILES)
        if unknown:
            raise BoxUKGError(f"unknown data keys: {sorted(unknown)}")
        return {k: str((base / v).resolve()) for k, v in data.items() if v is not None}
    raise BoxUKGError("'data' must be a folder path or an object of split paths")


def _resolve_constraints(value, base: Path):
    if value is None:
        return None
    if value in ("cn15k", "nl27k"):
        return str(bundled_constraints(value))
    return str((base / value).resolve())


def resolve_run(config_path, overrides: dict | None = None) -> dict:
    """Turn a run config (or an earlier manifest) into a fully resolved run description."""
    config_path = Path(config_path)
    raw = json.loads(config_path.read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise BoxUKGError(f"{config_path}: config must be a JSON object")
    if "manifest_version" in raw:
        run = dict(raw["run"])
        _check_hashes(raw)
    else:
        base = config_path.parent
        unknown = set(raw) - {"task", "data", "constraints", "output", "train"}
        if unknown:
            raise BoxUKGError(f"{config_path}: unknown config keys {sorted(unknown)}")
        if "data" not in raw:
            raise BoxUKGError(f"{config_path}: missing 'data'")
        task = raw.get("task", "confidence")
        train = TrainConfig.for_task(task, **raw.get("train", {})).validate()
        run = {
            "task": task,
            "data": _resolve_data(raw["data"], base),
            "constraints": _resolve_constraints(raw.get("constraints"), base),
            "output": raw.get("output", "runs"),
            "train": train.to_dict(),
        }
    if overrides:
        train = dict(run["train"], **overrides)
        run["train"] = TrainConfig.from_dict(train).to_dict()
    return run


def _inputs(run: dict) -> dict:
    paths = dict(run["data"])
    if run.get("constraints"):
        paths["constraints"] = run["constraints"]
    return paths


def input_hashes(run: dict) -> dict:
    hashes = {}
    for key, path in _inputs(run).items():
        if not Path(path).exists():
            if key == "train":
                raise FileNotFoundError(f"split not found: {path}")
            raise FileNotFoundError(f"input not found: {path}")
        hashes[key] = blob_hash(path)
    return hashes


def _check_hashes(manifest: dict):
    for key, path in _inputs(manifest["run"]).items():
        if Path(path).exists() and blob_hash(path) != manifest["input_hashes"].get(key):
            logger.warning("input %s changed since the manifest was written: %s", key, path)


def run_id(run: dict, hashes: dict) -> str:
    canon = json.dumps({"run": run, "inputs": hashes}, sort_keys=True).encode()
    stamp = _dt.datetime.now().strftime("%Y%m%d-%H%M%S")
    return f"{stamp}-{hashlib.sha1(canon).hexdigest()[:10]}"


def load_run_dataset(run: dict) -> tuple[Dataset, ConstraintSet | None]:
    data = run["data"]
    dataset = load_dataset(
        data["train"], data.get("val"), data.get("test"), data.get("entity_vocab"), data.get("relation_vocab")
    )
    constraints = None
    if run.get("constraints"):
        constraints = load_constraints(run["constraints"], dataset.relation_names)
    return dataset, constraints


# -- name lookup -----------------------------------------------------------------


def resolve_name(name: str, names: list, kind: str) -> int:
    """Index of ``name``; a bare integer is accepted as an id."""
    try:
        return names.index(name)
    except ValueError:
        pass
    if name.isdigit() and int(name) < len(names):
        return int(name)
    near = difflib.get_close_matches(name, names, n=5, cutoff=0.5)
    hint = f"; nearest: {', '.join(near)}" if near else ""
    raise NameResolutionError(f"unknown {kind} {name!r}{hint}")


def _checkpoint(path) -> ParameterStore:
    if not Path(path).exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    return load_checkpoint(path)


def _match_vocabulary(store: ParameterStore, dataset: Dataset, check_names: bool):
    if (store.n_entities, store.n_relations) != (dataset.n_entities, dataset.n_relations):
        raise CheckpointError(
            f"checkpoint has {store.n_entities} entities / {store.n_relations} relations, "
            f"dataset has {dataset.n_entities} / {dataset.n_relations}"
        )
    if check_names and (
        store.entity_names != dataset.entity_names or store.relation_names != dataset.relation_names
    ):
        raise CheckpointError("checkpoint vocabulary does not match the dataset vocabulary")


# -- commands --------------------------------------------------------------------


def _parse_overrides(items) -> dict:
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise BoxUKGError(f"override {item!r} is not key=value")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def cmd_train(args) -> int:
    overrides = _parse_overrides(args.set)
    if args.seed is not None:
        overrides["seed"] = args.seed
    config = args.config or TOY_CONFIG
    run = resolve_run(config, overrides)
    hashes = input_hashes(run)
    if args.out:
        out = Path(args.out)
    else:
        out = Path(run["output"]) / run_id(run, hashes)
        while out.exists():
            out = out.with_name(out.name + "_")
    out.mkdir(parents=True, exist_ok=True)
    train_cfg = TrainConfig.from_dict(run["train"])
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "run": run,
        "seed": train_cfg.seed,
        "input_hashes": hashes,
        "output_dir": str(out.resolve()),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    dataset, constraints = load_run_dataset(run)
    result = fit(
        dataset, train_cfg, constraints,
        checkpoint_path=out / "model.bxkg",
        log_path=out / "train_log.csv",
    )
    print(f"run directory: {out}")
    print(f"best epoch {result.best_epoch} of {result.epochs_run}, {train_cfg.val_metric} = {result.best_metric:.6g}")
    if result.aborted_steps:
        print(f"aborted steps: {result.aborted_steps}")
    return 0


def cmd_eval(args) -> int:
    store = _checkpoint(args.checkpoint)
    run = resolve_run(args.config or TOY_CONFIG) if not args.data else {
        "data": _resolve_data(args.data, Path.cwd()), "constraints": None,
    }
    dataset, _ = load_run_dataset(run)
    _match_vocabulary(store, dataset, names_path(args.checkpoint).exists())
    split = dataset.split(args.split)
    if len(split) == 0:
        raise BoxUKGError(f"split {args.split!r} is empty")
    out = Path(args.out) if args.out else Path(args.checkpoint).parent
    out.mkdir(parents=True, exist_ok=True)
    if args.task == "confidence":
        mse, mae = confidence_metrics(split, store)
        metrics = {"mse": mse, "mae": mae}
    else:
        relevance = dataset.all_triples() if args.relevance == "all" else None
        res = rank_queries(split, store, relevance=relevance, threads=args.threads)
        metrics = {"ndcg_linear": res.mean_linear, "ndcg_exponential": res.mean_exponential,
                   "queries": len(res.queries), "skipped": res.skipped}
        write_query_results(res, out / f"{args.task}_{args.split}_queries.csv",
                            store.entity_names, store.relation_names)
    write_metrics(metrics, out / f"{args.task}_{args.split}_metrics.csv")
    for k, v in metrics.items():
        print(f"{k}\t{v:.6g}" if isinstance(v, float) else f"{k}\t{v}")
    return 0


def cmd_predict(args) -> int:
    store = _checkpoint(args.checkpoint)
    h = resolve_name(args.head, store.entity_names, "entity")
    r = resolve_name(args.relation, store.relation_names, "relation")
    t = resolve_name(args.tail, store.entity_names, "entity")
    phi, _ = predict(store, [h], [r], [t])
    print(f"{float(phi[0]):.6f}")
    return 0


def cmd_rank(args) -> int:
    store = _checkpoint(args.checkpoint)
    h = resolve_name(args.head, store.entity_names, "entity")
    r = resolve_name(args.relation, store.relation_names, "relation")
    order, scores = rank_tails(store, h, r)
    k = min(args.k, store.n_entities)
    for i in range(k):
        print(f"{i + 1}\t{store.entity_names[order[i]]}\t{scores[i]:.6f}")
    return 0


def cmd_inspect(args) -> int:
    store = _checkpoint(args.checkpoint)
    r = resolve_name(args.relation, store.relation_names, "relation")
    report = volume_report(store, r, top_k=args.k, threshold=args.threshold)
    print("rank\tentity\tcoverage\tvolume")
    for i, row in enumerate(report.top, 1):
        print(f"{i}\t{row.name}\t{row.coverage}\t{row.volume:.4g}")
    if args.out:
        write_volume_report(report.rows, args.out)
    return 0


def cmd_gradcheck(args) -> int:
    worst = 0.0
    for seed in range(args.seed, args.seed + args.seeds):
        res = gradcheck(seed, eps=args.eps)
        worst = max(worst, res.max_rel_error)
        if args.verbose:
            print(f"seed {seed}\t{res.max_rel_error:.3e}")
    ok = worst < args.tol
    print(f"gradcheck: {args.seeds} seeds, max relative error {worst:.3e} ({'PASS' if ok else 'FAIL'} < {args.tol:g})")
    return 0 if ok else 1


def cmd_mccheck(args) -> int:
    worst = 0.0
    for seed in range(args.seed, args.seed + args.boxes):
        res = mccheck(seed, n_samples=args.samples)
        worst = max(worst, res.rel_error)
        if args.verbose:
            print(f"seed {seed}\td={res.d}\tbeta={res.beta:g}\t{res.approx:.6g}\t{res.monte_carlo:.6g}\t{res.rel_error:.2e}")
    ok = worst < args.tol
    print(f"mccheck: {args.boxes} boxes, max relative error {worst:.3e} ({'PASS' if ok else 'FAIL'} < {args.tol:g})")
    return 0 if ok else 1


# -- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="boxukg", description=__doc__.split("\n\n")[0])
    p.add_argument("--threads", type=int, default=1, help="cap on worker threads (ranking evaluation)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="fit a model from a run config or manifest")
    t.add_argument("config", nargs="?", help="run config or manifest.json (default: bundled toy fixture)")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="exact run directory (default: <output>/<timestamp>-<hash>)")
    t.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a training option")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="confidence or ranking metrics of a checkpoint")
    e.add_argument("checkpoint")
    e.add_argument("--config", help="run config or manifest naming the dataset (default: toy fixture)")
    e.add_argument("--data", help="dataset folder, instead of --config")
    e.add_argument("--task", choices=("confidence", "ranking"), default="confidence")
    e.add_argument("--split", choices=("train", "val", "test"), default="test")
    e.add_argument("--relevance", choices=("split", "all"), default="split",
                   help="ranking gains from the evaluated split only, or from every split")
    e.add_argument("--out", help="folder for the metric CSVs (default: the checkpoint's folder)")
    e.set_defaults(func=cmd_eval)

    pr = sub.add_parser("predict", help="confidence of one triple")
    pr.add_argument("checkpoint")
    pr.add_argument("head")
    pr.add_argument("relation")
    pr.add_argument("tail")
    pr.set_defaults(func=cmd_predict)

    rk = sub.add_parser("rank", help="top-k tails for (head, relation)")
    rk.add_argument("checkpoint")
    rk.add_argument("head")
    rk.add_argument("relation")
    rk.add_argument("-k", type=int, default=10)
    rk.set_defaults(func=cmd_rank)

    ins = sub.add_parser("inspect", help="entities whose tail boxes cover the most others")
    ins.add_argument("checkpoint")
    ins.add_argument("relation")
    ins.add_argument("-k", type=int, default=10)
    ins.add_argument("--threshold", type=float, default=0.9)
    ins.add_argument("--out", help="write every entity and its coverage as TSV")
    ins.set_defaults(func=cmd_inspect)

    g = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    g.add_argument("--seeds", type=int, default=100)
    g.add_argument("--seed", type=int, default=0, help="first seed")
    g.add_argument("--eps", type=float, default=1e-5)
    g.add_argument("--tol", type=float, default=1e-4)
    g.set_defaults(func=cmd_gradcheck)

    m = sub.add_parser("mccheck", help="expected volume against Monte-Carlo sampling")
    m.add_argument("--boxes", type=int, default=100)
    m.add_argument("--seed", type=int, default=0, help="first seed")
    m.add_argument("--samples", type=int, default=1_000_000)
    m.add_argument("--tol", type=float, default=0.02)
    m.set_defaults(func=cmd_mccheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return args.func(args)
    except NumericFault as exc:
        print(f"error: numeric fault: {exc}", file=sys.stderr)
        return 1
    except (BoxUKGError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
