"""Stage-by-stage command line: synth, embed, smooth, train, eval, knn, report.

Every stage reads and writes files in one output directory (``--out``,
default ``$PLACEDEDUP_OUT`` or ``./pd_out``). Options may also come from a
flat ``key = value`` file passed with ``--config``; flags on the command line
win over the file.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .evaluation import KnnIndex, evaluate, knn_exact
from .graph import SmoothingConfig, build_network, train_smoothing
from .metric import TrainConfig, load_checkpoint, save_checkpoint, train
from .pipeline import PRESETS, FeatureConfig, build_text_features, config_hash
from .places import (
    CATEGORY_CATALOGUE,
    DataError,
    build_eval_sets,
    load_labels,
    load_places,
    write_ground_truth,
    write_labels,
    write_places,
)
from .synthetic import SyntheticConfig, generate_synthetic, golden_labels
from .text import save_table
from .vectors import FormatError, read_vectors, write_vectors

log = logging.getLogger("placededup")

ENV_OUT = "PLACEDEDUP_OUT"
FILES = {
    "places": "places.jsonl",
    "labels": "labels.tsv",
    "truth": "ground_truth.tsv",
    "golden": "golden.tsv",
    "name_table": "name_vectors.txt",
    "address_table": "address_vectors.txt",
    "features": "features.txt",
    "smoothed": "smoothed.txt",
    "model": "model.ckpt",
    "report": "report.json",
    "curves": "report.tsv",
}


class StageError(Exception):
    """A required input is missing or unusable; maps to exit code 2."""


def _out(args) -> Path:
    return Path(args.out)


def _input(args, option: str, default_key: str, stage: str) -> Path:
    """Explicit path if given, else the conventional file in the output dir."""
    given = getattr(args, option, None)
    path = Path(given) if given else _out(args) / FILES[default_key]
    if not path.exists():
        raise StageError(f"missing {default_key.replace('_', ' ')} at {path}; run `{stage}` first")
    return path


def _stage_meta(args, stage: str, outputs: list[Path], resolved: dict) -> str:
    """Log and write ``<stage>.meta.json`` holding the resolved config, its hash and the seed."""
    digest = config_hash(resolved)
    log.info("%s: config hash %s, seed %d", stage, digest, args.seed)
    meta = {"stage": stage, "config_hash": digest, "seed": args.seed, "config": resolved,
            "outputs": [p.name for p in outputs]}
    path = _out(args) / f"{stage}.meta.json"
    path.write_text(json.dumps(meta, indent=1, sort_keys=True, default=list) + "\n", encoding="utf-8")
    return digest


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _read_features(path: Path, stage: str) -> tuple[list[str], np.ndarray]:
    try:
        return read_vectors(path)
    except FormatError as exc:
        raise StageError(f"unreadable {stage} output {path}: {exc}") from None


# ------------------------------------------------------------------ stages


def cmd_synth(args) -> int:
    cfg = SyntheticConfig(
        n_true_places=args.true_places,
        dup_rate=args.dup_rate,
        n_sources=len(args.flip_rates),
        flip_rates=args.flip_rates,
        seed=args.seed,
    )
    places, labels, truth = generate_synthetic(cfg)
    golden = golden_labels(places, truth, cfg)
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / FILES[k] for k in ("places", "labels", "truth", "golden")]
    write_places(places, paths[0])
    write_labels(labels, paths[1])
    write_ground_truth(truth, paths[2])
    write_labels(golden, paths[3])
    _stage_meta(args, "synth", paths, asdict(cfg))
    log.info("synth: %d pages, %d training labels, %d golden labels", len(places), len(labels), len(golden))
    return 0


def cmd_embed(args) -> int:
    places = load_places(_input(args, "places", "places", "synth"))
    gazetteer = FeatureConfig().gazetteer
    if args.gazetteer:
        lines = Path(args.gazetteer).read_text(encoding="utf-8").splitlines()
        gazetteer = tuple(sorted({ln.strip() for ln in lines if ln.strip() and not ln.startswith("#")}))
    cfg = FeatureConfig(
        name_dim=args.name_dim, address_dim=args.address_dim, name_subword=args.subword,
        min_count=args.min_count, n_buckets=args.buckets, epochs=args.epochs, k_neg=args.k_neg,
        lr=args.lr, seed=args.seed, gazetteer=gazetteer,
    )
    tf = build_text_features(places, cfg, workers=args.workers)
    if tf.empty_names:
        log.warning("embed: %d places have no usable name tokens; their name block is zero", tf.empty_names)
    out = _out(args)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / FILES["name_table"], out / FILES["features"]]
    save_table(tf.name_table, written[0])
    if tf.address_table is not None:
        written.append(out / FILES["address_table"])
        save_table(tf.address_table, written[-1])
    write_vectors(written[1], tf.ids, tf.X)
    _stage_meta(args, "embed", written, asdict(cfg))
    return 0


def cmd_smooth(args) -> int:
    places = load_places(_input(args, "places", "places", "synth"))
    ids, X0 = _read_features(_input(args, "features", "features", "embed"), "embed")
    if sorted(ids) != sorted(p.id for p in places):
        raise StageError("feature file and places file describe different place ids; re-run `embed`")
    row = {pid: i for i, pid in enumerate(ids)}
    X0 = X0[[row[p.id] for p in places]]
    cfg = SmoothingConfig(k_neg=args.k_neg, lr=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                          seed=args.seed, workers=args.workers)
    network = build_network(places, args.bin_size, CATEGORY_CATALOGUE)
    log.info("smooth: %d coordinate edges, %d category edges", network.n_coordinate_edges, network.n_category_edges)
    _, X = train_smoothing(X0, network, cfg)
    path = _out(args) / FILES["smoothed"]
    write_vectors(path, [p.id for p in places], X)
    _stage_meta(args, "smooth", [path], {**asdict(cfg), "bin_size": args.bin_size})
    return 0


def train_config(args) -> TrainConfig:
    """Preset values first, then any switch or number given explicitly.

    Without ``--preset``, switches that spell out a preset (say ``--hard
    --attention --denoise``) pick up that preset's optimisation settings.
    """
    if args.preset:
        fields = dict(PRESETS[args.preset])
    else:
        switches = {"loss": args.loss or "pairwise", "distance": args.distance or "euclidean",
                    "hard": bool(args.hard), "attention": bool(args.attention), "denoise": bool(args.denoise)}
        match = [p for p in PRESETS.values() if all(p[k] == v for k, v in switches.items())]
        fields = dict(match[0]) if match else {}
    for name in ("loss", "distance", "hard", "attention", "denoise", "beta", "rho", "lr", "epochs",
                 "batch_size", "alpha", "momentum", "clip_norm", "hidden", "key_dim", "value_dim"):
        value = getattr(args, name)
        if value is not None:
            fields[name] = value
    if args.clusters is not None:
        fields["n_clusters"] = args.clusters
    return TrainConfig(seed=args.seed, **fields)


def cmd_train(args) -> int:
    ids, X = _read_features(_input(args, "features", "smoothed", "smooth"), "smooth")
    labels = load_labels(_input(args, "labels", "labels", "synth"), ids)
    cfg = train_config(args)
    path = _out(args) / FILES["model"]
    digest = _stage_meta(args, "train", [path], asdict(cfg))
    log.info("train: %d labeled pairs over %d places", len(labels), len(ids))
    result = train(ids, X, labels, cfg)
    save_checkpoint(result.model, path, result.denoising,
                    meta={"config": asdict(cfg), "config_hash": digest, "seed": cfg.seed})
    return 0


def _embeddings(args, stage: str):
    ids, X = _read_features(_input(args, "features", "smoothed", "smooth"), "smooth")
    if args.raw:
        return ids, X, None
    model, _, header = load_checkpoint(_input(args, "model", "model", "train"))
    return ids, model.embed(X), header["meta"].get("config_hash")


def cmd_eval(args) -> int:
    ids, U, model_hash = _embeddings(args, "eval")
    golden = load_labels(_input(args, "eval_labels", "golden", "synth"), ids)
    index = KnnIndex(ids, U)
    report = evaluate(index, build_eval_sets(golden), args.k_max)
    out = _out(args)
    digest = _stage_meta(args, "eval", [out / FILES["report"], out / FILES["curves"]],
                         {"k_max": args.k_max, "raw": args.raw})
    report.to_json(out / FILES["report"], extra={"config_hash": digest, "model_config_hash": model_hash,
                                                  "embedding": "raw" if args.raw else "model"})
    report.to_tsv(out / FILES["curves"])
    log.info("eval: ACC %.4f avg PRE %.4f avg REC %.4f", report.acc, report.avg_pre, report.avg_rec)
    return 0


def cmd_knn(args) -> int:
    ids, U, _ = _embeddings(args, "knn")
    index = KnnIndex(ids, U)
    try:
        hits = knn_exact(index, args.query, args.k)
    except KeyError as exc:
        raise StageError(str(exc.args[0])) from None
    q = index.vector(args.query)
    for rank, pid in enumerate(hits, start=1):
        print(f"{rank}\t{pid}\t{float(np.sum((index.vector(pid) - q) ** 2))!r}")
    return 0


def cmd_report(args) -> int:
    paths = [Path(p) for p in args.reports] if args.reports else [_out(args) / FILES["report"]]
    print("report\tACC\tavg_PRE\tavg_REC\tprobes_acc\tprobes_knn")
    for path in paths:
        if not path.exists():
            raise StageError(f"missing report at {path}; run `eval` first")
        data = json.loads(path.read_text(encoding="utf-8"))
        print(f"{path}\t{data['acc']:.4f}\t{data['avg_pre']:.4f}\t{data['avg_rec']:.4f}\t"
              f"{data['n_probes_acc']}\t{data['n_probes_knn']}")
    return 0


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=os.environ.get(ENV_OUT, "pd_out"),
                        help=f"artifact directory (default: ${ENV_OUT} or ./pd_out)")
    common.add_argument("--config", help="flat key=value file; command-line flags take precedence")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="placededup", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic dataset with ground truth")
    p.add_argument("--true-places", type=int, default=2000)
    p.add_argument("--dup-rate", type=float, default=1.5)
    p.add_argument("--flip-rates", type=_float_list, default=(0.05, 0.15, 0.30),
                   help="one label flip rate per source, comma-separated")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("embed", parents=[common], help="train name/address embeddings and write place features")
    p.add_argument("--places")
    p.add_argument("--gazetteer", help="file with one location phrase per line")
    p.add_argument("--name-dim", type=int, default=50)
    p.add_argument("--address-dim", type=int, default=50)
    p.add_argument("--subword", action=argparse.BooleanOptionalAction, default=True)
    p.add_argument("--min-count", type=int, default=1)
    p.add_argument("--buckets", type=int, default=2**15)
    p.add_argument("--epochs", type=int, default=5)
    p.add_argument("--k-neg", type=int, default=5)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--workers", type=int, default=1, help=">1 trades determinism for lock-free threads")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("smooth", parents=[common], help="smooth features over the place network")
    p.add_argument("--places")
    p.add_argument("--features")
    p.add_argument("--bin-size", type=float, default=0.01)
    p.add_argument("--epochs", type=int, default=SmoothingConfig.epochs)
    p.add_argument("--k-neg", type=int, default=SmoothingConfig.k_neg)
    p.add_argument("--lr", type=float, default=SmoothingConfig.lr)
    p.add_argument("--batch-size", type=int, default=SmoothingConfig.batch_size)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("train", parents=[common], help="fit the metric model on labeled pairs")
    p.add_argument("--features")
    p.add_argument("--labels")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--loss", choices=["pairwise", "triplet"])
    p.add_argument("--distance", choices=["euclidean", "cosine", "bilinear"])
    for flag in ("hard", "attention", "denoise"):
        p.add_argument(f"--{flag}", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--beta", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--clusters", type=int, help="denoising cluster count (default: sqrt of place count)")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--alpha", type=float)
    p.add_argument("--momentum", type=float)
    p.add_argument("--clip-norm", type=float)
    p.add_argument("--hidden", type=_int_list)
    p.add_argument("--key-dim", type=int)
    p.add_argument("--value-dim", type=int)
    p.set_defaults(func=cmd_train)

    for name, func, text in (("eval", cmd_eval, "ACC and PRE/REC@K on evaluation labels"),
                             ("knn", cmd_knn, "nearest neighbors of one place")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--features")
        p.add_argument("--model")
        p.add_argument("--raw", action="store_true", help="use the feature vectors without the metric model")
        p.set_defaults(func=func)
    sub.choices["eval"].add_argument("--eval-labels")
    sub.choices["eval"].add_argument("--k-max", type=int, default=100)
    sub.choices["knn"].add_argument("--query", required=True)
    sub.choices["knn"].add_argument("-k", type=int, default=10)

    p = sub.add_parser("report", parents=[common], help="tabulate one or more report.json files")
    p.add_argument("reports", nargs="*")
    p.set_defaults(func=cmd_report)
    return parser


def read_config_file(path) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment line."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key.replace("-", "_")] = value
    return values


def _apply_config(parser: argparse.ArgumentParser, sub: argparse.ArgumentParser, values: dict[str, str]) -> None:
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    known = {a.dest for p in parser._subparsers._group_actions[0].choices.values() for a in p._actions}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    defaults = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None:
            continue  # belongs to another stage
        if action.nargs == 0 or isinstance(action, argparse.BooleanOptionalAction):
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(f"config key {key!r} expects true/false, got {raw!r}")
            defaults[key] = low in ("true", "1", "yes")
        elif action.type is not None:
            try:
                defaults[key] = action.type(raw)
            except (ValueError, argparse.ArgumentTypeError) as exc:
                raise ValueError(f"config key {key!r}: {exc}") from None
        else:
            if action.choices is not None and raw not in action.choices:
                raise ValueError(f"config key {key!r} must be one of {sorted(action.choices)}")
            defaults[key] = raw
    sub.set_defaults(**defaults)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("command", nargs="?")
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if known.config:
        subparsers = parser._subparsers._group_actions[0].choices
        if known.command not in subparsers:
            parser.error("a subcommand must be given with --config")
        try:
            _apply_config(parser, subparsers[known.command], read_config_file(known.config))
        except (OSError, ValueError) as exc:
            print(f"placededup: error: {exc}", file=sys.stderr)
            return 2
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except (StageError, DataError, FormatError, ValueError, OSError) as exc:
        print(f"placededup: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
