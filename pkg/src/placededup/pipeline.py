"""Stage glue: text features, smoothing, metric presets, evaluation."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .evaluation import EvalReport, KnnIndex, evaluate
from .graph import SmoothingConfig, build_network, train_smoothing
from .metric import TrainConfig, TrainResult, train
from .places import CATEGORY_CATALOGUE, LabeledPair, Place, build_eval_sets
from .synthetic import SyntheticConfig, default_gazetteer, generate_synthetic, golden_labels
from .text import EmbeddingTable, NormalizerConfig, SgdConfig, build_vocab, embed_text, normalize, train_skipgram

log = logging.getLogger(__name__)

# Ablation presets, named by method code, with shared optimisation settings.
# Hard selection uses
# beta = 3: at smaller values the threshold sits below every negative that
# still violates the margin, training drifts toward a collapsed embedding and
# a few seeds lose every ReLU. Clipping keeps the early steps from doing the same.
_COMMON = dict(loss="pairwise", distance="euclidean", lr=0.01, epochs=12, clip_norm=1.0)
PRESETS = {
    "PE": dict(_COMMON, hard=False, attention=False, denoise=False),
    "PEH": dict(_COMMON, hard=True, beta=3.0, attention=False, denoise=False),
    "PEHA": dict(_COMMON, hard=True, beta=3.0, attention=True, denoise=False),
    "PEHAD": dict(_COMMON, hard=True, beta=3.0, attention=True, denoise=True),
}
RAW_FEATURES = "NF+AS+CS"
ABLATION = (RAW_FEATURES, "PE", "PEH", "PEHA", "PEHAD")


def preset_config(name: str, **overrides) -> TrainConfig:
    try:
        base = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
    return TrainConfig(**{**base, **overrides})


def config_hash(obj) -> str:
    if hasattr(obj, "__dataclass_fields__"):
        obj = asdict(obj)
    text = json.dumps(obj, sort_keys=True, default=list, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


@dataclass
class FeatureConfig:
    name_dim: int = 50
    address_dim: int = 50
    name_subword: bool = True
    address_subword: bool = False
    address_window: int | None = 5
    min_count: int = 1
    n_buckets: int = 2**15
    ngram_range: tuple[int, int] = (3, 5)
    epochs: int = 5
    k_neg: int = 5
    lr: float = 0.05
    seed: int = 0
    gazetteer: tuple[str, ...] = field(default_factory=lambda: tuple(sorted(default_gazetteer())))

    def __post_init__(self):
        self.ngram_range = tuple(self.ngram_range)
        self.gazetteer = tuple(self.gazetteer)


class TextFeatures:
    def __init__(self, name_table: EmbeddingTable, address_table: EmbeddingTable | None, ids, X, empty_names: int):
        self.name_table = name_table
        self.address_table = address_table
        self.ids = list(ids)
        self.X = X
        self.empty_names = empty_names


def tokenize_places(places: Sequence[Place], cfg: FeatureConfig):
    ncfg = NormalizerConfig(gazetteer=frozenset(cfg.gazetteer))
    names = [normalize(p.name, ncfg) for p in places]
    addresses = [normalize(p.address) if p.address else [] for p in places]
    return names, addresses


def build_text_features(places: Sequence[Place], cfg: FeatureConfig | None = None, workers: int = 1) -> TextFeatures:
    """Train name and address tables and concatenate the averaged embeddings."""
    cfg = cfg or FeatureConfig()
    names, addresses = tokenize_places(places, cfg)
    sgd = SgdConfig(k_neg=cfg.k_neg, lr=cfg.lr, epochs=cfg.epochs, seed=cfg.seed)
    name_table = train_skipgram(
        names, build_vocab(names, cfg.min_count), sgd, subword=cfg.name_subword, dim=cfg.name_dim,
        ngram_range=cfg.ngram_range, n_buckets=cfg.n_buckets, workers=workers,
    )
    address_table = None
    if any(addresses):
        address_table = train_skipgram(
            addresses, build_vocab(addresses, cfg.min_count), replace(sgd, seed=cfg.seed + 1),
            subword=cfg.address_subword, dim=cfg.address_dim, window=cfg.address_window,
            ngram_range=cfg.ngram_range, n_buckets=cfg.n_buckets, workers=workers,
        )
    return TextFeatures(name_table, address_table, [p.id for p in places],
                        *featurize(names, addresses, name_table, address_table, cfg.address_dim))


def featurize(names, addresses, name_table, address_table, address_dim: int):
    rows = []
    empty = 0
    for n_tok, a_tok in zip(names, addresses):
        nv = embed_text(n_tok, name_table)
        empty += nv.empty
        av = embed_text(a_tok, address_table).vector if address_table is not None else np.zeros(address_dim)
        rows.append(np.concatenate([nv.vector, av]))
    return np.vstack(rows), empty


@dataclass
class ExperimentData:
    places: list[Place]
    labels: list[LabeledPair]
    truth: dict[str, str]
    golden: list[LabeledPair]
    ids: list[str]
    X0: np.ndarray
    X: np.ndarray
    synthetic: SyntheticConfig


def prepare(syn: SyntheticConfig, feat: FeatureConfig | None = None, smooth: SmoothingConfig | None = None,
            bin_size: float = 0.01) -> ExperimentData:
    """Synthetic data through text features and smoothing."""
    places, labels, truth = generate_synthetic(syn)
    golden = golden_labels(places, truth, syn)
    tf = build_text_features(places, feat)
    network = build_network(places, bin_size, CATEGORY_CATALOGUE)
    _, X = train_smoothing(tf.X, network, smooth)
    return ExperimentData(places, labels, truth, golden, tf.ids, tf.X, X, syn)


def evaluate_embeddings(ids, U, golden: Sequence[LabeledPair], k_max: int = 100) -> EvalReport:
    return evaluate(KnnIndex(ids, U), build_eval_sets(golden), k_max)


def run_preset(data: ExperimentData, name: str, labels: Sequence[LabeledPair] | None = None, **overrides):
    """Train a preset (or evaluate raw features) and return ``(report, result)``."""
    if name == RAW_FEATURES:
        return evaluate_embeddings(data.ids, data.X, data.golden), None
    cfg = preset_config(name, **overrides)
    if cfg.denoise and cfg.n_clusters is None:
        # the generator's entity count plays the role of a user-supplied estimate
        cfg.n_clusters = data.synthetic.n_true_places
    result: TrainResult = train(data.ids, data.X, labels if labels is not None else data.labels, cfg)
    U = result.model.embed(data.X)
    return evaluate_embeddings(data.ids, U, data.golden), result


# ------------------------------------------------------------- experiments


def prepare_seed(seed: int, **synthetic) -> ExperimentData:
    """Synthetic data and features with every stage seeded by ``seed``."""
    return prepare(SyntheticConfig(seed=seed, **synthetic), FeatureConfig(seed=seed), SmoothingConfig(seed=seed))


def ablation(datasets: Sequence[ExperimentData], variants: Sequence[str] = ABLATION) -> dict[str, list[float]]:
    """ACC of each variant on each dataset, trained with the dataset's seed."""
    out = {v: [] for v in variants}
    for data in datasets:
        seed = data.synthetic.seed
        for v in variants:
            report, _ = run_preset(data, v, seed=seed)
            out[v].append(report.acc)
            log.info("seed %d %s: ACC %.4f", seed, v, report.acc)
    return out


def steps_to_threshold(history: Sequence[float], threshold: float, window: int = 20) -> int | None:
    """Steps until the trailing ``window``-step mean loss first drops below ``threshold``."""
    h = np.asarray(history, dtype=np.float64)
    if len(h) < window:
        return None
    trailing = np.convolve(h, np.ones(window) / window, mode="valid")
    below = np.flatnonzero(trailing < threshold)
    return int(below[0]) + window if len(below) else None


def convergence(datasets: Sequence[ExperimentData], threshold: float = 0.4, window: int = 20,
                variants: Sequence[str] = ("PE", "PEH")) -> dict[str, list[int | None]]:
    """Steps each variant needs to reach the loss threshold, per dataset.

    The loss is the plain batch mean over all pairs, so hard selection is
    judged on the same quantity as uniform training.
    """
    out = {v: [] for v in variants}
    for data in datasets:
        for v in variants:
            _, result = run_preset(data, v, seed=data.synthetic.seed)
            out[v].append(steps_to_threshold(result.history, threshold, window))
    return out
