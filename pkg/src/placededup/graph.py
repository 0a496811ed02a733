"""Place network from grid bins and categories, and embedding smoothing on it.

Edges are never materialized: a bin or category with n members implies
n(n-1)/2 edges, and neighbors are enumerated on demand from the groups.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ._lockfree import run_steps
from .text import log_sigmoid, sigmoid

log = logging.getLogger(__name__)


def grid_bin(lat: float, lon: float, size: float) -> tuple[int, int]:
    return (math.floor(lat / size), math.floor(lon / size))


class _Groups:
    """Members of each group stored flat, for vectorized pair sampling."""

    def __init__(self, groups: dict):
        self.keys = sorted(groups)
        self.members = {k: np.asarray(sorted(v), dtype=np.int64) for k, v in groups.items()}
        sizes = np.array([len(self.members[k]) for k in self.keys], dtype=np.int64)
        self.sizes = sizes
        self.offsets = np.concatenate([[0], np.cumsum(sizes)[:-1]]).astype(np.int64) if len(sizes) else sizes
        self.flat = np.concatenate([self.members[k] for k in self.keys]) if self.keys else np.zeros(0, np.int64)
        w = sizes * (sizes - 1) / 2.0
        self.n_pairs = float(w.sum())
        self.cdf = np.cumsum(w) / self.n_pairs if self.n_pairs > 0 else None

    def sample(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        g = np.minimum(np.searchsorted(self.cdf, rng.random(n), side="right"), len(self.cdf) - 1)
        size = self.sizes[g]
        r1 = (rng.random(n) * size).astype(np.int64)
        r2 = (rng.random(n) * (size - 1)).astype(np.int64)
        r2 = np.where(r2 >= r1, r2 + 1, r2)
        off = self.offsets[g]
        return self.flat[off + r1], self.flat[off + r2]


@dataclass
class PlaceNetwork:
    ids: list[str]
    bin_size: float
    node_bin: list[tuple[int, int] | None]
    node_cats: list[frozenset[str]]
    bins: dict[tuple[int, int], np.ndarray] = field(init=False)
    categories: dict[str, np.ndarray] = field(init=False)

    def __post_init__(self):
        bins: dict = {}
        cats: dict = {}
        for i, (b, cs) in enumerate(zip(self.node_bin, self.node_cats)):
            if b is not None:
                bins.setdefault(b, []).append(i)
            for c in cs:
                cats.setdefault(c, []).append(i)
        self._bins = _Groups(bins)
        self._cats = _Groups(cats)
        self.bins = self._bins.members
        self.categories = self._cats.members

    def __len__(self):
        return len(self.ids)

    def coordinate_neighbors(self, i: int) -> np.ndarray:
        b = self.node_bin[i]
        if b is None:
            return np.zeros(0, dtype=np.int64)
        members = self.bins[b]
        return members[members != i]

    def category_neighbors(self, i: int) -> np.ndarray:
        cs = self.node_cats[i]
        if not cs:
            return np.zeros(0, dtype=np.int64)
        out = np.unique(np.concatenate([self.categories[c] for c in cs]))
        return out[out != i]

    def neighbors(self, i: int) -> np.ndarray:
        return np.union1d(self.coordinate_neighbors(i), self.category_neighbors(i))

    @property
    def n_coordinate_edges(self) -> int:
        return int(self._bins.n_pairs)

    @property
    def n_category_edges(self) -> int:
        sigs: dict[frozenset, int] = {}
        for cs in self.node_cats:
            if cs:
                sigs[cs] = sigs.get(cs, 0) + 1
        keys = list(sigs)
        total = sum(n * (n - 1) // 2 for n in sigs.values())
        for x in range(len(keys)):
            for y in range(x + 1, len(keys)):
                if keys[x] & keys[y]:
                    total += sigs[keys[x]] * sigs[keys[y]]
        return total

    def degrees(self) -> np.ndarray:
        """Degree in the union graph E1 ∪ E2."""
        n = len(self)
        if n <= 4000:
            return np.array([len(self.neighbors(i)) for i in range(n)], dtype=np.int64)
        # large networks: exact by category signature, minus pairs counted twice
        deg = np.array([len(self.coordinate_neighbors(i)) for i in range(n)], dtype=np.int64)
        sigs: dict[frozenset, list[int]] = {}
        for i, cs in enumerate(self.node_cats):
            if cs:
                sigs.setdefault(cs, []).append(i)
        for sig, nodes in sigs.items():
            reach = sum(len(m) for s, m in sigs.items() if s & sig)
            for i in nodes:
                both = self.coordinate_neighbors(i)
                shared = sum(1 for j in both.tolist() if self.node_cats[j] & sig)
                deg[i] += reach - 1 - shared
        return deg

    def sample_coordinate_edges(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        return self._bins.sample(n, rng)

    def sample_category_edges(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        """Uniform over E2: a pair sharing m categories is kept with prob 1/m."""
        got_a, got_b, have = [], [], 0
        while have < n:
            a, b = self._cats.sample(2 * (n - have) + 8, rng)
            shared = np.array([len(self.node_cats[x] & self.node_cats[y]) for x, y in zip(a.tolist(), b.tolist())])
            keep = rng.random(len(a)) * shared < 1.0
            got_a.append(a[keep])
            got_b.append(b[keep])
            have += int(keep.sum())
        return np.concatenate(got_a)[:n], np.concatenate(got_b)[:n]

    def sample_edges(self, n: int, rng) -> tuple[np.ndarray, np.ndarray]:
        """``n`` directed positives; half from each edge type when both exist."""
        has1, has2 = self._bins.n_pairs > 0, self._cats.n_pairs > 0
        if not (has1 or has2):
            raise ValueError("network has no edges")
        use1 = rng.random(n) < 0.5 if (has1 and has2) else np.full(n, has1)
        n1 = int(use1.sum())
        a = np.empty(n, dtype=np.int64)
        b = np.empty(n, dtype=np.int64)
        if n1:
            a[use1], b[use1] = self.sample_coordinate_edges(n1, rng)
        if n - n1:
            a[~use1], b[~use1] = self.sample_category_edges(n - n1, rng)
        flip = rng.random(n) < 0.5
        return np.where(flip, b, a), np.where(flip, a, b)


def build_network(places: Sequence, bin_size: float = 0.01, catalogue: Iterable[str] | None = None) -> PlaceNetwork:
    if not bin_size > 0:
        raise ValueError("bin_size must be positive")
    allowed = None if catalogue is None else frozenset(catalogue)
    node_bin, node_cats = [], []
    for p in places:
        node_bin.append(None if p.coordinate is None else grid_bin(*p.coordinate, bin_size))
        cats = frozenset(p.categories)
        node_cats.append(cats if allowed is None else cats & allowed)
    return PlaceNetwork([p.id for p in places], bin_size, node_bin, node_cats)


def _pair_dist_sum(X: np.ndarray, chunk: int = 512) -> float:
    """Sum of Euclidean distances over unordered pairs of rows, in row blocks."""
    sq = np.einsum("nd,nd->n", X, X)
    total = 0.0
    for start in range(0, len(X), chunk):
        block = X[start : start + chunk]
        d2 = sq[start : start + chunk, None] + sq[None, :] - 2.0 * block @ X.T
        total += float(np.sqrt(np.maximum(d2, 0.0)).sum())
    return total / 2.0


def bin_distance_ratio(network: PlaceNetwork, X) -> float:
    """Mean Euclidean distance over same-bin pairs divided by the mean over all pairs."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] != len(network):
        raise ValueError(f"{X.shape[0]} rows for {len(network)} places")
    total, count = 0.0, 0
    for members in network.bins.values():
        if len(members) > 1:
            total += _pair_dist_sum(X[members])
            count += len(members) * (len(members) - 1) // 2
    if count == 0:
        raise ValueError("no bin holds two places")
    n = len(X)
    return (total / count) / (_pair_dist_sum(X) / (n * (n - 1) // 2))


@dataclass
class SmoothingConfig:
    k_neg: int = 5
    # an epoch is one sampled edge per place; the loss plateaus after ~50 at this rate
    lr: float = 0.1
    epochs: int = 50
    batch_size: int = 128
    neg_exponent: float = 0.75
    init_noise: float = 0.01
    seed: int = 0
    workers: int = 1


@dataclass
class SmoothingModel:
    weight: np.ndarray
    bias: np.ndarray
    context: np.ndarray

    def apply(self, X: np.ndarray) -> np.ndarray:
        return np.tanh(np.asarray(X) @ self.weight.T + self.bias)


def smoothing_batch(weight, bias, x, phi, gamma):
    """Per-sample loss ``-log sigmoid(gamma * phi . tanh(W x + b))`` and gradients.

    ``x`` and ``phi`` are (n, D), ``gamma`` is (n,) of +-1. Gradients are
    summed over rows for ``weight``/``bias`` and returned per row for
    ``x`` and ``phi``.
    """
    h = np.tanh(x @ weight.T + bias)
    s = np.einsum("nd,nd->n", phi, h)
    loss = -log_sigmoid(gamma * s)
    ds = gamma * (sigmoid(gamma * s) - 1.0)
    g_phi = ds[:, None] * h
    g_z = (ds[:, None] * phi) * (1.0 - h * h)
    return loss, g_z.T @ x, g_z.sum(axis=0), g_z @ weight, g_phi


def train_smoothing(X0: np.ndarray, network: PlaceNetwork, cfg: SmoothingConfig | None = None):
    """Fit the smoothing map and return ``(model, smoothed features)``."""
    cfg = cfg or SmoothingConfig()
    X0 = np.asarray(X0, dtype=np.float64)
    n, dim = X0.shape
    if n != len(network):
        raise ValueError(f"{n} feature rows for a network of {len(network)} places")
    rng = np.random.default_rng(cfg.seed)
    model = SmoothingModel(
        weight=np.eye(dim) + cfg.init_noise * rng.standard_normal((dim, dim)),
        bias=np.zeros(dim),
        context=np.zeros((n, dim)),
    )
    if network.n_coordinate_edges == 0 and network._cats.n_pairs == 0:
        warnings.warn("place network has no edges; features are only passed through the initial map")
        return model, model.apply(X0)

    deg = network.degrees().astype(np.float64)
    cdf = np.cumsum(deg**cfg.neg_exponent)
    cdf /= cdf[-1]
    k = cfg.k_neg
    gamma = np.concatenate([[1.0], -np.ones(k)])

    def step(batch, step_rng):
        lr, size = batch
        ci, cc = network.sample_edges(size, step_rng)
        negs = np.minimum(np.searchsorted(cdf, step_rng.random((size, k)), side="right"), n - 1)
        ctx = np.concatenate([cc[:, None], negs], axis=1).ravel()
        centers = np.repeat(ci, k + 1)
        loss, gW, gb, _, g_phi = smoothing_batch(
            model.weight, model.bias, X0[centers], model.context[ctx], np.tile(gamma, size)
        )
        model.weight -= lr * gW / size
        model.bias -= lr * gb / size
        np.add.at(model.context, ctx, -lr * g_phi)
        return loss.sum() / (k + 1)

    steps_per_epoch = max(1, math.ceil(n / cfg.batch_size))
    total = max(1, cfg.epochs * steps_per_epoch)
    t = 0
    for epoch in range(cfg.epochs):
        batches = []
        for _ in range(steps_per_epoch):
            batches.append((cfg.lr * max(1e-4, 1.0 - t / total), cfg.batch_size))
            t += 1
        loss = run_steps(step, batches, rng, cfg.workers)
        log.debug("smoothing epoch %d: mean loss %.4f", epoch + 1, loss / (steps_per_epoch * cfg.batch_size))
    return model, model.apply(X0)
