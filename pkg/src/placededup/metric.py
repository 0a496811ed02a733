"""Supervised metric learning on place features, in plain numpy.

A shared ReLU trunk feeds a key head and a value head. The value embedding
is the place embedding. Training uses the pairwise contrastive loss (or a
triplet baseline), plus three optional parts:

* hard selection: a pair contributes only when its signed distance beats
  ``beta`` times the batch mean;
* source attention: each pair's loss is weighted by a softmax over label
  sources, scored from the concatenated keys of its endpoints;
* denoising: a KL term pulls value embeddings toward sharpened Student-t
  soft cluster assignments.

Gradients are derived by hand. ``tests/test_gradients.py`` checks each of
them against central finite differences.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

log = logging.getLogger(__name__)

LOSSES = ("pairwise", "triplet")
DISTANCES = ("euclidean", "cosine", "bilinear")
EPS = 1e-12


# ---------------------------------------------------------------- distances


def _distance_and_grad(ua, ub, kind="euclidean", M=None):
    """Row-wise distance and its gradients w.r.t. ``ua``, ``ub`` and ``M``."""
    if kind == "euclidean":
        diff = ua - ub
        return np.einsum("nd,nd->n", diff, diff), 2 * diff, -2 * diff, None
    if kind == "cosine":
        na = np.linalg.norm(ua, axis=1)
        nb = np.linalg.norm(ub, axis=1)
        ok = (na > 0) & (nb > 0)
        safe_a = np.where(ok, na, 1.0)
        safe_b = np.where(ok, nb, 1.0)
        cos = np.where(ok, np.einsum("nd,nd->n", ua, ub) / (safe_a * safe_b), 0.0)
        ga = -(ub / (safe_a * safe_b)[:, None] - cos[:, None] * ua / (safe_a**2)[:, None])
        gb = -(ua / (safe_a * safe_b)[:, None] - cos[:, None] * ub / (safe_b**2)[:, None])
        ga[~ok] = 0.0
        gb[~ok] = 0.0
        return 1.0 - cos, ga, gb, None
    if kind == "bilinear":
        if M is None:
            raise ValueError("bilinear distance needs a matrix")
        score = np.einsum("nd,de,ne->n", ua, M, ub)
        return -score, -(ub @ M.T), -(ua @ M), -np.einsum("nd,ne->de", ua, ub)
    raise ValueError(f"unknown distance kind {kind!r}")


def distance(u_a, u_b, kind: str = "euclidean", M=None) -> float:
    """Squared L2, ``1 - cosine``, or the negated bilinear score ``-u_a^T M u_b``.

    Lower means closer for every kind. A zero vector is at cosine distance 1
    from everything.
    """
    u_a = np.asarray(u_a, dtype=np.float64)
    u_b = np.asarray(u_b, dtype=np.float64)
    if u_a.shape != u_b.shape:
        raise ValueError(f"dimension mismatch: {u_a.shape} vs {u_b.shape}")
    d, *_ = _distance_and_grad(u_a.reshape(1, -1), u_b.reshape(1, -1), kind, M)
    return float(d[0])


# ------------------------------------------------------------------- losses


def contrastive(d, y, alpha: float):
    d = np.asarray(d, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    return y * d + (1 - y) * np.maximum(0.0, alpha - d)


def pair_loss(u_a, u_b, y: int, alpha: float = 1.0, kind: str = "euclidean", M=None) -> float:
    if not alpha > 0:
        raise ValueError("margin must be positive")
    return float(contrastive(distance(u_a, u_b, kind, M), y, alpha))


def triplet_loss(u_a, u_p, u_n, alpha: float = 1.0, kind: str = "euclidean", M=None) -> float:
    if not alpha > 0:
        raise ValueError("margin must be positive")
    return max(0.0, distance(u_a, u_p, kind, M) - distance(u_a, u_n, kind, M) + alpha)


def hard_select(d, y, beta: float) -> np.ndarray:
    """Mask of pairs whose signed score beats ``beta`` times the batch mean score.

    The signed score is ``+d`` for duplicates and ``-d`` for non-duplicates.
    If nothing passes, the single highest-scoring pair is kept.
    """
    d = np.asarray(d, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if d.size == 0:
        raise ValueError("empty batch")
    score = y * d - (1 - y) * d
    tau = beta / len(score) * score.sum()
    mask = score > tau
    if not mask.any():
        mask[int(np.argmax(score))] = True
    return mask


def _softmax(scores):
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def attention_weights(key_a, key_b, Q, source_idx):
    """Weight of each pair under its own source, plus the full source softmax.

    Scores are ``[key_a, key_b] . q(s)`` for every registered source ``s``.
    """
    key_a = np.atleast_2d(key_a)
    key_b = np.atleast_2d(key_b)
    cat = np.concatenate([key_a, key_b], axis=1)
    if cat.shape[1] != Q.shape[1]:
        raise ValueError(f"source vectors have length {Q.shape[1]}, keys concatenate to {cat.shape[1]}")
    P = _softmax(cat @ Q.T)
    idx = np.atleast_1d(source_idx)
    return P[np.arange(len(idx)), idx], P


def _sq_dists(U, centers):
    sq = U @ centers.T
    sq *= -2.0
    sq += np.einsum("nd,nd->n", U, U)[:, None]
    sq += np.einsum("kd,kd->k", centers, centers)[None, :]
    return np.maximum(sq, 0.0, out=sq)


def _student_t(U, centers):
    """Unnormalized Student-t kernel ``1 / (1 + |u - mu|^2)``."""
    t = _sq_dists(U, centers)
    t += 1.0
    return np.reciprocal(t, out=t)


def soft_assign(U, centers) -> np.ndarray:
    """Student-t (one degree of freedom) soft assignment of rows of ``U``."""
    U = np.atleast_2d(np.asarray(U, dtype=np.float64))
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    t = _student_t(U, centers)
    t /= t.sum(axis=1, keepdims=True)
    return t


def target_dist(D) -> np.ndarray:
    """Sharpened targets: square the assignments, divide by cluster mass, renormalize."""
    D = np.atleast_2d(np.asarray(D, dtype=np.float64))
    mass = D.sum(axis=0)
    w = D**2 / np.maximum(mass, EPS)
    return w / w.sum(axis=1, keepdims=True)


def denoise_loss(D, C, rho: float) -> float:
    D = np.atleast_2d(np.asarray(D, dtype=np.float64))
    C = np.atleast_2d(np.asarray(C, dtype=np.float64))
    if D.shape != C.shape:
        raise ValueError(f"shape mismatch {D.shape} vs {C.shape}")
    # 0 log 0 = 0: zero targets contribute nothing whatever D is
    log_ratio = np.log(np.where(C > 0, C, 1.0)) - np.log(np.maximum(D, EPS))
    # KL between normalized rows is >= 0; only rounding can push it below
    return max(0.0, float(rho * np.einsum("ij,ij->", C, log_ratio)))


def denoise_grad(U, centers, C, rho: float):
    """``rho * KL(C || soft_assign(U, centers))`` with gradients for ``U`` and ``centers``.

    ``C`` is held constant.
    """
    t = _student_t(U, centers)
    D = t / t.sum(axis=1, keepdims=True)
    loss = denoise_loss(D, C, rho)
    coef = C - D
    coef *= t
    coef *= 2.0 * rho
    # sum_k coef_ik (u_i - mu_k), and its mirror image for the centers
    gU = coef.sum(axis=1)[:, None] * U - coef @ centers
    gC = coef.sum(axis=0)[:, None] * centers - coef.T @ U
    return loss, gU, gC


def init_centers(U, K: int, seed: int = 0, max_iter: int = 100) -> np.ndarray:
    """k-means++ seeding, then Lloyd iterations until assignments stop changing."""
    U = np.asarray(U, dtype=np.float64)
    n = len(U)
    if K < 1 or K > n:
        raise ValueError(f"cannot place {K} centers on {n} points")
    rng = np.random.default_rng(seed)
    centers = np.empty((K, U.shape[1]))
    centers[0] = U[rng.integers(n)]
    best = ((U - centers[0]) ** 2).sum(axis=1)
    for k in range(1, K):
        total = best.sum()
        if total <= 0:
            j = int(rng.integers(n))
        else:
            j = int(np.searchsorted(np.cumsum(best) / total, rng.random(), side="right"))
            j = min(j, n - 1)
        centers[k] = U[j]
        best = np.minimum(best, ((U - centers[k]) ** 2).sum(axis=1))
    assign = None
    for _ in range(max_iter):
        new = _sq_dists(U, centers).argmin(axis=1)
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        counts = np.bincount(assign, minlength=K)
        sums = np.zeros_like(centers)
        np.add.at(sums, assign, U)
        filled = counts > 0
        centers[filled] = sums[filled] / counts[filled, None]
    return centers


# -------------------------------------------------------------------- model


@dataclass
class TrainConfig:
    loss: str = "pairwise"
    distance: str = "euclidean"
    lr: float = 0.01
    momentum: float = 0.9
    clip_norm: float | None = None
    epochs: int = 10
    batch_size: int = 128
    hard: bool = False
    beta: float = 1.0
    attention: bool = False
    denoise: bool = False
    rho: float = 1.0
    n_clusters: int | None = None
    refresh_interval: int = 100
    warmup_epochs: int = 1
    denoise_batch: int = 128
    denoise_pool: str = "all"
    hidden: tuple[int, ...] = (64, 64)
    key_dim: int = 16
    value_dim: int = 32
    alpha: float = 1.0
    standardize: bool = True
    seed: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if self.distance not in DISTANCES:
            raise ValueError(f"distance must be one of {DISTANCES}")
        if self.loss == "triplet" and (self.hard or self.attention):
            raise ValueError("hard sampling and attention are defined for the pairwise loss only")
        if self.batch_size < 2:
            raise ValueError("batch size must be >= 2")
        if not self.alpha > 0 or not self.lr > 0 or self.beta < 0 or self.rho < 0:
            raise ValueError("alpha and lr must be positive, beta and rho non-negative")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive")
        if self.denoise_pool not in ("all", "labeled"):
            raise ValueError("denoise_pool must be 'all' or 'labeled'")


@dataclass
class MetricModel:
    params: dict[str, np.ndarray]
    sources: list[str]
    alpha: float = 1.0
    distance: str = "euclidean"
    loss: str = "pairwise"
    shift: np.ndarray | None = None
    scale: np.ndarray | None = None

    @property
    def n_layers(self) -> int:
        return sum(1 for k in self.params if k.startswith("W") and k[1:].isdigit())

    @property
    def input_dim(self) -> int:
        return self.params["W0"].shape[1]

    @property
    def key_dim(self) -> int:
        return self.params["Wk"].shape[0]

    @property
    def value_dim(self) -> int:
        return self.params["Wv"].shape[0]

    def source_index(self, source: str) -> int:
        try:
            return self.sources.index(source)
        except ValueError:
            raise ValueError(f"unregistered source {source!r}") from None

    def standardize(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.shift is None:
            return X
        return (X - self.shift) / self.scale

    def encode(self, X):
        return _encode(self.params, self.standardize(X))

    def forward(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_dim:
            raise ValueError(f"expected input of dimension {self.input_dim}, got {x.shape[-1]}")
        K, V, _ = self.encode(x)
        if x.ndim == 1:
            return K[0], V[0]
        return K, V

    def embed(self, X) -> np.ndarray:
        return self.forward(np.atleast_2d(X))[1]

    def pair_distance(self, u_a, u_b) -> float:
        return distance(u_a, u_b, self.distance, self.params.get("M"))

    def attention(self, x_a, x_b, source: str) -> float:
        """Weight of the pair (``x_a``, ``x_b``) under ``source``."""
        ka, _ = self.forward(x_a)
        kb, _ = self.forward(x_b)
        w, _ = attention_weights(ka, kb, self.params["Q"], self.source_index(source))
        return float(w[0])


def init_model(input_dim: int, sources: Sequence[str], cfg: TrainConfig, rng=None) -> MetricModel:
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    params: dict[str, np.ndarray] = {}
    fan_in = input_dim
    for i, width in enumerate(cfg.hidden):
        params[f"W{i}"] = rng.normal(0, math.sqrt(2.0 / fan_in), size=(width, fan_in))
        params[f"b{i}"] = np.zeros(width)
        fan_in = width
    params["Wk"] = rng.normal(0, math.sqrt(1.0 / fan_in), size=(cfg.key_dim, fan_in))
    params["bk"] = np.zeros(cfg.key_dim)
    params["Wv"] = rng.normal(0, math.sqrt(1.0 / fan_in), size=(cfg.value_dim, fan_in))
    params["bv"] = np.zeros(cfg.value_dim)
    params["Q"] = np.zeros((len(sources), 2 * cfg.key_dim))
    if cfg.distance == "bilinear":
        params["M"] = np.eye(cfg.value_dim)
    return MetricModel(params, list(sources), cfg.alpha, cfg.distance, cfg.loss)


def _encode(params, X):
    acts = [X]
    pre = []
    h = X
    i = 0
    while f"W{i}" in params:
        z = h @ params[f"W{i}"].T + params[f"b{i}"]
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
        i += 1
    K = h @ params["Wk"].T + params["bk"]
    V = h @ params["Wv"].T + params["bv"]
    return K, V, (acts, pre)


def _backward(params, cache, dK, dV, grads):
    """Accumulate trunk and head gradients into ``grads``."""
    acts, pre = cache
    h = acts[-1]
    grads["Wk"] += dK.T @ h
    grads["bk"] += dK.sum(axis=0)
    grads["Wv"] += dV.T @ h
    grads["bv"] += dV.sum(axis=0)
    dh = dK @ params["Wk"] + dV @ params["Wv"]
    for i in range(len(pre) - 1, -1, -1):
        dz = dh * (pre[i] > 0)
        grads[f"W{i}"] += dz.T @ acts[i]
        grads[f"b{i}"] += dz.sum(axis=0)
        dh = dz @ params[f"W{i}"]
    return grads


class Batch(NamedTuple):
    xa: np.ndarray
    xb: np.ndarray
    y: np.ndarray
    src: np.ndarray
    xn: np.ndarray | None = None  # triplet negatives


class DenoiseBatch(NamedTuple):
    x: np.ndarray
    targets: np.ndarray


def batch_objective(params, cfg: TrainConfig, batch: Batch, mask=None, denoise: DenoiseBatch | None = None,
                    attention_scale: float = 1.0):
    """Batch loss and gradient for every entry of ``params``.

    ``mask`` fixes the hard-selection outcome (recomputed when None).
    Returns ``(loss, grads, info)``; ``info["pair_loss"]`` is the plain mean
    contrastive loss over the whole batch, before selection or weighting.
    """
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    M = params.get("M")
    info = {}
    n = len(batch.y)
    y = batch.y.astype(np.float64)

    if cfg.loss == "triplet":
        X = np.vstack([batch.xa, batch.xb, batch.xn])
        K, V, cache = _encode(params, X)
        Va, Vp, Vn = V[:n], V[n : 2 * n], V[2 * n :]
        dap, ga1, gp, _ = _distance_and_grad(Va, Vp, cfg.distance, M)
        dan, ga2, gn, _ = _distance_and_grad(Va, Vn, cfg.distance, M)
        margin = dap - dan + cfg.alpha
        active = (margin > 0).astype(np.float64) / n
        loss = float(np.maximum(margin, 0).sum() / n)
        dV = np.vstack([active[:, None] * (ga1 - ga2), active[:, None] * gp, -active[:, None] * gn])
        if M is not None:
            # d = -u^T M v, so d(d_ap - d_an)/dM = -Va Vp^T + Va Vn^T
            grads["M"] += np.einsum("n,nd,ne->de", active, Va, Vn - Vp)
        _backward(params, cache, np.zeros_like(K), dV, grads)
        info["pair_loss"] = float(contrastive(dap, np.ones(n), cfg.alpha).mean())
    else:
        X = np.vstack([batch.xa, batch.xb])
        K, V, cache = _encode(params, X)
        Ka, Kb, Va, Vb = K[:n], K[n:], V[:n], V[n:]
        d, ga, gb, _ = _distance_and_grad(Va, Vb, cfg.distance, M)
        per = contrastive(d, y, cfg.alpha)
        info["pair_loss"] = float(per.mean())
        if mask is None:
            mask = hard_select(d, y, cfg.beta) if cfg.hard else np.ones(n, dtype=bool)
        info["selected"] = int(mask.sum())
        coef = mask.astype(np.float64) / mask.sum()
        if cfg.attention:
            w, P = attention_weights(Ka, Kb, params["Q"], batch.src)
            coef = coef * attention_scale
        else:
            w = np.ones(n)
        loss = float((coef * w * per).sum())
        dd = coef * w * (y - (1 - y) * (d < cfg.alpha))
        dK = np.zeros_like(K)
        dV = np.vstack([dd[:, None] * ga, dd[:, None] * gb])
        if M is not None:
            grads["M"] += -np.einsum("n,nd,ne->de", dd, Va, Vb)
        if cfg.attention:
            dw = coef * per
            onehot = np.zeros_like(P)
            onehot[np.arange(n), batch.src] = 1.0
            dscore = (dw * w)[:, None] * (onehot - P)
            cat = np.concatenate([Ka, Kb], axis=1)
            grads["Q"] += dscore.T @ cat
            dcat = dscore @ params["Q"]
            kd = Ka.shape[1]
            dK[:n] = dcat[:, :kd]
            dK[n:] = dcat[:, kd:]
        _backward(params, cache, dK, dV, grads)

    if denoise is not None:
        m = len(denoise.x)
        _, U, dcache = _encode(params, denoise.x)
        dl, gU, gC = denoise_grad(U, params["centers"], denoise.targets, cfg.rho / m)
        loss += dl
        info["denoise_loss"] = dl
        grads["centers"] += gC
        _backward(params, dcache, np.zeros((m, params["bk"].shape[0])), gU, grads)

    return loss, grads, info


# ----------------------------------------------------------------- training


@dataclass
class DenoisingState:
    centers: np.ndarray
    rho: float
    refresh_interval: int
    pool: np.ndarray
    targets: np.ndarray | None = None

    @property
    def n_clusters(self) -> int:
        return len(self.centers)


class TrainResult(NamedTuple):
    model: MetricModel
    denoising: DenoisingState | None
    history: list


def _nondup_lists(ia, ib, y):
    """Labeled non-duplicates of every place, both directions."""
    nondup: dict[int, list[int]] = {}
    for a, b, lab in zip(ia.tolist(), ib.tolist(), y.tolist()):
        if lab == 0:
            nondup.setdefault(a, []).append(b)
            nondup.setdefault(b, []).append(a)
    return nondup


def train(ids: Sequence[str], X: np.ndarray, labels, cfg: TrainConfig | None = None, callback=None) -> TrainResult:
    """Fit a metric model on feature rows ``X`` (keyed by ``ids``) from labeled pairs."""
    cfg = cfg or TrainConfig()
    labels = list(labels)
    if not labels:
        raise ValueError("no labeled pairs to train on")
    X = np.asarray(X, dtype=np.float64)
    row = {pid: i for i, pid in enumerate(ids)}
    missing = {p for l in labels for p in (l.a, l.b) if p not in row}
    if missing:
        raise ValueError(f"{len(missing)} labeled places have no features, e.g. {sorted(missing)[:3]}")
    sources = sorted({l.source for l in labels})
    ia = np.array([row[l.a] for l in labels], dtype=np.int64)
    ib = np.array([row[l.b] for l in labels], dtype=np.int64)
    y = np.array([l.y for l in labels], dtype=np.int64)
    src = np.array([sources.index(l.source) for l in labels], dtype=np.int64)

    rng = np.random.default_rng(cfg.seed)
    model = init_model(X.shape[1], sources, cfg, rng)
    if cfg.standardize:
        model.shift = X.mean(axis=0)
        model.scale = np.maximum(X.std(axis=0), 1e-8)
    X = model.standardize(X)
    params = model.params
    velocity = {k: np.zeros_like(v) for k, v in params.items()}
    scale = float(len(sources))

    if cfg.loss == "triplet":
        nondup = _nondup_lists(ia, ib, y)
        pos = np.flatnonzero(y == 1)
        ia, ib, y, src = ia[pos], ib[pos], y[pos], src[pos]
        if len(y) == 0:
            raise ValueError("triplet loss needs at least one positive pair")

    pool = np.unique(np.concatenate([ia, ib])) if cfg.denoise_pool == "labeled" else np.arange(len(X))
    state: DenoisingState | None = None
    history: list[float] = []
    step = 0
    for epoch in range(cfg.epochs):
        if cfg.denoise and state is None and epoch >= cfg.warmup_epochs:
            state = _start_denoising(model, X, pool, cfg)
            params["centers"] = state.centers
            velocity["centers"] = np.zeros_like(state.centers)
        order = rng.permutation(len(y))
        for start in range(0, len(order), cfg.batch_size):
            sel = order[start : start + cfg.batch_size]
            if len(sel) < 2:
                continue
            xn = None
            if cfg.loss == "triplet":
                xn = X[_pick_negatives(ia[sel], ib[sel], nondup, rng)]
            batch = Batch(X[ia[sel]], X[ib[sel]], y[sel], src[sel], xn)
            dn = None
            if state is not None:
                if state.targets is None or step % cfg.refresh_interval == 0:
                    _refresh_targets(model, X, state)
                take = rng.choice(len(pool), size=min(cfg.denoise_batch, len(pool)), replace=False)
                dn = DenoiseBatch(X[pool[take]], state.targets[take])
            loss, grads, info = batch_objective(params, cfg, batch, denoise=dn, attention_scale=scale)
            if not np.isfinite(loss):
                raise FloatingPointError(f"training diverged at step {step}; lower lr or rho")
            shrink = 1.0
            if cfg.clip_norm is not None:
                norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                shrink = min(1.0, cfg.clip_norm / max(norm, 1e-300))
            for k, g in grads.items():
                velocity[k] = cfg.momentum * velocity[k] - cfg.lr * shrink * g
                params[k] += velocity[k]
            history.append(info["pair_loss"])
            step += 1
            if callback is not None:
                callback(step, model, info)
        log.debug("epoch %d: mean pair loss %.4f", epoch + 1, np.mean(history[-max(1, len(order) // cfg.batch_size):]))
    if state is not None:
        state.centers = params.pop("centers")
    return TrainResult(model, state, history)


def _pick_negatives(a_idx, p_idx, nondup, rng):
    out = np.empty(len(a_idx), dtype=np.int64)
    batch_places = np.concatenate([a_idx, p_idx])
    for i, (a, p) in enumerate(zip(a_idx.tolist(), p_idx.tolist())):
        options = nondup.get(a)
        if options:
            out[i] = options[int(rng.integers(len(options)))]
            continue
        others = batch_places[(batch_places != a) & (batch_places != p)]
        out[i] = others[int(rng.integers(len(others)))] if len(others) else p
    return out


def _start_denoising(model, X, pool, cfg) -> DenoisingState:
    U = _encode(model.params, X[pool])[1]
    K = cfg.n_clusters or max(1, int(round(math.sqrt(len(pool)))))
    K = min(K, len(pool))
    centers = init_centers(U, K, seed=cfg.seed)
    log.debug("denoising on with %d clusters over %d places", K, len(pool))
    return DenoisingState(centers=centers, rho=cfg.rho, refresh_interval=cfg.refresh_interval, pool=pool)


def _refresh_targets(model, X, state: DenoisingState, chunk: int = 2048):
    U = _encode(model.params, X[state.pool])[1]
    D = np.vstack([soft_assign(U[i : i + chunk], state.centers) for i in range(0, len(U), chunk)])
    state.targets = target_dist(D)


# --------------------------------------------------------------- checkpoint

_MAGIC = b"PDCKPT1\n"


def save_checkpoint(model: MetricModel, path, denoising: DenoisingState | None = None, meta: dict | None = None) -> None:
    """Write a JSON header line followed by raw little-endian float64 arrays."""
    arrays = dict(model.params)
    if model.shift is not None:
        arrays["input_shift"] = model.shift
        arrays["input_scale"] = model.scale
    if denoising is not None:
        arrays["centers"] = denoising.centers
    entries, blobs, offset = [], [], 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name], dtype="<f8")
        entries.append({"name": name, "shape": list(a.shape), "offset": offset})
        blob = a.tobytes(order="C")
        blobs.append(blob)
        offset += len(blob)
    header = {
        "version": 1,
        "loss": model.loss,
        "distance": model.distance,
        "alpha": model.alpha,
        "sources": model.sources,
        "dims": {"input": model.input_dim, "key": model.key_dim, "value": model.value_dim,
                 "hidden": [model.params[f"W{i}"].shape[0] for i in range(model.n_layers)]},
        "denoising": None if denoising is None else {"rho": denoising.rho, "refresh_interval": denoising.refresh_interval},
        "arrays": entries,
        "meta": meta or {},
    }
    text = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    Path(path).write_bytes(_MAGIC + struct.pack("<Q", len(text)) + text + b"".join(blobs))


def load_checkpoint(path) -> tuple[MetricModel, DenoisingState | None, dict]:
    data = Path(path).read_bytes()
    if not data.startswith(_MAGIC):
        raise ValueError(f"{path}: not a metric model checkpoint")
    pos = len(_MAGIC)
    (hlen,) = struct.unpack("<Q", data[pos : pos + 8])
    pos += 8
    header = json.loads(data[pos : pos + hlen].decode("utf-8"))
    pos += hlen
    arrays = {}
    for e in header["arrays"]:
        count = int(np.prod(e["shape"])) if e["shape"] else 1
        start = pos + e["offset"]
        arrays[e["name"]] = np.frombuffer(data, dtype="<f8", count=count, offset=start).reshape(e["shape"]).astype(np.float64)
    centers = arrays.pop("centers", None)
    shift, scale = arrays.pop("input_shift", None), arrays.pop("input_scale", None)
    model = MetricModel(arrays, header["sources"], header["alpha"], header["distance"], header["loss"], shift, scale)
    state = None
    if centers is not None:
        dn = header.get("denoising") or {}
        state = DenoisingState(centers=centers, rho=dn.get("rho", 1.0),
                               refresh_interval=dn.get("refresh_interval", 100), pool=np.zeros(0, dtype=np.int64))
    return model, state, header
