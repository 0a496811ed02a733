"""Duplicate-prediction accuracy and candidate-fetch precision/recall at K."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .places import EvalSets


class UndefinedMetricError(ValueError):
    pass


class KnnIndex:
    """Exact squared-Euclidean neighbor search over an id-keyed matrix."""

    def __init__(self, ids: Sequence[str], X):
        self.ids = list(ids)
        self.X = np.asarray(X, dtype=np.float64)
        if len(set(self.ids)) != len(self.ids):
            raise ValueError("duplicate ids in index")
        if self.X.shape[0] != len(self.ids):
            raise ValueError(f"{len(self.ids)} ids for {self.X.shape[0]} rows")
        if not np.all(np.isfinite(self.X)):
            raise ValueError("non-finite embedding")
        self.row = {pid: i for i, pid in enumerate(self.ids)}
        self._rank = np.empty(len(self.ids), dtype=np.int64)
        self._rank[np.argsort(np.array(self.ids, dtype=object), kind="stable")] = np.arange(len(self.ids))

    def __len__(self):
        return len(self.ids)

    def vector(self, pid: str) -> np.ndarray:
        try:
            return self.X[self.row[pid]]
        except KeyError:
            raise KeyError(f"id {pid!r} is not embedded") from None

    def sq_distances(self, pid: str) -> np.ndarray:
        diff = self.X - self.vector(pid)
        return np.einsum("nd,nd->n", diff, diff)

    def ranked(self, pid: str) -> np.ndarray:
        """Rows of all other points, nearest first, ties by ascending id."""
        d = self.sq_distances(pid)
        order = np.lexsort((self._rank, d))
        return order[order != self.row[pid]]


def knn_exact(index: KnnIndex, query: str, K: int) -> list[str]:
    if query not in index.row:
        raise KeyError(f"unknown query id {query!r}")
    if not 0 < K < len(index):
        raise ValueError(f"K must be in [1, {len(index) - 1}], got {K}")
    return [index.ids[i] for i in index.ranked(query)[:K]]


def acc(index: KnnIndex, sets: EvalSets) -> float:
    """Mean over probes of the share of (duplicate, non-duplicate) pairs ordered correctly.

    Ties count as failures.
    """
    if not sets.omega:
        raise UndefinedMetricError("no probe has both duplicates and non-duplicates")
    total = 0.0
    for a in sorted(sets.omega):
        ua = index.vector(a)
        dp = np.array([np.sum((ua - index.vector(p)) ** 2) for p in sorted(sets.dups[a])])
        dn = np.array([np.sum((ua - index.vector(n)) ** 2) for n in sorted(sets.nondups[a])])
        total += float((dp[:, None] < dn[None, :]).mean())
    return total / len(sets.omega)


def precision_recall_at_k(index: KnnIndex, sets: EvalSets, k_max: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Macro-averaged PRE@K and REC@K for K = 1..k_max over duplicate-bearing probes."""
    if not sets.theta:
        raise UndefinedMetricError("no probe has labeled duplicates")
    if not 0 < k_max < len(index):
        raise ValueError(f"k_max must be in [1, {len(index) - 1}], got {k_max}")
    ks = np.arange(1, k_max + 1)
    pre = np.zeros(k_max)
    rec = np.zeros(k_max)
    for a in sorted(sets.theta):
        dup_rows = np.array([index.row[p] for p in sets.dups[a]])
        top = index.ranked(a)[:k_max]
        hits = np.cumsum(np.isin(top, dup_rows))
        pre += hits / ks
        rec += hits / len(dup_rows)
    n = len(sets.theta)
    return pre / n, rec / n


@dataclass
class EvalReport:
    acc: float
    pre_at_k: list[float]
    rec_at_k: list[float]
    avg_pre: float
    avg_rec: float
    n_probes_acc: int
    n_probes_knn: int
    pool_size: int

    def to_json(self, path, extra: dict | None = None) -> None:
        payload = asdict(self)
        if extra:
            payload.update(extra)
        Path(path).write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n", encoding="utf-8")

    def to_tsv(self, path) -> None:
        rows = ["K\tPRE@K\tREC@K"]
        rows += [f"{k}\t{p!r}\t{r!r}" for k, (p, r) in enumerate(zip(self.pre_at_k, self.rec_at_k), start=1)]
        Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")

    @classmethod
    def from_json(cls, path) -> "EvalReport":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(**{k: data[k] for k in cls.__dataclass_fields__})


def evaluate(index: KnnIndex, sets: EvalSets, k_max: int = 100) -> EvalReport:
    k_max = min(k_max, len(index) - 1)
    pre, rec = precision_recall_at_k(index, sets, k_max)
    return EvalReport(
        acc=acc(index, sets),
        pre_at_k=pre.tolist(),
        rec_at_k=rec.tolist(),
        avg_pre=float(pre.mean()),
        avg_rec=float(rec.mean()),
        n_probes_acc=len(sets.omega),
        n_probes_knn=len(sets.theta),
        pool_size=len(index),
    )

