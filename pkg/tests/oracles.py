"""Independent reference implementations used by the test suite."""
import numpy as np


def central_diff(f, x, eps=1e-6):
    """Central finite-difference gradient of scalar ``f`` at array ``x`` (x is restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = f()
        x[i] = old - eps
        lo = f()
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12))


def brute_acc(vectors: dict, dups: dict, nondups: dict) -> float:
    probes = sorted(a for a in dups if dups[a] and nondups.get(a))
    if not probes:
        return float("nan")
    total = 0.0
    for a in probes:
        hits = 0
        for p in dups[a]:
            for n in nondups[a]:
                dp = sum((x - y) ** 2 for x, y in zip(vectors[a], vectors[p]))
                dn = sum((x - y) ** 2 for x, y in zip(vectors[a], vectors[n]))
                hits += dp < dn
        total += hits / (len(dups[a]) * len(nondups[a]))
    return total / len(probes)


def brute_knn(vectors: dict, query: str, k: int) -> list:
    dist = []
    for pid, v in vectors.items():
        if pid != query:
            dist.append((sum((x - y) ** 2 for x, y in zip(vectors[query], v)), pid))
    dist.sort()
    return [pid for _, pid in dist[:k]]


def brute_pre_rec(vectors: dict, dups: dict, k_max: int):
    probes = sorted(a for a in dups if dups[a])
    pre = [0.0] * k_max
    rec = [0.0] * k_max
    for a in probes:
        ranked = brute_knn(vectors, a, len(vectors) - 1)
        for k in range(1, k_max + 1):
            hit = len(set(ranked[:k]) & dups[a])
            pre[k - 1] += hit / k
            rec[k - 1] += hit / len(dups[a])
    return [p / len(probes) for p in pre], [r / len(probes) for r in rec]
