"""Correspondence quality: cumulative geodesic-error curves, CMC curves, distance histograms."""

import json
from dataclasses import dataclass

import numpy as np

DEFAULT_THRESHOLDS = np.linspace(0.0, 0.25, 256)


@dataclass(frozen=True)
class CurveSeries:
    thresholds: np.ndarray
    fractions: np.ndarray

    def to_csv(self, header=("threshold", "fraction")):
        lines = [",".join(header)]
        lines += [f"{t!r},{f!r}" for t, f in zip(self.thresholds.tolist(), self.fractions.tolist())]
        return "\n".join(lines) + "\n"

    def to_json(self):
        return json.dumps({"thresholds": self.thresholds.tolist(),
                           "fractions": self.fractions.tolist()}, sort_keys=True)


@dataclass(frozen=True)
class Histogram:
    counts: np.ndarray
    edges: np.ndarray

    def to_csv(self):
        lines = ["bin_lo,bin_hi,count"]
        lines += [f"{lo!r},{hi!r},{int(c)}" for lo, hi, c in
                  zip(self.edges[:-1].tolist(), self.edges[1:].tolist(), self.counts)]
        return "\n".join(lines) + "\n"

    def to_json(self):
        return json.dumps({"counts": [int(c) for c in self.counts], "edges": self.edges.tolist()},
                          sort_keys=True)


def princeton_curve(errors, thresholds=None):
    """Fraction of matches with error ``<=`` each threshold."""
    errors = np.asarray(errors, dtype=np.float64).ravel()
    if errors.size == 0:
        raise ValueError("error list is empty")
    t = DEFAULT_THRESHOLDS if thresholds is None else np.asarray(thresholds, dtype=np.float64)
    if t.size > 1 and np.any(np.diff(t) <= 0):
        raise ValueError("thresholds must be strictly ascending")
    counts = np.searchsorted(np.sort(errors), t, side="right")
    return CurveSeries(t.copy(), counts / errors.size)


def _truth_pairs(truth, n_src):
    truth = np.asarray(truth, dtype=np.int64)
    if len(truth) != n_src:
        raise ValueError(f"ground truth has {len(truth)} entries for {n_src} source descriptors")
    src = np.flatnonzero(truth >= 0)
    return src, truth[src]


def match_ranks(src_desc, tgt_desc, truth, block=256):
    """1-based rank of the true target among l2-nearest target descriptors (ties by index)."""
    F = np.asarray(src_desc, dtype=np.float64)
    G = np.asarray(tgt_desc, dtype=np.float64)
    src, tgt = _truth_pairs(truth, len(F))
    ranks = np.empty(len(src), dtype=np.int64)
    cols = np.arange(len(G))
    for s in range(0, len(src), block):
        rows, want = src[s:s + block], tgt[s:s + block]
        d = np.sqrt(((F[rows, None, :] - G[None, :, :]) ** 2).sum(axis=2))
        dt = d[np.arange(len(rows)), want][:, None]
        closer = (d < dt) | ((d == dt) & (cols[None, :] < want[:, None]))
        ranks[s:s + block] = closer.sum(axis=1) + 1
    return ranks


def cmc_curve(src_desc, tgt_desc, truth, max_rank=None):
    """Probability that the true match is among the ``r`` nearest target descriptors, r = 1..max_rank."""
    n_tgt = len(tgt_desc)
    max_rank = n_tgt if max_rank is None else int(max_rank)
    if not 1 <= max_rank <= n_tgt:
        raise ValueError(f"max_rank must lie in [1, {n_tgt}], got {max_rank}")
    ranks = match_ranks(src_desc, tgt_desc, truth)
    if ranks.size == 0:
        raise ValueError("no ground-truth matches to evaluate")
    r = np.arange(1, max_rank + 1)
    counts = np.searchsorted(np.sort(ranks), r, side="right")
    return CurveSeries(r.astype(np.float64), counts / ranks.size)


def match_distance_histogram(src_desc, tgt_desc, truth, bins=20):
    """Histogram of descriptor distances ``||F(x) - G(truth(x))||`` over [0, max distance]."""
    if bins < 1:
        raise ValueError("bins must be at least 1")
    F = np.asarray(src_desc, dtype=np.float64)
    G = np.asarray(tgt_desc, dtype=np.float64)
    src, tgt = _truth_pairs(truth, len(F))
    d = np.linalg.norm(F[src] - G[tgt], axis=1)
    top = float(d.max()) if d.size else 0.0
    counts, edges = np.histogram(d, bins=bins, range=(0.0, top if top > 0 else 1.0))
    return Histogram(counts, edges)


def error_summary(errors):
    errors = np.asarray(errors, dtype=np.float64)
    return {"count": int(errors.size), "mean": float(errors.mean()), "max": float(errors.max()),
            "fraction_at_zero": float(np.mean(errors == 0))}
