"""Query-time linear scans (ADC and exact) and recall@R."""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass

import numpy as np

from .codebook import Codebook, EncodedDatabase
from .numerics import sq_dists

_SCAN_CHUNK = 65536


@dataclass(frozen=True)
class AdcTables:
    """``dist[m, k] = ||q - c_m(k)||^2`` for one query, plus ``||q||^2``."""

    dist: np.ndarray  # (M, K) float64
    q_norm: float

    @property
    def offset(self) -> float:
        """The ``-(M - 1) ||q||^2`` constant shared by every database vector."""
        return -(self.dist.shape[0] - 1) * self.q_norm


@dataclass
class SearchResult:
    """Top-R lists for a batch of queries; row ``i`` is query ``i``."""

    indices: np.ndarray  # (n_queries, R) int64
    scores: np.ndarray   # (n_queries, R) float64


def build_adc_tables(q, codebook: Codebook) -> AdcTables:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (codebook.d,):
        raise ValueError(f"query must have shape ({codebook.d},), got {q.shape}")
    el = codebook.elements.astype(np.float64).reshape(-1, codebook.d)
    dist = sq_dists(q[None, :], el)[0].reshape(codebook.m, codebook.k)
    return AdcTables(dist, float(q @ q))


def adc_score(tables: AdcTables, codes_row, cross_term: float) -> float:
    """Approximate ``||q - x||^2`` from the lookup tables and stored cross term."""
    codes_row = np.asarray(codes_row, dtype=np.intp)
    looked = tables.dist[np.arange(tables.dist.shape[0]), codes_row].sum()
    return float(looked + tables.offset + cross_term)


def _rank_scores(tables: AdcTables, codes: np.ndarray, cross: np.ndarray) -> np.ndarray:
    """Per-vector ADC score without the query-constant offset."""
    out = cross.astype(np.float64)
    for m in range(tables.dist.shape[0]):
        out = out + tables.dist[m][codes[:, m]]
    return out


def _push_top(heap: list, scores: np.ndarray, base: int, R: int) -> None:
    """Merge a chunk into a bounded max-heap keyed by (score, index).

    Heap entries are ``(-score, -index)`` so the root is the current worst
    kept item; ties on score prefer the lower database index.
    """
    n = scores.shape[0]
    if n > R:
        kth = np.partition(scores, R - 1)[R - 1]
        cand = np.flatnonzero(scores <= kth)
    else:
        cand = np.arange(n)
    cand = cand[np.argsort(scores[cand], kind="stable")][:R]
    for i in cand:
        item = (-float(scores[i]), -(base + int(i)))
        if len(heap) < R:
            heapq.heappush(heap, item)
        elif item > heap[0]:
            heapq.heapreplace(heap, item)


def _drain(heap: list):
    items = sorted(((-s, -i) for s, i in heap))
    idx = np.array([i for _, i in items], dtype=np.int64)
    sc = np.array([s for s, _ in items], dtype=np.float64)
    return idx, sc


def adc_scan(q, db: EncodedDatabase, codebook: Codebook, R: int, chunk: int = _SCAN_CHUNK):
    """Exact top-R of the ADC scores for one query.

    Ranking drops the constant ``-(M - 1) ||q||^2``; reported scores include
    it, so they estimate true squared distances.

    Returns:
        ``(indices, scores)`` ordered by ascending score, ties by lower index.
    """
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    tables = build_adc_tables(q, codebook)
    R = min(R, db.n)
    heap: list = []
    for s in range(0, db.n, chunk):
        part = _rank_scores(tables, db.codes[s : s + chunk], db.cross_terms[s : s + chunk])
        _push_top(heap, part, s, R)
    idx, sc = _drain(heap)
    return idx, sc + tables.offset


def exact_scan(q, database, R: int, chunk: int = _SCAN_CHUNK):
    """Exact Euclidean top-R (the ground-truth path)."""
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    q = np.asarray(q, dtype=np.float64)
    database = np.asarray(database)
    R = min(R, database.shape[0])
    heap: list = []
    for s in range(0, database.shape[0], chunk):
        part = sq_dists(q[None, :], database[s : s + chunk])[0]
        _push_top(heap, part, s, R)
    return _drain(heap)


def _batch(scan, queries, R, *args) -> SearchResult:
    idx, sc = [], []
    for q in np.asarray(queries):
        i, s = scan(q, *args, R)
        idx.append(i)
        sc.append(s)
    return SearchResult(np.array(idx, dtype=np.int64).reshape(len(idx), -1),
                        np.array(sc, dtype=np.float64).reshape(len(sc), -1))


def adc_search(queries, db: EncodedDatabase, codebook: Codebook, R: int) -> SearchResult:
    return _batch(lambda q, R_: adc_scan(q, db, codebook, R_), queries, R)


def exact_search(queries, database, R: int) -> SearchResult:
    return _batch(lambda q, R_: exact_scan(q, database, R_), queries, R)


def ground_truth(queries, database, n_neighbors: int = 100) -> np.ndarray:
    """Exact nearest-neighbor lists as an int32 ``(n_queries, n_neighbors)`` array."""
    return exact_search(queries, database, n_neighbors).indices.astype(np.int32)


def recall_at_r(results, ground_truth, R: int) -> float:
    """Fraction of queries whose top-R list contains the true nearest neighbor.

    ``results`` may be a ``SearchResult`` or an index array; only the first
    ground-truth column (the single nearest neighbor) is used.
    """
    idx = results.indices if isinstance(results, SearchResult) else np.asarray(results)
    gt = np.asarray(ground_truth)
    if idx.shape[0] != gt.shape[0]:
        raise ValueError(f"{idx.shape[0]} result rows vs {gt.shape[0]} ground-truth rows")
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    if idx.shape[0] == 0:
        raise ValueError("recall over zero queries is undefined")
    hits = np.any(idx[:, :R] == gt[:, :1], axis=1)
    return float(hits.mean())


def write_results_csv(result: SearchResult, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["query_id", "rank", "db_index", "score"])
        for qi in range(result.indices.shape[0]):
            for rank, (i, s) in enumerate(zip(result.indices[qi], result.scores[qi])):
                w.writerow([qi, rank, int(i), repr(float(s))])
