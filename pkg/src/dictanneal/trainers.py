"""Codebook training: PQ and RVQ baselines, dictionary annealing, DARVQ, online updates.

Dictionary annealing refines an existing additive codebook one dictionary at
a time.  Each iteration sorts dictionaries by norm, beam-encodes the data,
picks a dictionary ``m`` and rebuilds it against the intermediate dataset
``x' = e_x + c_m(i_m(x))`` (the residual plus that dictionary's own
contribution).  The rebuild is a k-means run that starts in a
low-dimensional PCA subspace of ``x'``, sized by how balanced the dictionary
currently is, and is grown back to the full space with warm starts.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .codebook import (
    Codebook,
    check_codes,
    entropy,
    quantization_error,
    reconstruct_all,
    residuals,
    sort_by_norm,
)
from .encoder import encode
from .kmeans import KMeansConfig, assign, kmeans_fit
from .numerics import pca
from .vecio import check_dataset


@dataclass(frozen=True)
class DAConfig:
    iters: int | None = None     # None: one sweep, i.e. M iterations
    beam_width: int = 10
    subspace_steps: int = 5
    seed: int = 0
    quit_tol: float = 1e-4       # relative improvement per full sweep
    pick: str = "random"         # or "round_robin"
    kmeans_iters: int = 100
    kmeans_tol: float = 1e-4

    def __post_init__(self):
        if self.iters is not None and self.iters < 1:
            raise ValueError(f"iters must be >= 1, got {self.iters}")
        if self.beam_width < 1:
            raise ValueError(f"beam width must be >= 1, got {self.beam_width}")
        if self.subspace_steps < 1:
            raise ValueError(f"subspace_steps must be >= 1, got {self.subspace_steps}")
        if self.quit_tol < 0:
            raise ValueError("quit_tol must be >= 0")
        if self.pick not in ("random", "round_robin"):
            raise ValueError(f"unknown pick mode {self.pick!r}")


@dataclass
class TrainReport:
    """Convergence record: one entry per completed annealing iteration."""

    initial_error: float | None = None
    entries: list = field(default_factory=list)

    @property
    def errors(self) -> list:
        return [e["error"] for e in self.entries]

    @property
    def final_error(self) -> float | None:
        return self.entries[-1]["error"] if self.entries else self.initial_error

    def extend(self, other: "TrainReport") -> None:
        offset = len(self.entries)
        if self.initial_error is None:
            self.initial_error = other.initial_error
        for e in other.entries:
            self.entries.append({**e, "iteration": e["iteration"] + offset})

    def write_jsonl(self, path, append: bool = False) -> None:
        with open(path, "a" if append else "w") as f:
            for e in self.entries:
                f.write(json.dumps(e, sort_keys=True) + "\n")


def _round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


# --------------------------------------------------------------------------
# baselines


def train_pq(train, M: int, K: int, seed: int = 0, max_iters: int = 100, tol: float = 1e-4) -> Codebook:
    """Product quantizer embedded as an additive codebook.

    Dictionary ``m`` is zero outside its contiguous ``d / M`` slice.
    """
    train = check_dataset(train, "train", allow_empty=False)
    n, d = train.shape
    if d % M:
        raise ValueError(f"d={d} is not divisible by M={M}")
    w = d // M
    el = np.zeros((M, K, d), dtype=np.float32)
    for m in range(M):
        sl = slice(m * w, (m + 1) * w)
        km = kmeans_fit(train[:, sl], KMeansConfig(K, max_iters, tol, seed + m))
        el[m, :, sl] = km.centroids
    return Codebook(el)


def train_rvq(train, M: int, K: int, seed: int = 0, max_iters: int = 100, tol: float = 1e-4):
    """Residual vector quantization with greedy per-stage assignment.

    Returns:
        ``(codebook, codes)`` in training order.
    """
    train = check_dataset(train, "train", allow_empty=False)
    n, d = train.shape
    if K > n:
        raise ValueError(f"K={K} exceeds the number of training vectors {n}")
    res = train.astype(np.float64)
    el = np.zeros((M, K, d), dtype=np.float32)
    codes = np.zeros((n, M), dtype=np.int32)
    for m in range(M):
        km = kmeans_fit(res, KMeansConfig(K, max_iters, tol, seed + m))
        el[m] = km.centroids
        codes[:, m] = km.assignments
        res -= el[m][km.assignments].astype(np.float64)
    return Codebook(el), codes


# --------------------------------------------------------------------------
# dictionary annealing


def build_intermediate(data, codebook: Codebook, codes, m: int) -> np.ndarray:
    """Rows ``e_x + c_m(i_m(x))``: what dictionary ``m`` alone has to fit."""
    if not 0 <= m < codebook.m:
        raise ValueError(f"dictionary index {m} outside [0, {codebook.m})")
    codes = check_codes(codebook, codes)
    e = residuals(data, codebook, codes)
    return e + codebook.elements[m][codes[:, m]]


def subspace_schedule(d: int, K: int, entropy_bits: float, steps: int) -> list:
    """Dimensions for the growing-subspace k-means runs.

    Starts at ``d * 2**S / K`` (clamped to ``[1, d]``) and grows geometrically
    to ``d`` over ``steps`` steps; repeated dimensions are dropped.
    """
    if steps < 1:
        raise ValueError(f"steps must be >= 1, got {steps}")
    max_bits = math.log2(K) if K > 1 else 0.0
    if entropy_bits < -1e-9 or entropy_bits > max_bits + 1e-9:
        raise ValueError(f"entropy {entropy_bits} outside [0, log2 K = {max_bits}]")
    s = min(max(entropy_bits, 0.0), max_bits)
    d1 = min(max(_round_half_up(d * 2.0**s / K), 1), d)
    dims = []
    for n in range(steps + 1):
        dn = min(max(_round_half_up(d1 * (d / d1) ** (n / steps)), 1), d)
        if not dims or dn > dims[-1]:
            dims.append(dn)
    if dims[-1] != d:
        dims.append(d)
    return dims


def anneal_dictionary(intermediate, elements, entropy_bits: float, config: DAConfig = DAConfig(),
                      info: dict | None = None) -> np.ndarray:
    """Refit one dictionary to its intermediate dataset.

    PCA is taken on the centered intermediate data.  k-means first runs on
    the leading ``d_1`` coordinates, warm-started from the rotated current
    elements, and each later step pads the previous centroids with zeros and
    continues on more coordinates until the full space is reached.  The
    centroids are then rotated back and the mean re-added.

    If the result fits the intermediate data worse than the incoming
    elements, a full-space k-means warm-started from the incoming elements
    is used instead, so the single-dictionary SSE never grows.

    Args:
        intermediate: ``(n, d)`` intermediate dataset.
        elements: ``(K, d)`` current dictionary.
        entropy_bits: current code entropy of this dictionary; sets ``d_1``.
        config: annealing options.
        info: optional dict filled with the schedule and SSE bookkeeping.

    Returns:
        ``(K, d)`` float64 array of new elements.
    """
    x = np.asarray(intermediate, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ValueError("intermediate dataset is empty")
    cur = np.asarray(elements, dtype=np.float64)
    K, d = cur.shape
    if x.shape[1] != d:
        raise ValueError(f"intermediate d={x.shape[1]} vs dictionary d={d}")

    rot = pca(x)
    y = (x - rot.mean) @ rot.rows.T
    z = (cur - rot.mean) @ rot.rows.T
    dims = subspace_schedule(d, K, entropy_bits, config.subspace_steps)
    centroids = z[:, : dims[0]]
    for dn in dims:
        if centroids.shape[1] < dn:
            centroids = np.hstack([centroids, np.zeros((K, dn - centroids.shape[1]))])
        cfg = KMeansConfig(K, config.kmeans_iters, config.kmeans_tol, config.seed, init="provided")
        centroids = kmeans_fit(y[:, :dn], cfg, warm_start=centroids).centroids
    new = centroids @ rot.rows + rot.mean

    _, sse_in = assign(x, cur)
    _, sse_new = assign(x, new)
    fallback = sse_new > sse_in
    if fallback:
        cfg = KMeansConfig(K, config.kmeans_iters, config.kmeans_tol, config.seed, init="provided")
        res = kmeans_fit(x, cfg, warm_start=cur)
        new, sse_new = res.centroids, res.sse
    if info is not None:
        info.update(schedule=dims, sse_in=sse_in, sse_out=sse_new, fallback=bool(fallback))
    return new


@dataclass
class _Encoded:
    codebook: Codebook  # norm-sorted
    codes: np.ndarray
    error: float
    entropies: list


def _encode_sorted(data, codebook: Codebook, config: DAConfig) -> _Encoded:
    cb, _, _ = sort_by_norm(codebook)
    codes = encode(data, cb, "beam", L=config.beam_width)
    err = quantization_error(data, cb, codes)
    ents = [entropy(codes, m, cb.k) for m in range(cb.m)]
    return _Encoded(cb, codes, err, ents)


def _pick(rng: np.random.Generator, config: DAConfig, iteration: int, M: int) -> int:
    if config.pick == "round_robin":
        return iteration % M
    return int(rng.integers(M))


def _anneal_step(data, state: _Encoded, config: DAConfig, rng, iteration: int):
    m = _pick(rng, config, iteration, state.codebook.m)
    t0 = time.perf_counter()
    inter = build_intermediate(data, state.codebook, state.codes, m)
    info: dict = {}
    new = anneal_dictionary(inter, state.codebook.elements[m], state.entropies[m], config, info)
    info["anneal_s"] = time.perf_counter() - t0
    info["picked"] = m
    return state.codebook.replace(m, new), info


def da_iterate(data, codebook: Codebook, config: DAConfig, rng, iteration: int = 0):
    """One annealing iteration: sort, beam-encode, pick, rebuild.

    Returns:
        ``(new_codebook, codes, entry)``.  ``codes`` and ``entry["error"]``
        describe the encoding made at the start of the iteration, before the
        picked dictionary was replaced.
    """
    data = check_dataset(data, "dataset", allow_empty=False)
    t0 = time.perf_counter()
    state = _encode_sorted(data, codebook, config)
    enc_s = time.perf_counter() - t0
    new_cb, info = _anneal_step(data, state, config, rng, iteration)
    entry = {"iteration": iteration, "error": state.error, "entropies": state.entropies,
             "picked": info["picked"], "encode_s": enc_s, "anneal_s": info["anneal_s"]}
    return new_cb, state.codes, entry


def train_da(data, codebook: Codebook, config: DAConfig = DAConfig()):
    """Run dictionary annealing from an initial codebook.

    Stops after ``config.iters`` iterations (default ``M``) or when a full
    sweep of ``M`` iterations improves the error by less than
    ``config.quit_tol`` relative.  The best encoding seen is returned, so the
    final error never exceeds the initial one.

    Returns:
        ``(codebook, codes, report)``; the codebook is norm-sorted and
        ``codes`` is its beam encoding of ``data``.
    """
    data = check_dataset(data, "dataset", allow_empty=False)
    if data.shape[1] != codebook.d:
        raise ValueError(f"data d={data.shape[1]} vs codebook d={codebook.d}")
    M = codebook.m
    iters = config.iters or M
    rng = np.random.default_rng(config.seed)

    state = _encode_sorted(data, codebook, config)
    report = TrainReport(initial_error=state.error)
    best = state
    history = [state.error]
    for it in range(iters):
        new_cb, info = _anneal_step(data, state, config, rng, it)
        t0 = time.perf_counter()
        state = _encode_sorted(data, new_cb, config)
        report.entries.append({
            "iteration": it + 1,
            "error": state.error,
            "entropies": state.entropies,
            "picked": info["picked"],
            "schedule": info["schedule"],
            "fallback": info["fallback"],
            "anneal_s": info["anneal_s"],
            "encode_s": time.perf_counter() - t0,
        })
        history.append(state.error)
        if state.error < best.error:
            best = state
        if len(history) > M and (it + 1) % M == 0:
            prev = history[-1 - M]
            if prev - state.error < config.quit_tol * prev:
                break
    return best.codebook, best.codes, report


def train_darvq(train, M: int, K: int, config: DAConfig = DAConfig()):
    """RVQ where every stage first anneals the dictionaries learned so far.

    Stage ``m`` runs annealing over the ``m - 1`` existing dictionaries
    (``m - 1`` iterations unless ``config.iters`` is set), beam-encodes,
    then fits dictionary ``m`` with k-means on the remaining residual.

    Returns:
        ``(codebook, codes)``; the last dictionary comes last.
    """
    train = check_dataset(train, "train", allow_empty=False)
    n, d = train.shape
    if K > n:
        raise ValueError(f"K={K} exceeds the number of training vectors {n}")
    x = train.astype(np.float64)
    km = kmeans_fit(x, KMeansConfig(K, config.kmeans_iters, config.kmeans_tol, config.seed))
    cb = Codebook(km.centroids[None])
    codes = km.assignments[:, None].astype(np.int32)
    for m in range(1, M):
        stage_cfg = replace(config, iters=config.iters or m, seed=config.seed + 1000 * m)
        cb, codes, _ = train_da(train, cb, stage_cfg)
        res = x - reconstruct_all(cb, codes)
        km = kmeans_fit(res, KMeansConfig(K, config.kmeans_iters, config.kmeans_tol, config.seed + m))
        cb = cb.append(km.centroids)
        codes = np.hstack([codes, km.assignments[:, None]]).astype(np.int32)
    return cb, codes


def online_update(codebook: Codebook, batch, config: DAConfig = DAConfig()):
    """Continue annealing an existing codebook on a new batch of data."""
    batch = check_dataset(batch, "batch")
    if batch.shape[0] == 0:
        raise ValueError("online update needs a nonempty batch")
    cb, _, report = train_da(batch, codebook, config)
    return cb, report
