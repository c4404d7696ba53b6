"""Encoding vectors against a fixed codebook.

``beam_encode`` is the main encoder.  Dictionaries are visited in descending
norm order and the ``L`` best partial sums are kept at each stage.  Extending
a candidate prefix ``a`` with element ``c`` is scored incrementally::

    ||x - a - c||^2 = ||x - a||^2 + ||x - c||^2 - ||x||^2 + 2 <c, a>

where ``<c, a>`` is a sum of lookups into the precomputed cross-term table.
Scores therefore stay equal to the true squared residual of each prefix.

The other encoders are baselines and oracles: greedy stage-wise (classic
RVQ), ICM coordinate descent, exhaustive search for tiny ``K**M``, and
per-subspace PQ encoding.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .codebook import Codebook, CrossTermTable, build_cross_terms, make_encoded
from .errors import ContractError
from .numerics import sq_dists

EXHAUSTIVE_LIMIT = 2**20
_BEAM_BUDGET = 1 << 22  # scratch floats per beam chunk
METHODS = ("beam", "greedy", "icm", "exhaustive", "pq")


def _as_batch(x, d):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != d:
        raise ValueError(f"vector dimension {x.shape[1]} does not match codebook d={d}")
    return x, single


def _lex_rank(prefix: np.ndarray) -> np.ndarray:
    """Per-row rank of each candidate prefix in lexicographic order."""
    n, L, depth = prefix.shape
    keys = tuple(prefix[:, :, j] for j in range(depth - 1, -1, -1))
    order = np.lexsort(keys, axis=-1)
    rank = np.empty((n, L), dtype=np.int64)
    np.put_along_axis(rank, order, np.arange(L)[None, :].repeat(n, 0), axis=-1)
    return rank


def _beam_chunk(x, el, table, L, trace):
    n = x.shape[0]
    M, K, _ = el.shape
    xn = np.einsum("ij,ij->i", x, x)
    kk = np.arange(K)

    scores = sq_dists(x, el[0], x_norms=xn)
    keep = min(L, K)
    sel = np.lexsort((np.broadcast_to(kk, scores.shape), scores), axis=-1)[:, :keep]
    prefix = sel[:, :, None]
    scores = np.take_along_axis(scores, sel, axis=-1)
    if trace is not None:
        trace.append((prefix.copy(), scores.copy()))

    for m in range(1, M):
        dist = sq_dists(x, el[m], x_norms=xn)
        inner = np.zeros((n, prefix.shape[1], K))
        for j in range(m):
            inner += table[j, m][prefix[:, :, j]]
        cand = scores[:, :, None] + dist[:, None, :] - xn[:, None, None] + 2.0 * inner
        tie = _lex_rank(prefix)[:, :, None] * K + kk[None, None, :]
        cand = cand.reshape(n, -1)
        keep = min(L, cand.shape[1])
        sel = np.lexsort((tie.reshape(n, -1), cand), axis=-1)[:, :keep]
        parent = sel // K
        prefix = np.concatenate(
            [np.take_along_axis(prefix, parent[:, :, None], axis=1), (sel % K)[:, :, None]], axis=2
        )
        scores = np.take_along_axis(cand, sel, axis=-1)
        if trace is not None:
            trace.append((prefix.copy(), scores.copy()))
    return prefix[:, 0, :], scores[:, 0]


def beam_encode_batch(x, codebook: Codebook, cross_terms: CrossTermTable | None = None, L: int = 10, trace=None):
    """Beam-search encode each row of ``x``.

    Args:
        x: ``(n, d)`` vectors (or a single ``(d,)`` vector).
        codebook: must be sorted by descending dictionary norm.
        cross_terms: table from ``build_cross_terms``; built if omitted.
        L: beam width.
        trace: optional list; receives ``(prefixes, scores)`` per stage, with
            candidates ordered best first.

    Returns:
        ``(codes, sq_residuals)``; codes are ``(n, M)`` int64.
    """
    if L < 1:
        raise ValueError(f"beam width must be >= 1, got {L}")
    if not codebook.is_norm_sorted:
        raise ContractError("beam search requires dictionaries sorted by descending norm; call sort_by_norm first")
    x, single = _as_batch(x, codebook.d)
    table = (cross_terms or build_cross_terms(codebook)).table
    el = codebook.elements.astype(np.float64)
    M, K, _ = el.shape
    codes = np.empty((x.shape[0], M), dtype=np.int64)
    errs = np.empty(x.shape[0])
    step = max(1, _BEAM_BUDGET // (min(L, K ** max(M - 1, 1)) * K))
    if trace is not None and x.shape[0] > step:
        raise ValueError("trace mode is meant for small batches")
    for s in range(0, x.shape[0], step):
        codes[s : s + step], errs[s : s + step] = _beam_chunk(x[s : s + step], el, table, L, trace)
    np.maximum(errs, 0.0, out=errs)
    if single:
        return codes[0], errs[0]
    return codes, errs


def beam_encode(x, codebook: Codebook, cross_terms: CrossTermTable | None = None, L: int = 10) -> np.ndarray:
    """Encode a single vector; see ``beam_encode_batch``."""
    codes, _ = beam_encode_batch(np.asarray(x)[None, :], codebook, cross_terms, L)
    return codes[0]


def greedy_encode_batch(x, codebook: Codebook) -> np.ndarray:
    """Stage-wise nearest element on the running residual, in codebook order."""
    x, single = _as_batch(x, codebook.d)
    res = x.copy()
    codes = np.empty((x.shape[0], codebook.m), dtype=np.int64)
    for m in range(codebook.m):
        el = codebook.elements[m].astype(np.float64)
        codes[:, m] = np.argmin(sq_dists(res, el), axis=1)
        res -= el[codes[:, m]]
    return codes[0] if single else codes


def icm_encode_batch(x, codebook: Codebook, rounds: int = 10, init=None) -> np.ndarray:
    """Iterated conditional modes.

    Starting from greedy codes (or ``init``), each coordinate in turn is set
    to the element minimizing the full residual with the others held fixed.
    A code only changes on strict improvement, so the residual never grows.
    Stops after a round with no change or after ``rounds`` rounds.
    """
    if rounds < 1:
        raise ValueError(f"rounds must be >= 1, got {rounds}")
    x, single = _as_batch(x, codebook.d)
    codes = greedy_encode_batch(x, codebook) if init is None else np.array(np.atleast_2d(init), dtype=np.int64)
    el = codebook.elements.astype(np.float64)
    rows = np.arange(x.shape[0])
    recon = np.zeros_like(x)
    for m in range(codebook.m):
        recon += el[m, codes[:, m]]
    for _ in range(rounds):
        changed = False
        for m in range(codebook.m):
            target = x - recon + el[m, codes[:, m]]
            best = np.argmin(sq_dists(target, el[m]), axis=1)
            cur_err = np.einsum("ij,ij->i", target - el[m, codes[:, m]], target - el[m, codes[:, m]])
            new_err = np.einsum("ij,ij->i", target - el[m, best], target - el[m, best])
            move = rows[new_err < cur_err]
            if move.size:
                changed = True
                recon[move] += el[m, best[move]] - el[m, codes[move, m]]
                codes[move, m] = best[move]
        if not changed:
            break
    return codes[0] if single else codes


def icm_encode(x, codebook: Codebook, rounds: int = 10) -> np.ndarray:
    return icm_encode_batch(np.asarray(x)[None, :], codebook, rounds)[0]


def _all_codes(M: int, K: int) -> np.ndarray:
    return np.indices((K,) * M).reshape(M, -1).T


def exhaustive_encode_batch(x, codebook: Codebook) -> np.ndarray:
    """Global minimizer over all ``K**M`` codes; ties go to the lexicographically smallest."""
    M, K = codebook.m, codebook.k
    if K**M > EXHAUSTIVE_LIMIT:
        raise ValueError(f"exhaustive search over K**M = {K}**{M} exceeds the limit of {EXHAUSTIVE_LIMIT}")
    x, single = _as_batch(x, codebook.d)
    combos = _all_codes(M, K)
    el = codebook.elements.astype(np.float64)
    sums = np.zeros((combos.shape[0], codebook.d))
    for m in range(M):
        sums += el[m, combos[:, m]]
    s_norms = np.einsum("ij,ij->i", sums, sums)
    step = max(1, (1 << 22) // combos.shape[0])
    best = np.empty(x.shape[0], dtype=np.int64)
    for s in range(0, x.shape[0], step):
        best[s : s + step] = np.argmin(sq_dists(x[s : s + step], sums, c_norms=s_norms), axis=1)
    codes = combos[best]
    return codes[0] if single else codes


def exhaustive_encode(x, codebook: Codebook) -> np.ndarray:
    return exhaustive_encode_batch(np.asarray(x)[None, :], codebook)[0]


def pq_slices(codebook: Codebook):
    """Contiguous slice owned by each dictionary of a product codebook.

    Raises:
        ValueError: if ``d`` is not divisible by ``M`` or a dictionary has
            nonzero entries outside its slice.
    """
    M, d = codebook.m, codebook.d
    if d % M:
        raise ValueError(f"d={d} is not divisible by M={M}; not a product codebook")
    w = d // M
    slices = [slice(m * w, (m + 1) * w) for m in range(M)]
    for m, sl in enumerate(slices):
        outside = np.ones(d, dtype=bool)
        outside[sl] = False
        if np.any(codebook.elements[m][:, outside] != 0):
            raise ValueError(f"dictionary {m} has support outside its subspace; not a product codebook")
    return slices


def pq_encode_batch(x, codebook: Codebook) -> np.ndarray:
    """Nearest centroid independently in each subspace."""
    x, single = _as_batch(x, codebook.d)
    codes = np.empty((x.shape[0], codebook.m), dtype=np.int64)
    for m, sl in enumerate(pq_slices(codebook)):
        codes[:, m] = np.argmin(sq_dists(x[:, sl], codebook.elements[m][:, sl]), axis=1)
    return codes[0] if single else codes


def pq_encode(x, codebook: Codebook) -> np.ndarray:
    return pq_encode_batch(np.asarray(x)[None, :], codebook)[0]


def encode(data, codebook: Codebook, method: str = "beam", L: int = 10, rounds: int = 10,
           cross_terms: CrossTermTable | None = None, n_jobs: int = 1, chunk: int = 4096) -> np.ndarray:
    """Encode every row of ``data``; returns an ``(n, M)`` int32 code matrix.

    Rows are processed in fixed-size chunks, optionally on a thread pool.
    Chunks are independent, so the output does not depend on ``n_jobs``.
    """
    if method not in METHODS:
        raise ValueError(f"unknown encoding method {method!r}; choose from {METHODS}")
    data = np.asarray(data, dtype=np.float32)
    if data.ndim != 2 or (data.shape[0] and data.shape[1] != codebook.d):
        raise ValueError(f"data shape {data.shape} incompatible with codebook d={codebook.d}")
    if method == "beam":
        if not codebook.is_norm_sorted:
            raise ContractError("beam search requires dictionaries sorted by descending norm; call sort_by_norm first")
        cross_terms = cross_terms or build_cross_terms(codebook)
        fn = lambda part: beam_encode_batch(part, codebook, cross_terms, L)[0]
    elif method == "greedy":
        fn = lambda part: greedy_encode_batch(part, codebook)
    elif method == "icm":
        fn = lambda part: icm_encode_batch(part, codebook, rounds)
    elif method == "exhaustive":
        fn = lambda part: exhaustive_encode_batch(part, codebook)
    else:
        pq_slices(codebook)
        fn = lambda part: pq_encode_batch(part, codebook)

    n = data.shape[0]
    out = np.empty((n, codebook.m), dtype=np.int32)
    starts = list(range(0, n, chunk))
    if n_jobs > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(lambda s: fn(data[s : s + chunk]), starts))
    else:
        parts = [fn(data[s : s + chunk]) for s in starts]
    for s, part in zip(starts, parts):
        out[s : s + chunk] = part
    return out


def encode_dataset(data, codebook: Codebook, method: str = "beam", L: int = 10, rounds: int = 10,
                   n_jobs: int = 1, codebook_id: str = ""):
    """Encode ``data`` and attach the per-vector cross terms needed by ADC."""
    table = build_cross_terms(codebook)
    codes = encode(data, codebook, method, L=L, rounds=rounds, cross_terms=table, n_jobs=n_jobs)
    return make_encoded(codebook, codes, table, codebook_id)
