"""Additive codebooks: reconstruction, error accounting, cross terms, diagnostics.

A codebook holds ``M`` dictionaries of ``K`` elements each, all living in the
same ``d``-dimensional space; a vector is approximated by the sum of one
element per dictionary.  Code matrices are ``(n, M)`` integer arrays.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError

CODEBOOK_MAGIC = b"AVQ1"
ENCODED_MAGIC = b"AVQE"


@dataclass(frozen=True)
class Codebook:
    elements: np.ndarray  # (M, K, d) float32

    def __post_init__(self):
        el = np.ascontiguousarray(self.elements, dtype=np.float32)
        if el.ndim != 3 or min(el.shape) < 1:
            raise ValueError(f"codebook elements must be (M, K, d) with all sizes >= 1, got {el.shape}")
        if not np.all(np.isfinite(el)):
            raise ValueError("codebook contains non-finite elements")
        el.setflags(write=False)
        object.__setattr__(self, "elements", el)

    @property
    def m(self) -> int:
        return self.elements.shape[0]

    @property
    def k(self) -> int:
        return self.elements.shape[1]

    @property
    def d(self) -> int:
        return self.elements.shape[2]

    def dictionary_norms(self) -> np.ndarray:
        """Total squared norm of each dictionary, ``sum_j ||c_m(j)||^2``."""
        el = self.elements.astype(np.float64)
        return np.einsum("mkd,mkd->m", el, el)

    @property
    def is_norm_sorted(self) -> bool:
        """Ordering tag: True when dictionaries are in non-increasing norm order."""
        norms = self.dictionary_norms()
        return bool(np.all(norms[:-1] >= norms[1:]))

    def replace(self, m: int, elements) -> "Codebook":
        el = self.elements.copy()
        el[m] = elements
        return Codebook(el)

    def truncate(self, m: int) -> "Codebook":
        return Codebook(self.elements[:m])

    def append(self, elements) -> "Codebook":
        return Codebook(np.concatenate([self.elements, np.asarray(elements, np.float32)[None]], axis=0))


def check_codes(codebook: Codebook, codes) -> np.ndarray:
    codes = np.asarray(codes)
    if codes.ndim == 1:
        codes = codes[None, :]
    if codes.ndim != 2 or codes.shape[1] != codebook.m:
        raise ValueError(f"code matrix must be (n, {codebook.m}), got {codes.shape}")
    if not np.issubdtype(codes.dtype, np.integer):
        raise ValueError("codes must be integers")
    if codes.size and (codes.min() < 0 or codes.max() >= codebook.k):
        raise ValueError(f"code outside [0, {codebook.k})")
    return codes.astype(np.intp, copy=False)


_RECON_CHUNK = 8192


def reconstruct_all(codebook: Codebook, codes) -> np.ndarray:
    """Row-wise sums of the selected elements, accumulated in float64.

    Addends are sorted per coordinate before summing, so the result is
    bit-identical under any permutation of the dictionaries.
    """
    codes = check_codes(codebook, codes)
    n = codes.shape[0]
    out = np.empty((n, codebook.d), dtype=np.float64)
    if codebook.m == 1:
        out[:] = codebook.elements[0, codes[:, 0]]
        return out
    dicts = np.arange(codebook.m)
    for s in range(0, n, _RECON_CHUNK):
        parts = codebook.elements[dicts[None, :], codes[s : s + _RECON_CHUNK]].astype(np.float64)
        parts.sort(axis=1)
        out[s : s + _RECON_CHUNK] = parts.sum(axis=1)
    return out


def reconstruct(codebook: Codebook, codes_row) -> np.ndarray:
    row = np.asarray(codes_row)
    if row.ndim != 1:
        raise ValueError("reconstruct takes a single code row")
    return reconstruct_all(codebook, row[None, :])[0]


def residuals(data, codebook: Codebook, codes) -> np.ndarray:
    """``e_x = x - reconstruct(codes(x))`` for every row (float64)."""
    data = np.asarray(data, dtype=np.float64)
    codes = check_codes(codebook, codes)
    if data.ndim != 2 or data.shape[0] != codes.shape[0] or data.shape[1] != codebook.d:
        raise ValueError(f"shape mismatch: data {data.shape}, codes {codes.shape}, d={codebook.d}")
    return data - reconstruct_all(codebook, codes)


def quantization_error(data, codebook: Codebook, codes) -> float:
    """Mean squared residual norm per vector."""
    e = residuals(data, codebook, codes)
    if e.shape[0] == 0:
        raise ValueError("quantization error of an empty dataset is undefined")
    return float(np.einsum("ij,ij->i", e, e).mean())


def entropy(codes, m: int, k: int | None = None) -> float:
    """Shannon entropy (bits) of the empirical code distribution in column ``m``."""
    codes = np.asarray(codes)
    if codes.ndim != 2 or codes.shape[0] == 0:
        raise ValueError("entropy needs a nonempty (n, M) code matrix")
    counts = np.bincount(codes[:, m].astype(np.intp), minlength=k or 0)
    p = counts[counts > 0] / codes.shape[0]
    return float(max(0.0, -(p * np.log2(p)).sum()))


def mutual_information(codes, i: int, j: int) -> float:
    """Plug-in mutual information (bits) between code columns ``i`` and ``j``."""
    if i == j:
        raise ValueError("mutual information of a column with itself is its entropy; use entropy()")
    codes = np.asarray(codes)
    if codes.ndim != 2 or codes.shape[0] == 0:
        raise ValueError("mutual information needs a nonempty (n, M) code matrix")
    a = codes[:, i].astype(np.intp)
    b = codes[:, j].astype(np.intp)
    ka, kb = int(a.max()) + 1, int(b.max()) + 1
    joint = np.bincount(a * kb + b, minlength=ka * kb).reshape(ka, kb).astype(np.float64)
    joint /= codes.shape[0]
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    nz = joint > 0
    outer = np.outer(pa, pb)
    mi = (joint[nz] * np.log2(joint[nz] / outer[nz])).sum()
    return float(max(0.0, mi))


def mi_matrix(codes) -> np.ndarray:
    """Symmetric ``M x M`` matrix of pairwise MI; the diagonal holds entropies."""
    codes = np.asarray(codes)
    M = codes.shape[1]
    out = np.zeros((M, M))
    for a in range(M):
        out[a, a] = entropy(codes, a)
        for b in range(a + 1, M):
            out[a, b] = out[b, a] = mutual_information(codes, a, b)
    return out


def sort_by_norm(codebook: Codebook, codes=None):
    """Reorder dictionaries by descending total squared norm.

    Code columns are permuted identically so every reconstruction is unchanged.
    The sort is stable, so equal-norm dictionaries keep their relative order.

    Returns:
        ``(codebook, codes, order)`` where ``order[new] = old``.
    """
    order = np.argsort(-codebook.dictionary_norms(), kind="stable")
    sorted_cb = Codebook(codebook.elements[order])
    if codes is not None:
        codes = check_codes(codebook, codes)[:, order]
    return sorted_cb, codes, order


@dataclass(frozen=True)
class CrossTermTable:
    """``table[a, b, i, j] = <c_a(i), c_b(j)>`` for all dictionary pairs (float64).

    Diagonal blocks ``a == b`` are stored too but never used by cross-term sums.
    """

    table: np.ndarray  # (M, M, K, K)

    @property
    def m(self) -> int:
        return self.table.shape[0]


def build_cross_terms(codebook: Codebook) -> CrossTermTable:
    el = codebook.elements.astype(np.float64)
    return CrossTermTable(np.einsum("aid,bjd->abij", el, el))


def cross_terms_all(codes, table: CrossTermTable) -> np.ndarray:
    """Per-row ``sum_{a != b} <c_a(i_a), c_b(i_b)>``, i.e. twice the upper-pair sum."""
    codes = np.asarray(codes, dtype=np.intp)
    if codes.ndim == 1:
        codes = codes[None, :]
    out = np.zeros(codes.shape[0], dtype=np.float64)
    for a in range(table.m):
        for b in range(a + 1, table.m):
            out += table.table[a, b][codes[:, a], codes[:, b]]
    return 2.0 * out


def cross_term_of(codes_row, table: CrossTermTable) -> float:
    return float(cross_terms_all(np.asarray(codes_row)[None, :], table)[0])


@dataclass(frozen=True)
class EncodedDatabase:
    """Compressed database: codes plus the stored cross term per vector."""

    codes: np.ndarray        # (n, M) int32
    cross_terms: np.ndarray  # (n,) float32
    k: int
    codebook_id: str = ""

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def m(self) -> int:
        return self.codes.shape[1]


def make_encoded(codebook: Codebook, codes, table: CrossTermTable | None = None, codebook_id: str = "") -> EncodedDatabase:
    codes = check_codes(codebook, codes)
    table = table or build_cross_terms(codebook)
    cross = cross_terms_all(codes, table).astype(np.float32)
    return EncodedDatabase(codes.astype(np.int32), cross, codebook.k, codebook_id or codebook_fingerprint(codebook))


def codebook_fingerprint(codebook: Codebook) -> str:
    return hashlib.sha256(codebook.elements.tobytes()).hexdigest()[:16]


def save_codebook(codebook: Codebook, path) -> None:
    header = CODEBOOK_MAGIC + struct.pack("<III", codebook.m, codebook.k, codebook.d)
    with open(path, "wb") as f:
        f.write(header)
        f.write(codebook.elements.astype("<f4").tobytes())


def load_codebook(path) -> Codebook:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CODEBOOK_MAGIC:
        raise FormatError("bad codebook magic", path, 0)
    if len(raw) < 16:
        raise FormatError("truncated codebook header", path, 4)
    m, k, d = struct.unpack_from("<III", raw, 4)
    expected = 16 + 4 * m * k * d
    if len(raw) != expected:
        raise FormatError(f"codebook payload is {len(raw) - 16} bytes, expected {expected - 16}", path, 16)
    el = np.frombuffer(raw, dtype="<f4", offset=16).reshape(m, k, d).astype(np.float32)
    try:
        return Codebook(el)
    except ValueError as exc:
        raise FormatError(str(exc), path) from None


def save_encoded(db: EncodedDatabase, path) -> None:
    if db.k > 256:
        raise ValueError("the encoded-database file stores one byte per code and needs K <= 256")
    header = ENCODED_MAGIC + struct.pack("<III", db.n, db.m, db.k)
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(db.codes, dtype=np.uint8).tobytes())
        f.write(np.ascontiguousarray(db.cross_terms, dtype="<f4").tobytes())


def load_encoded(path) -> EncodedDatabase:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != ENCODED_MAGIC:
        raise FormatError("bad encoded-database magic", path, 0)
    if len(raw) < 16:
        raise FormatError("truncated encoded-database header", path, 4)
    n, m, k = struct.unpack_from("<III", raw, 4)
    if not 1 <= k <= 256:
        raise FormatError(f"K={k} outside [1, 256]", path, 12)
    expected = 16 + n * m + 4 * n
    if len(raw) != expected:
        raise FormatError(f"file is {len(raw)} bytes, expected {expected}", path, min(len(raw), expected))
    codes = np.frombuffer(raw, dtype=np.uint8, count=n * m, offset=16).reshape(n, m).astype(np.int32)
    if codes.size and codes.max() >= k:
        raise FormatError(f"code outside [0, {k})", path, 16)
    cross = np.frombuffer(raw, dtype="<f4", count=n, offset=16 + n * m).astype(np.float32)
    return EncodedDatabase(codes, cross, k)
