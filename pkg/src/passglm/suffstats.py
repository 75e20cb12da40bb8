"""Polynomial approximate sufficient statistics: enumeration, accumulation, merge.

Statistics are indexed by multi-indices ``k`` with total degree at most ``M``,
kept in graded lexicographic order (sorted by total degree, then by the dense
exponent vector, descending).  Multi-indices are stored sparsely as tuples of
``(position, exponent)`` pairs so that high-dimensional degree-1 sets stay
cheap.

Two accumulation forms exist:

* raw monomial sums ``t_k = sum_n (y_n x_n)**k`` for the logistic mapping,
  with the polynomial coefficients applied only at posterior-construction
  time (the statistics stay reusable across refits);
* general-form sums ``t_k = sum_n a'_k(y_n) x_n**k`` for every other mapping,
  where the per-record coefficient folds in the fitted polynomial because it
  depends on ``y_n``.

Every entry carries a Kahan compensation term so that sharded accumulation
and merge agree with a sequential pass to near machine precision.
"""

from __future__ import annotations

import math
import struct
import warnings
from functools import lru_cache

import numpy as np

from .chebyshev import PolyApprox
from .errors import (
    CapacityError,
    ConfigMismatchError,
    InvalidInputError,
    NumericError,
    StatsFormatError,
)
from .mappings import MappingSpec, degree_weights, fit_terms, get_mapping

__all__ = [
    "DEFAULT_INDEX_CAP",
    "MultiIndexSet",
    "SuffStats",
    "enumerate_indices",
    "new_stats",
    "accumulate",
    "merge",
    "serialize",
    "deserialize",
    "save_stats",
    "load_stats",
]

DEFAULT_INDEX_CAP = 1 << 26

_MODEL_IDS = {"logit": 1, "poisson": 2, "shuber": 3, "cauchy": 4, "gamma": 5, "probit": 6}
_MODEL_NAMES = {v: k for k, v in _MODEL_IDS.items()}

_MAGIC = b"PGLM"
_VERSION = 1
_HEADER = struct.Struct("<4sHHdQHdQ")


def _compositions(total: int, d: int, start: int = 0):
    """Sparse multi-indices of total degree ``total`` in descending lex order."""
    if total == 0:
        yield ()
        return
    for pos in range(start, d):
        for exp in range(total, 0, -1):
            for rest in _compositions(total - exp, d, pos + 1):
                yield ((pos, exp), *rest)


class MultiIndexSet:
    """All multi-indices of dimension ``d`` and total degree at most ``M``.

    Indices are sparse ``((position, exponent), ...)`` tuples in graded
    lexicographic order.  ``multinom[i]`` caches the multinomial coefficient
    ``(|k|; k)`` and ``degrees[i]`` the total degree of index ``i``.
    """

    def __init__(self, d: int, M: int, keys: list, degrees: np.ndarray, multinom: np.ndarray):
        self.d = d
        self.M = M
        self.keys = keys
        self.degrees = degrees
        self.multinom = multinom
        self._pos: dict | None = None
        self._parents: tuple[np.ndarray, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.keys)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, MultiIndexSet) and self.d == other.d and self.M == other.M
        )

    def position(self, key: tuple) -> int:
        """Position of a sparse multi-index in the canonical order."""
        if self.M <= 2:
            return self._position_m2(key)
        if self._pos is None:
            self._pos = {k: i for i, k in enumerate(self.keys)}
        return self._pos[key]

    def _position_m2(self, key: tuple) -> int:
        d = self.d
        if key == ():
            return 0
        if len(key) == 1:
            j, e = key[0]
            if e == 1:
                return 1 + j
            # e == 2
            return 1 + d + j * d - j * (j - 1) // 2
        (i, _), (j, _) = key
        return 1 + d + i * d - i * (i - 1) // 2 + (j - i)

    def pair_position(self, i: int, j: int) -> int:
        """Position of the degree-2 index with unit exponents at ``i <= j``
        (or exponent 2 when ``i == j``).  Only valid for ``M >= 2``."""
        return 1 + self.d + i * self.d - i * (i - 1) // 2 + (j - i)

    def parents(self) -> tuple[np.ndarray, np.ndarray]:
        """Arrays ``(parent_pos, parent_var)`` such that every index equals its
        parent index times the variable ``parent_var``; entry 0 is unused."""
        if self._parents is None:
            n = len(self.keys)
            parent_pos = np.zeros(n, dtype=np.int64)
            parent_var = np.zeros(n, dtype=np.int64)
            for i in range(1, n):
                key = self.keys[i]
                (p, e) = key[0]
                reduced = ((p, e - 1), *key[1:]) if e > 1 else key[1:]
                parent_pos[i] = self.position(reduced)
                parent_var[i] = p
            self._parents = (parent_pos, parent_var)
        return self._parents


def enumerate_indices(d: int, M: int, cap: int = DEFAULT_INDEX_CAP) -> MultiIndexSet:
    """Enumerate the full graded-lex multi-index set for ``(d, M)``.

    Raises :class:`CapacityError` when ``binomial(d + M, d)`` exceeds ``cap``;
    reduce the dimension first (e.g. with a sparse random projection).
    """
    if d < 1:
        raise InvalidInputError(f"dimension must be >= 1, got {d}")
    if M < 0:
        raise InvalidInputError(f"degree must be >= 0, got {M}")
    count = math.comb(d + M, d)
    if count > cap:
        raise CapacityError(
            f"index set for d={d}, M={M} has {count} entries, exceeding the cap "
            f"{cap}; reduce the dimension (sparse random projection) or raise the cap"
        )
    keys: list = []
    for m in range(M + 1):
        keys.extend(_compositions(m, d))
    assert len(keys) == count
    degrees = np.fromiter(
        (sum(e for _, e in k) for k in keys), dtype=np.int64, count=count
    )
    multinom = np.empty(count)
    for i, k in enumerate(keys):
        v = math.factorial(int(degrees[i]))
        for _, e in k:
            v //= math.factorial(e)
        multinom[i] = float(v)
    return MultiIndexSet(d=d, M=M, keys=keys, degrees=degrees, multinom=multinom)


def _kahan_add(t: np.ndarray, comp: np.ndarray, delta) -> None:
    y = delta - comp
    s = t + y
    comp[:] = (s - t) - y
    t[:] = s


def _kahan_add_at(t: np.ndarray, comp: np.ndarray, pos: int, delta: float) -> None:
    y = delta - comp[pos]
    s = t[pos] + y
    comp[pos] = (s - t[pos]) - y
    t[pos] = s


class SuffStats:
    """Accumulated polynomial sufficient statistics for one mapping.

    Single-writer: ``accumulate``/``accumulate_batch`` mutate in place.
    ``merge`` combines two compatible accumulators into a new one.
    """

    def __init__(
        self,
        index_set: MultiIndexSet,
        mapping: MappingSpec,
        radius: float,
        approxes: tuple[PolyApprox, ...] | None = None,
    ):
        if not (radius > 0):
            raise InvalidInputError(f"approximation radius must be positive, got {radius}")
        if not mapping.raw_monomial and approxes is None:
            approxes = fit_terms(mapping, index_set.M, radius)
        if approxes is not None:
            for a in approxes:
                if a.M != index_set.M or a.R != radius:
                    raise ConfigMismatchError(
                        "approximation degree/radius must match the statistics"
                    )
        self.index_set = index_set
        self.mapping = mapping
        self.radius = float(radius)
        self.approxes = approxes
        self.t = np.zeros(len(index_set))
        self.comp = np.zeros(len(index_set))
        self.n = 0
        self._norm_warned = False

    # -- configuration ------------------------------------------------------

    def config_key(self) -> tuple:
        return (
            self.mapping.name,
            self.mapping.scale,
            self.index_set.d,
            self.index_set.M,
            self.radius,
            self.mapping.raw_monomial,
        )

    def same_config(self, other: "SuffStats") -> bool:
        if self.config_key() != other.config_key():
            return False
        if (self.approxes is None) != (other.approxes is None):
            return False
        if self.approxes is not None:
            for a, b in zip(self.approxes, other.approxes):
                if not np.array_equal(a.b, b.b):
                    return False
        return True

    def values(self) -> np.ndarray:
        """Accumulated statistics with the compensation terms folded in."""
        return self.t + self.comp

    def copy(self) -> "SuffStats":
        out = SuffStats.__new__(SuffStats)
        out.index_set = self.index_set
        out.mapping = self.mapping
        out.radius = self.radius
        out.approxes = self.approxes
        out.t = self.t.copy()
        out.comp = self.comp.copy()
        out.n = self.n
        out._norm_warned = self._norm_warned
        return out

    # -- accumulation -------------------------------------------------------

    def _check_norm(self, sq_norms) -> None:
        if not self._norm_warned and np.any(np.asarray(sq_norms) > 1.0 + 1e-12):
            self._norm_warned = True
            warnings.warn(
                "covariate 2-norm exceeds 1; the approximation-quality theory "
                "assumes normalized covariates (consider rescaling at ingest)",
                stacklevel=3,
            )

    def accumulate(self, y: float, x) -> "SuffStats":
        """Absorb one record.  ``x`` is a dense 1-D array or an
        ``(indices, values)`` pair of sparse coordinates."""
        idx, vals = _as_sparse(x, self.index_set.d)
        if not np.all(np.isfinite(vals)):
            raise NumericError("non-finite covariate value", record_index=self.n)
        y = float(self.mapping.canonicalize_y(np.asarray([y]))[0])
        self._check_norm([float(vals @ vals)])

        iset = self.index_set
        if iset.M <= 2:
            self._accumulate_sparse_m2(y, idx, vals)
        else:
            dense = np.zeros(iset.d)
            dense[idx] = vals
            self.accumulate_batch(np.asarray([y]), dense[None, :], _canonicalized=True)
            return self
        self.n += 1
        return self

    def _accumulate_sparse_m2(self, y: float, idx: np.ndarray, vals: np.ndarray) -> None:
        iset = self.index_set
        t, comp = self.t, self.comp
        if self.mapping.raw_monomial:
            z = y * vals
            _kahan_add_at(t, comp, 0, 1.0)
            if iset.M >= 1:
                for j, v in zip(idx, z):
                    _kahan_add_at(t, comp, 1 + j, v)
            if iset.M >= 2:
                for a in range(len(idx)):
                    for bpos in range(a, len(idx)):
                        pos = iset.pair_position(int(idx[a]), int(idx[bpos]))
                        _kahan_add_at(t, comp, pos, z[a] * z[bpos])
        else:
            g = degree_weights(self.mapping, self.approxes, np.asarray([y]))[0]
            _kahan_add_at(t, comp, 0, g[0])
            if iset.M >= 1:
                for j, v in zip(idx, vals):
                    _kahan_add_at(t, comp, 1 + j, g[1] * v)
            if iset.M >= 2:
                for a in range(len(idx)):
                    for bpos in range(a, len(idx)):
                        pos = iset.pair_position(int(idx[a]), int(idx[bpos]))
                        mult = 1.0 if a == bpos else 2.0
                        _kahan_add_at(t, comp, pos, mult * g[2] * vals[a] * vals[bpos])

    def accumulate_batch(self, y: np.ndarray, X: np.ndarray, _canonicalized=False) -> "SuffStats":
        """Absorb a batch of records given as dense arrays ``y: (B,)``, ``X: (B, d)``."""
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.index_set.d:
            raise InvalidInputError(
                f"covariate batch must be (B, {self.index_set.d}), got {X.shape}"
            )
        if not np.all(np.isfinite(X)):
            bad = int(np.flatnonzero(~np.isfinite(X).all(axis=1))[0])
            raise NumericError("non-finite covariate value", record_index=self.n + bad)
        if not _canonicalized:
            y = self.mapping.canonicalize_y(y)
        self._check_norm((X * X).sum(axis=1))

        iset = self.index_set
        B = X.shape[0]
        if iset.M <= 2:
            delta = self._batch_delta_m2(y, X)
        else:
            parent_pos, parent_var = iset.parents()
            cols = np.empty((B, len(iset)))
            cols[:, 0] = 1.0
            base = y[:, None] * X if self.mapping.raw_monomial else X
            for i in range(1, len(iset)):
                np.multiply(cols[:, parent_pos[i]], base[:, parent_var[i]], out=cols[:, i])
            if self.mapping.raw_monomial:
                delta = cols.sum(axis=0)
            else:
                G = degree_weights(self.mapping, self.approxes, y)
                delta = iset.multinom * np.einsum("bi,bi->i", cols, G[:, iset.degrees])
        _kahan_add(self.t, self.comp, delta)
        self.n += B
        return self

    def _batch_delta_m2(self, y: np.ndarray, X: np.ndarray) -> np.ndarray:
        """Degree <= 2 batch update via one rank-B matrix product."""
        iset = self.index_set
        d = iset.d
        if self.mapping.raw_monomial:
            Z = y[:, None] * X
            parts = [np.asarray([float(len(y))])]
            if iset.M >= 1:
                parts.append(Z.sum(axis=0))
            if iset.M >= 2:
                G2 = Z.T @ Z
                parts.extend(G2[i, i:] for i in range(d))
            return np.concatenate(parts)
        G = degree_weights(self.mapping, self.approxes, y)
        parts = [np.asarray([G[:, 0].sum()])]
        if iset.M >= 1:
            parts.append(X.T @ G[:, 1])
        if iset.M >= 2:
            G2 = X.T @ (G[:, 2, None] * X)
            # the multinomial coefficient is 2 for mixed pairs, 1 on the diagonal
            for i in range(d):
                row = 2.0 * G2[i, i:]
                row[0] = G2[i, i]
                parts.append(row)
        return np.concatenate(parts)

    # -- merging -------------------------------------------------------------

    def merge(self, other: "SuffStats") -> "SuffStats":
        """Entry-wise compensated sum of two compatible accumulators."""
        if not self.same_config(other):
            raise ConfigMismatchError(
                f"cannot merge statistics with configs {self.config_key()} "
                f"and {other.config_key()}"
            )
        out = self.copy()
        _kahan_add(out.t, out.comp, other.t)
        _kahan_add(out.t, out.comp, other.comp)
        out.n = self.n + other.n
        return out


def _as_sparse(x, d: int) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(x, tuple) and len(x) == 2:
        idx = np.asarray(x[0], dtype=np.int64)
        vals = np.asarray(x[1], dtype=float)
    else:
        arr = np.asarray(x, dtype=float)
        if arr.ndim != 1:
            raise InvalidInputError("covariate must be a vector or (indices, values)")
        if arr.size != d:
            raise InvalidInputError(f"covariate has dimension {arr.size}, expected {d}")
        idx = np.flatnonzero(arr)
        vals = arr[idx]
    if idx.size and (idx.min() < 0 or idx.max() >= d):
        raise InvalidInputError(f"covariate index out of range for dimension {d}")
    return idx, vals


def new_stats(
    index_set: MultiIndexSet,
    mapping: MappingSpec,
    radius: float,
    approxes: tuple[PolyApprox, ...] | None = None,
) -> SuffStats:
    """Zeroed statistics accumulator for ``mapping`` on ``index_set``.

    For non-logistic mappings the per-term polynomial approximations are
    fitted automatically (degree ``index_set.M`` on ``[-radius, radius]``)
    unless supplied.
    """
    return SuffStats(index_set, mapping, radius, approxes)


def accumulate(stats: SuffStats, y, x) -> SuffStats:
    return stats.accumulate(y, x)


def merge(a: SuffStats, b: SuffStats) -> SuffStats:
    return a.merge(b)


# --- serialization ----------------------------------------------------------


@lru_cache(maxsize=1)
def _crc32c_table() -> tuple:
    poly = 0x82F63B78
    table = []
    for i in range(256):
        c = i
        for _ in range(8):
            c = (c >> 1) ^ poly if c & 1 else c >> 1
        table.append(c)
    return tuple(table)


def crc32c(data: bytes, crc: int = 0) -> int:
    """CRC-32C (Castagnoli) checksum."""
    table = _crc32c_table()
    crc ^= 0xFFFFFFFF
    for byte in data:
        crc = (crc >> 8) ^ table[(crc ^ byte) & 0xFF]
    return crc ^ 0xFFFFFFFF


def serialize(stats: SuffStats) -> bytes:
    """Serialize to the PGLM binary format (compensation folded into entries)."""
    model_id = _MODEL_IDS.get(stats.mapping.name)
    if model_id is None:
        raise InvalidInputError(
            f"mapping {stats.mapping.name!r} has no registered model id"
        )
    header = _HEADER.pack(
        _MAGIC,
        _VERSION,
        model_id,
        stats.mapping.scale if stats.mapping.scale is not None else 0.0,
        stats.index_set.d,
        stats.index_set.M,
        stats.radius,
        stats.n,
    )
    body = header + stats.values().astype("<f8").tobytes()
    return body + struct.pack("<I", crc32c(body))


def deserialize(data: bytes, cap: int = DEFAULT_INDEX_CAP) -> SuffStats:
    """Reconstruct statistics from PGLM bytes, re-deriving the mapping and,
    for general-form models, the folded polynomial coefficients."""
    if len(data) < _HEADER.size + 4:
        raise StatsFormatError("truncated statistics payload")
    magic, version, model_id, scale, d, M, radius, n = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise StatsFormatError(f"bad magic {magic!r}")
    if version != _VERSION:
        raise StatsFormatError(f"unsupported version {version}")
    body, trailer = data[:-4], data[-4:]
    (expected_crc,) = struct.unpack("<I", trailer)
    if crc32c(body) != expected_crc:
        raise StatsFormatError("checksum failure")
    name = _MODEL_NAMES.get(model_id)
    if name is None:
        raise StatsFormatError(f"unknown model id {model_id}")
    mapping = get_mapping(name, scale if scale > 0 else None)
    index_set = enumerate_indices(d, M, cap=cap)
    count = len(index_set)
    payload = body[_HEADER.size :]
    if len(payload) != 8 * count:
        raise StatsFormatError(
            f"payload holds {len(payload) // 8} entries, expected {count}"
        )
    stats = SuffStats(index_set, mapping, radius)
    stats.t = np.frombuffer(payload, dtype="<f8").astype(float)
    stats.comp = np.zeros(count)
    stats.n = int(n)
    return stats


def save_stats(stats: SuffStats, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(stats))


def load_stats(path, cap: int = DEFAULT_INDEX_CAP) -> SuffStats:
    with open(path, "rb") as fh:
        return deserialize(fh.read(), cap=cap)
