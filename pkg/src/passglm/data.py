"""Record streams, libsvm parsing, sparse random projection, shard orchestration.

A :class:`RecordStream` yields ``(y, x)`` observations exactly once per pass
and counts its passes, which is how the single-pass contract of the
statistics builder is audited.  Streams also expose dense batches for the
vectorized accumulation path.
"""

from __future__ import annotations

import json
import math
import multiprocessing as mp
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, PassGlmError
from .mappings import MappingSpec, get_mapping
from .suffstats import SuffStats, enumerate_indices, deserialize, new_stats, serialize

__all__ = [
    "RecordStream",
    "ArrayStream",
    "LibsvmStream",
    "SyntheticStream",
    "ProjectedStream",
    "ProjectionSpec",
    "parse_libsvm",
    "write_libsvm",
    "project",
    "build_stats",
    "run_sharded",
    "synthesize_arrays",
    "synthesize",
]

DEFAULT_BATCH = 8192


class RecordStream:
    """Base class for record sources.

    Subclasses implement ``_iter_batches`` yielding ``(y, X)`` dense chunks.
    ``passes`` increments every time a fresh iteration starts.
    """

    d: int
    passes: int = 0

    def _iter_batches(self, batch_size: int):
        raise NotImplementedError

    def batches(self, batch_size: int = DEFAULT_BATCH):
        self.passes += 1
        yield from self._iter_batches(batch_size)

    def iter_records(self):
        """Yield ``(y, (indices, values))`` one record at a time."""
        for y, X in self.batches():
            for i in range(len(y)):
                row = np.asarray(X[i]).ravel()
                idx = np.flatnonzero(row)
                yield float(y[i]), (idx, row[idx])

    def materialize(self):
        ys, xs = [], []
        for y, X in self.batches():
            ys.append(np.asarray(y, dtype=float))
            xs.append(np.asarray(X, dtype=float))
        if not ys:
            return np.empty(0), np.empty((0, self.d))
        return np.concatenate(ys), np.vstack(xs)

    def shard(self, index: int, count: int) -> "RecordStream":
        """Round-robin sub-stream containing records ``index, index+count, ...``."""
        return _RoundRobinView(self, index, count)

    def __len__(self):
        raise TypeError(f"{type(self).__name__} has no known length")


class _RoundRobinView(RecordStream):
    def __init__(self, base: RecordStream, index: int, count: int):
        if not (0 <= index < count):
            raise InvalidInputError("shard index out of range")
        self.base = base
        self.index = index
        self.count = count
        self.d = base.d

    def _iter_batches(self, batch_size: int):
        offset = 0
        for y, X in self.base._iter_batches(batch_size):
            take = np.arange(len(y)) + offset
            mask = take % self.count == self.index
            if mask.any():
                yield y[mask], X[mask]
            offset += len(y)

    def batches(self, batch_size: int = DEFAULT_BATCH):
        self.passes += 1
        self.base.passes += 1
        yield from self._iter_batches(batch_size)


class ArrayStream(RecordStream):
    """In-memory record source backed by dense arrays."""

    def __init__(self, y, X):
        self.y = np.asarray(y, dtype=float)
        self.X = np.asarray(X, dtype=float)
        if self.X.ndim != 2 or len(self.y) != self.X.shape[0]:
            raise InvalidInputError("y and X shapes do not agree")
        self.d = self.X.shape[1]
        self.passes = 0

    def _iter_batches(self, batch_size: int):
        for lo in range(0, len(self.y), batch_size):
            yield self.y[lo : lo + batch_size], self.X[lo : lo + batch_size]

    def materialize(self):
        return self.y, self.X

    def shard(self, index: int, count: int) -> "ArrayStream":
        return ArrayStream(self.y[index::count], self.X[index::count])

    def __len__(self):
        return len(self.y)


class LibsvmStream(RecordStream):
    """Streaming reader of libsvm/svmlight files.

    Labels may be remapped for binary models (``labels="pm1"`` or ``"01"``);
    1-based file indices become 0-based.  In strict mode a malformed line
    aborts with its line number; in lenient mode it is skipped and counted.
    """

    def __init__(self, path, d: int | None = None, labels: str = "raw", strict: bool = True):
        self.path = str(path)
        self.labels = labels
        self.strict = strict
        self.passes = 0
        self.skipped = 0
        if d is None:
            d = self._infer_dimension()
        self.d = d

    def _infer_dimension(self) -> int:
        # metadata discovery scan; counted as a pass for honesty
        self.passes += 1
        max_idx = 0
        for _, idx, _ in self._parse_lines():
            if idx.size:
                max_idx = max(max_idx, int(idx.max()) + 1)
        return max_idx

    def _parse_lines(self):
        with open(self.path, "r") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                try:
                    yield self._parse_line(line)
                except ValueError as exc:
                    if self.strict:
                        raise InvalidInputError(
                            f"{self.path}:{lineno}: malformed record: {exc}"
                        ) from None
                    self.skipped += 1

    def _parse_line(self, line: str):
        parts = line.split()
        y = float(parts[0])
        idx = np.empty(len(parts) - 1, dtype=np.int64)
        vals = np.empty(len(parts) - 1)
        prev = -1
        for i, tok in enumerate(parts[1:]):
            pos, val = tok.split(":", 1)
            j = int(pos) - 1
            if j < 0:
                raise ValueError(f"index {pos} is not 1-based")
            if j <= prev:
                raise ValueError(f"indices not strictly increasing at {pos}")
            prev = j
            idx[i] = j
            vals[i] = float(val)
        if self.labels == "pm1":
            y = 1.0 if y > 0 else -1.0
        elif self.labels == "01":
            y = 1.0 if y > 0 else 0.0
        return y, idx, vals

    def _iter_batches(self, batch_size: int):
        ys, rows = [], []
        for y, idx, vals in self._parse_lines():
            if idx.size and idx.max() >= self.d:
                raise InvalidInputError(
                    f"index {int(idx.max()) + 1} exceeds declared dimension {self.d}"
                )
            row = np.zeros(self.d)
            row[idx] = vals
            ys.append(y)
            rows.append(row)
            if len(ys) == batch_size:
                yield np.asarray(ys), np.asarray(rows)
                ys, rows = [], []
        if ys:
            yield np.asarray(ys), np.asarray(rows)

    def iter_records(self):
        self.passes += 1
        for y, idx, vals in self._parse_lines():
            yield y, (idx, vals)


def parse_libsvm(path, d: int | None = None, labels: str = "raw", strict: bool = True) -> LibsvmStream:
    """Open a libsvm-format file as a replayable record stream."""
    return LibsvmStream(path, d=d, labels=labels, strict=strict)


def write_libsvm(path, y, X) -> None:
    """Write dense records in libsvm format (1-based indices, zeros omitted)."""
    y = np.asarray(y)
    X = np.asarray(X)
    with open(path, "w") as fh:
        for i in range(len(y)):
            label = y[i]
            text = f"{int(label)}" if float(label).is_integer() else repr(float(label))
            row = X[i]
            nz = np.flatnonzero(row)
            cells = " ".join(f"{j + 1}:{row[j]:.17g}" for j in nz)
            fh.write(f"{text} {cells}\n".rstrip() + "\n")


# --- synthetic data ----------------------------------------------------------


def _ball_covariates(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    z = rng.standard_normal((n, d))
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    radii = rng.random(n) ** (1.0 / d)
    return z * radii[:, None]


def _draw_labels(rng: np.random.Generator, model: str, s: np.ndarray, scale: float | None):
    if model == "logit":
        p = 1.0 / (1.0 + np.exp(-s))
        return np.where(rng.random(s.size) < p, 1.0, -1.0)
    if model == "probit":
        from scipy.special import ndtr

        return (rng.random(s.size) < ndtr(s)).astype(float)
    if model == "poisson":
        return rng.poisson(np.exp(s)).astype(float)
    if model == "gamma":
        nu = scale if scale is not None else 1.0
        return rng.gamma(shape=nu, scale=np.exp(s) / nu)
    if model == "cauchy":
        b = scale if scale is not None else 1.0
        return s + b * rng.standard_cauchy(s.size)
    if model == "shuber":
        b = scale if scale is not None else 1.0
        return s + _sample_smoothed_huber_noise(rng, s.size, b)
    raise InvalidInputError(f"no synthetic generator for model {model!r}")


def _sample_smoothed_huber_noise(rng: np.random.Generator, n: int, b: float) -> np.ndarray:
    """Rejection sampling from the density proportional to
    exp(-b^2 (sqrt(1 + v^2/b^2) - 1)), using a Laplace envelope."""
    out = np.empty(n)
    filled = 0
    while filled < n:
        m = 2 * (n - filled) + 16
        v = rng.laplace(scale=1.0 / b, size=m)
        log_accept = b * np.abs(v) - b**2 * np.sqrt(1.0 + (v / b) ** 2)
        keep = v[np.log(rng.random(m)) < log_accept]
        take = min(keep.size, n - filled)
        out[filled : filled + take] = keep[:take]
        filled += take
    return out


def synthesize_arrays(model: str, d: int, n: int, seed: int, theta_true, scale: float | None = None):
    """Generate ``(y, X)`` from the named model with covariates uniform in the
    unit ball."""
    theta_true = np.broadcast_to(np.asarray(theta_true, dtype=float), (d,))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    X = _ball_covariates(rng, n, d)
    y = _draw_labels(rng, model, X @ theta_true, scale)
    return y, X


class SyntheticStream(RecordStream):
    """Deterministic on-the-fly generator of model data; memory stays bounded
    regardless of ``n`` because batches are produced per seeded block."""

    def __init__(self, model: str, d: int, n: int, seed: int, theta_true, scale: float | None = None):
        self.model = model
        self.d = d
        self.n = n
        self.seed = seed
        self.scale = scale
        self.theta_true = np.broadcast_to(np.asarray(theta_true, dtype=float), (d,)).copy()
        self.passes = 0

    def _iter_batches(self, batch_size: int):
        produced = 0
        block = 0
        while produced < self.n:
            take = min(batch_size, self.n - produced)
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, 1 + block]))
            X = _ball_covariates(rng, take, self.d)
            y = _draw_labels(rng, self.model, X @ self.theta_true, self.scale)
            yield y, X
            produced += take
            block += 1

    def __len__(self):
        return self.n


def synthesize(model: str, d: int, n: int, seed: int, theta_true, path, scale: float | None = None) -> dict:
    """Write a synthetic libsvm file plus a JSON manifest recording the truth."""
    y, X = synthesize_arrays(model, d, n, seed, theta_true, scale=scale)
    write_libsvm(path, y, X)
    manifest = {
        "schema_version": 1,
        "model": model,
        "d": d,
        "n": n,
        "seed": seed,
        "scale": scale,
        "theta_true": list(np.broadcast_to(np.asarray(theta_true, dtype=float), (d,))),
        "path": str(path),
    }
    with open(str(path) + ".manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2)
    return manifest


# --- sparse random projection ------------------------------------------------


@dataclass(frozen=True)
class ProjectionSpec:
    """Seeded sparse random projection from ``input_dim`` to ``output_dim``.

    Entries take the values ``+-sqrt(s/k)`` with probability ``1/(2s)`` each
    (zero otherwise) where ``s = sqrt(input_dim)``; columns are realized
    lazily from a counter-based generator keyed on ``(seed, column)`` so the
    matrix is never stored.
    """

    seed: int
    input_dim: int
    output_dim: int

    @property
    def sparsity(self) -> float:
        return math.sqrt(self.input_dim)

    def column(self, j: int) -> np.ndarray:
        if not (0 <= j < self.input_dim):
            raise InvalidInputError(
                f"covariate index {j} exceeds projection input dimension {self.input_dim}"
            )
        rng = np.random.default_rng(np.random.Philox(key=[self.seed, j]))
        u = rng.random(self.output_dim)
        s = self.sparsity
        mag = math.sqrt(s / self.output_dim)
        col = np.zeros(self.output_dim)
        col[u < 0.5 / s] = mag
        col[(u >= 0.5 / s) & (u < 1.0 / s)] = -mag
        return col


class _ColumnCache:
    def __init__(self, spec: ProjectionSpec, maxsize: int = 4096):
        self.spec = spec
        self.maxsize = maxsize
        self._cache: dict[int, np.ndarray] = {}

    def get(self, j: int) -> np.ndarray:
        col = self._cache.get(j)
        if col is None:
            if len(self._cache) >= self.maxsize:
                self._cache.pop(next(iter(self._cache)))
            col = self.spec.column(j)
            self._cache[j] = col
        return col


class ProjectedStream(RecordStream):
    """Stream view applying a sparse random projection to every record."""

    def __init__(self, base: RecordStream, spec: ProjectionSpec):
        if spec.input_dim < base.d:
            raise InvalidInputError(
                f"projection input dimension {spec.input_dim} is smaller than "
                f"the stream dimension {base.d}"
            )
        self.base = base
        self.spec = spec
        self.d = spec.output_dim
        self._cols = _ColumnCache(spec)
        self.passes = 0

    def project_record(self, idx: np.ndarray, vals: np.ndarray) -> np.ndarray:
        out = np.zeros(self.spec.output_dim)
        for j, v in zip(idx, vals):
            out += v * self._cols.get(int(j))
        return out

    def _iter_batches(self, batch_size: int):
        for y, X in self.base._iter_batches(batch_size):
            X = np.asarray(X)
            out = np.zeros((X.shape[0], self.spec.output_dim))
            for i in range(X.shape[0]):
                row = X[i]
                nz = np.flatnonzero(row)
                out[i] = self.project_record(nz, row[nz])
            yield y, out

    def batches(self, batch_size: int = DEFAULT_BATCH):
        self.passes += 1
        self.base.passes += 1
        yield from self._iter_batches(batch_size)


def project(stream: RecordStream, spec: ProjectionSpec) -> ProjectedStream:
    """Wrap a stream with the deterministic sparse random projection."""
    return ProjectedStream(stream, spec)


# --- statistics construction and sharding ------------------------------------


def build_stats(
    stream: RecordStream,
    mapping: MappingSpec,
    M: int,
    radius: float,
    cap: int | None = None,
    batch_size: int = DEFAULT_BATCH,
) -> SuffStats:
    """Single-pass statistics construction over a stream."""
    kwargs = {} if cap is None else {"cap": cap}
    index_set = enumerate_indices(stream.d, M, **kwargs)
    stats = new_stats(index_set, mapping, radius)
    for y, X in stream.batches(batch_size):
        stats.accumulate_batch(y, X)
    return stats


_FORK_SOURCES = None


def _shard_worker(args):
    shard_id, model, scale, M, radius = args
    mapping = get_mapping(model, scale)
    stream = _FORK_SOURCES[shard_id]
    try:
        return shard_id, serialize(build_stats(stream, mapping, M, radius))
    except PassGlmError as exc:
        raise PassGlmError(f"shard {shard_id} failed: {exc}") from exc


def run_sharded(
    source,
    shards: int,
    mapping: MappingSpec,
    M: int,
    radius: float,
    batch_size: int = DEFAULT_BATCH,
    d: int | None = None,
) -> SuffStats:
    """Accumulate statistics over ``shards`` workers and merge the results.

    ``source`` is either a :class:`RecordStream` (partitioned round-robin) or
    a list of file paths (one shard per file when the counts match, otherwise
    files are distributed round-robin).  With ``shards == 1`` this is exactly
    the sequential path.  Workers run as forked processes; when fork is
    unavailable the shards run sequentially in-process, which changes timing
    but not the result.
    """
    if shards < 1:
        raise InvalidInputError("shard count must be >= 1")
    if isinstance(source, (list, tuple)):
        streams = _file_shards(source, shards, d)
    else:
        if shards == 1:
            return build_stats(source, mapping, M, radius, batch_size=batch_size)
        streams = [source.shard(i, shards) for i in range(shards)]
    if shards == 1:
        return build_stats(streams[0], mapping, M, radius, batch_size=batch_size)
    if mapping.name not in ("logit", "poisson", "shuber", "cauchy", "gamma", "probit"):
        raise InvalidInputError("sharded execution requires a registered model name")

    global _FORK_SOURCES
    _FORK_SOURCES = streams
    args = [(i, mapping.name, mapping.scale, M, radius) for i in range(shards)]
    try:
        if "fork" in mp.get_all_start_methods():
            ctx = mp.get_context("fork")
            with ctx.Pool(processes=shards) as pool:
                results = pool.map(_shard_worker, args)
        else:
            results = [_shard_worker(a) for a in args]
    finally:
        _FORK_SOURCES = None
    results.sort(key=lambda pair: pair[0])
    merged = None
    for _, payload in results:
        part = deserialize(payload)
        merged = part if merged is None else merged.merge(part)
    return merged


def _file_shards(paths, shards: int, d: int | None = None):
    paths = list(paths)
    if d is None:
        opened = [LibsvmStream(p) for p in paths]
        d = max(s.d for s in opened)
        for s in opened:
            s.d = d
    else:
        opened = [LibsvmStream(p, d=d) for p in paths]
    if len(paths) == shards:
        return opened
    groups = [[] for _ in range(shards)]
    for i, s in enumerate(opened):
        groups[i % shards].append(s)
    return [_ConcatStream(group, d) for group in groups]


class _ConcatStream(RecordStream):
    def __init__(self, parts, d):
        self.parts = parts
        self.d = d
        self.passes = 0

    def _iter_batches(self, batch_size: int):
        for part in self.parts:
            yield from part._iter_batches(batch_size)
