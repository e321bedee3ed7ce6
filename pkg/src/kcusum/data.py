"""Synthetic stream generators and delimited vector-stream file handling.

Stream files are comma-separated, one observation per line, ``d`` numeric
columns, with optional ``#`` comment lines and an optional header line.
Values are written with 17 significant digits so a write/read round trip
reproduces doubles exactly.
"""

from __future__ import annotations

import io
from dataclasses import dataclass
from typing import Iterable, Iterator, Optional, Sequence, Tuple, Union

import numpy as np

from .kernel_cusum import ReferencePool

__all__ = [
    "NormalSpec",
    "ChangeSpec",
    "generate",
    "generate_chunks",
    "generate_multi",
    "read_stream",
    "read_stream_array",
    "write_stream",
    "load_reference",
]


@dataclass(frozen=True)
class NormalSpec:
    """Independent normal distribution per coordinate.

    ``mean`` and ``var`` are length-``d`` tuples; scalars broadcast via
    :meth:`of`.  Descriptor string form is ``normal:MEANS:VARS`` with
    comma-separated lists, e.g. ``normal:1:4`` or ``normal:0,0,0,0:1,1,1,2``.
    """

    mean: Tuple[float, ...]
    var: Tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.mean) != len(self.var) or len(self.mean) == 0:
            raise ValueError("mean and var must be equal-length non-empty tuples")
        if any(v <= 0 for v in self.var):
            raise ValueError(f"variances must be positive, got {self.var}")

    @classmethod
    def of(cls, mean, var, dimension: int = 1) -> "NormalSpec":
        """Build from scalars or sequences, broadcasting scalars to ``dimension``."""
        mean = np.broadcast_to(np.asarray(mean, dtype=float), (dimension,)) if np.isscalar(mean) else np.asarray(mean, dtype=float)
        var = np.broadcast_to(np.asarray(var, dtype=float), (dimension,)) if np.isscalar(var) else np.asarray(var, dtype=float)
        if mean.shape != var.shape:
            raise ValueError("mean and var shapes differ")
        return cls(mean=tuple(float(m) for m in mean), var=tuple(float(v) for v in var))

    @classmethod
    def parse(cls, text: str, dimension: Optional[int] = None) -> "NormalSpec":
        """Parse a ``normal:MEANS:VARS`` descriptor string."""
        parts = text.strip().split(":")
        if len(parts) != 3 or parts[0] != "normal":
            raise ValueError(f"unsupported distribution descriptor {text!r}; expected normal:MEANS:VARS")
        try:
            means = [float(v) for v in parts[1].split(",")]
            vars_ = [float(v) for v in parts[2].split(",")]
        except ValueError as exc:
            raise ValueError(f"bad numeric field in descriptor {text!r}") from exc
        if dimension is not None:
            if len(means) == 1:
                means = means * dimension
            if len(vars_) == 1:
                vars_ = vars_ * dimension
        if len(means) != len(vars_):
            raise ValueError(f"descriptor {text!r} has {len(means)} means but {len(vars_)} variances")
        return cls(mean=tuple(means), var=tuple(vars_))

    @property
    def dimension(self) -> int:
        return len(self.mean)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(np.asarray(self.var))

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        """Draw ``count`` rows; consumes the generator row-major."""
        return rng.normal(np.asarray(self.mean), self.std, size=(count, self.dimension))

    def describe(self) -> str:
        means = ",".join(repr(m) for m in self.mean)
        vars_ = ",".join(repr(v) for v in self.var)
        return f"normal:{means}:{vars_}"


@dataclass(frozen=True)
class ChangeSpec:
    """A single-change stream recipe: pre regime, post regime, change index.

    Indices are 1-based: rows ``1 .. change_time-1`` come from ``pre`` and
    rows ``change_time .. length`` from ``post``.  ``change_time = 1``
    makes the whole stream post-change.
    """

    pre: NormalSpec
    post: NormalSpec
    change_time: int
    length: int
    seed: int

    def __post_init__(self) -> None:
        if self.pre.dimension != self.post.dimension:
            raise ValueError("pre and post descriptors must share a dimension")
        if not (1 <= self.change_time <= self.length):
            raise ValueError(
                f"need 1 <= change_time <= length, got change_time={self.change_time}, length={self.length}"
            )

    @property
    def dimension(self) -> int:
        return self.pre.dimension

    def describe(self) -> dict:
        return {
            "pre": self.pre.describe(),
            "post": self.post.describe(),
            "change_time": self.change_time,
            "length": self.length,
            "seed": self.seed,
        }


def generate(spec: ChangeSpec) -> np.ndarray:
    """Materialize the stream for a change recipe, deterministic in the seed."""
    rng = np.random.default_rng(spec.seed)
    n_pre = spec.change_time - 1
    parts = []
    if n_pre:
        parts.append(spec.pre.sample(rng, n_pre))
    if spec.length - n_pre:
        parts.append(spec.post.sample(rng, spec.length - n_pre))
    return np.concatenate(parts, axis=0) if len(parts) > 1 else parts[0]


def generate_chunks(spec: ChangeSpec, chunk: int) -> Iterator[np.ndarray]:
    """Yield the same stream as :func:`generate` in row chunks.

    Chunks split at the change boundary so the draw sequence matches the
    two-segment bulk generation exactly.
    """
    rng = np.random.default_rng(spec.seed)
    n_pre = spec.change_time - 1
    for dist, count in ((spec.pre, n_pre), (spec.post, spec.length - n_pre)):
        done = 0
        while done < count:
            take = min(chunk, count - done)
            yield dist.sample(rng, take)
            done += take


def generate_multi(segments: Sequence[Tuple[NormalSpec, int]], seed: int) -> np.ndarray:
    """Concatenated i.i.d. segments, each ``(distribution, run_length)``.

    Supports multi-regime streams and changes landing on either parity.
    """
    if not segments:
        raise ValueError("need at least one segment")
    dim = segments[0][0].dimension
    rng = np.random.default_rng(seed)
    parts = []
    for dist, run in segments:
        if run < 1:
            raise ValueError(f"run lengths must be at least 1, got {run}")
        if dist.dimension != dim:
            raise ValueError("all segments must share a dimension")
        parts.append(dist.sample(rng, run))
    return np.concatenate(parts, axis=0)


def _parse_row(line: str, lineno: int, dimension: Optional[int]) -> np.ndarray:
    fields = line.split(",")
    if dimension is not None and len(fields) != dimension:
        raise ValueError(f"line {lineno}: expected {dimension} columns, got {len(fields)}")
    try:
        row = np.array([float(f) for f in fields], dtype=float)
    except ValueError:
        raise ValueError(f"line {lineno}: non-numeric field in row {line!r}") from None
    if not np.all(np.isfinite(row)):
        raise ValueError(f"line {lineno}: non-finite value in row {line!r}")
    return row


def read_stream(source: Union[str, io.TextIOBase], dimension: Optional[int] = None) -> Iterator[np.ndarray]:
    """Lazily yield observations from a delimited stream file.

    ``source`` is a path or an open text handle (e.g. stdin).  Blank lines
    and ``#`` comments are skipped; a non-numeric first content line is
    treated as a header.  Malformed rows raise with their line number.
    Memory use is constant in the file size.
    """
    own = isinstance(source, str)
    handle = open(source, "r") if own else source
    try:
        expected = dimension
        first = True
        for lineno, raw in enumerate(handle, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if first:
                first = False
                try:
                    row = _parse_row(line, lineno, expected)
                except ValueError:
                    # tolerate a single header line
                    if any(not _is_number(f) for f in line.split(",")):
                        continue
                    raise
            else:
                row = _parse_row(line, lineno, expected)
            if expected is None:
                expected = row.size
            yield row
    finally:
        if own:
            handle.close()


def _is_number(field: str) -> bool:
    try:
        float(field)
        return True
    except ValueError:
        return False


def read_stream_array(source, dimension: Optional[int] = None) -> np.ndarray:
    """Read a whole stream file into an ``(n, d)`` array."""
    rows = list(read_stream(source, dimension))
    if not rows:
        raise ValueError("stream file contains no observations")
    return np.vstack(rows)


def write_stream(path: str, samples, header_comments: Iterable[str] = ()) -> None:
    """Write observations as comma-separated rows with exact round-trip precision."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim == 1:
        samples = samples.reshape(-1, 1)
    with open(path, "w") as handle:
        for comment in header_comments:
            handle.write(f"# {comment}\n")
        for row in samples:
            handle.write(",".join("%.17g" % v for v in row) + "\n")


def load_reference(source, seed: int, dimension: Optional[int] = None) -> ReferencePool:
    """Build a reference pool from every row of a stream file."""
    return ReferencePool(read_stream_array(source, dimension), rng_seed=seed)
