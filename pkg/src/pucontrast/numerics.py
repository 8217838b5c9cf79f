"""Dense float64 kernels and deterministic, replayable random streams.

Everything downstream (data simulation, losses, model training) builds on
the primitives here. All arithmetic is 64-bit with a fixed accumulation
order, so repeated runs of the same program produce identical bits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Squared-norm window inside which a row counts as exactly unit length.
# One division by the row norm always lands within a few ulps of 1 (numpy
# sums pairwise), so rows inside the window are returned untouched and
# row_l2_normalize is a projection: applying it twice is a bitwise no-op.
_UNIT_SNAP = 64.0 * np.finfo(np.float64).eps

# Stream purposes. Each purpose gets its own keyed stream so that, e.g.,
# reordering augmentation draws never perturbs the shuffle sequence.
STREAM_SYNTH = 1
STREAM_PU_SPLIT = 2
STREAM_PNU_SPLIT = 3
STREAM_SHUFFLE = 4
STREAM_AUGMENT = 5
STREAM_INIT = 6
STREAM_PVU_HOLDOUT = 7
STREAM_TEST_DATA = 8

_MASK64 = (1 << 64) - 1


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return `a` as a 2-D float64 C-order array.

    Raises ValueError on wrong rank or non-finite entries.
    """
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def log_sum_exp(values) -> float:
    """Stable log(sum(exp(values))) for a non-empty 1-D vector.

    Computed as m + log(sum(exp(v - m))) with m = max(v), so inputs like
    [1000, 1000] do not overflow.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size == 0:
        raise ValueError("log_sum_exp expects a non-empty 1-D vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("log_sum_exp entries must be finite")
    m = float(np.max(v))
    return m + float(np.log(np.sum(np.exp(v - m))))


def row_l2_normalize(m) -> np.ndarray:
    """Scale every row of `m` to unit L2 norm.

    Rows whose squared norm is already within a few ulps of 1 are returned
    bit-identical, which makes the operation idempotent. A zero row is an
    error; callers must not rely on a silent epsilon in the denominator.
    """
    m = as_matrix(m)
    sq = np.sum(m * m, axis=1)
    if np.any(sq == 0.0):
        row = int(np.flatnonzero(sq == 0.0)[0])
        raise ValueError(f"row {row} has zero norm and cannot be normalized")
    out = m.copy()
    needs = np.abs(sq - 1.0) > _UNIT_SNAP
    if np.any(needs):
        out[needs] = m[needs] / np.sqrt(sq[needs])[:, None]
    return out


def gemm(a, b) -> np.ndarray:
    """Matrix product with shape validation; float64 throughout."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"gemm shape mismatch: {a.shape} x {b.shape}")
    return a @ b


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by (seed, stream_id).

    Equal (seed, stream_id) always reproduce the same sequence; distinct
    stream_ids are statistically independent. `block(i, j)` addresses a
    disjoint region of the counter space, giving replayable per-epoch /
    per-batch substreams without consuming state.
    """

    seed: int
    stream_id: int
    block_index: tuple = (0, 0)

    def generator(self) -> np.random.Generator:
        key = [self.seed & _MASK64, self.stream_id & _MASK64]
        i, j = self.block_index
        counter = [0, 0, i & _MASK64, j & _MASK64]
        return np.random.Generator(np.random.Philox(counter=counter, key=key))

    def block(self, i: int, j: int = 0) -> "RngStream":
        return RngStream(self.seed, self.stream_id, (i, j))
