"""Datasets, PU/PNU simulation, class priors, and multi-view batches.

A fully labeled binary dataset is the ground truth from which weakly
supervised variants are carved out: `make_pu` keeps a uniform random
subset of the positives as labeled (indicator s = 1) and hides every
other label; `make_pnu` keeps a uniform random subset of labels of both
signs. Hidden labels ride along for evaluation only; training code must
never read them.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .numerics import (
    RngStream,
    STREAM_PNU_SPLIT,
    STREAM_PU_SPLIT,
    STREAM_SYNTH,
    as_matrix,
)

# 17 significant digits round-trips any float64 exactly.
_REAL_FMT = "%.17g"


def _stream(seed, default_purpose: int) -> RngStream:
    if isinstance(seed, RngStream):
        return seed
    return RngStream(int(seed), default_purpose)


@dataclass(frozen=True)
class ClassPrior:
    """Probability that a sample drawn from the relevant pool is positive."""

    pi: float

    def __post_init__(self):
        if not (0.0 <= self.pi <= 1.0) or not np.isfinite(self.pi):
            raise ValueError(f"class prior must lie in [0, 1], got {self.pi}")


def exact_pi(p_star: int, n_star: int, n_labeled: int) -> ClassPrior:
    """Exact prior of the unlabeled pool after labeling n_labeled positives.

    With p_star true positives and n_star true negatives in total, removing
    n_labeled positives into the labeled set leaves an unlabeled pool whose
    positive fraction is (p_star - n_labeled) / (p_star + n_star - n_labeled).
    """
    if not (0 <= n_labeled <= p_star):
        raise ValueError(f"need 0 <= n_labeled <= p_star, got {n_labeled} vs {p_star}")
    if n_star < 0:
        raise ValueError("n_star must be nonnegative")
    pool = p_star + n_star - n_labeled
    if pool <= 0:
        raise ValueError("unlabeled pool would be empty")
    return ClassPrior((p_star - n_labeled) / pool)


@dataclass
class BinaryDataset:
    """Fully labeled binary data: features (n x d) and labels in {+1, -1}."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.features = as_matrix(self.features, "features")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.shape != (self.features.shape[0],):
            raise ValueError("labels length must match feature rows")
        if not np.all(np.isin(self.labels, (-1, 1))):
            raise ValueError("labels must be +1 or -1")
        if not (np.any(self.labels == 1) and np.any(self.labels == -1)):
            raise ValueError("both classes must be present")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class PUDataset:
    """Positive-unlabeled data: indicator s with s=1 implying hidden y=+1.

    `hidden_labels` exist for evaluation only. The stored prior is the
    positive fraction of the unlabeled pool (see `exact_pi`); pass
    pi_override to `make_pu` to store something else.
    """

    features: np.ndarray
    indicator: np.ndarray
    hidden_labels: np.ndarray
    prior: ClassPrior

    def __post_init__(self):
        self.features = as_matrix(self.features, "features")
        self.indicator = np.asarray(self.indicator, dtype=np.int64)
        self.hidden_labels = np.asarray(self.hidden_labels, dtype=np.int64)
        n = self.features.shape[0]
        if self.indicator.shape != (n,) or self.hidden_labels.shape != (n,):
            raise ValueError("indicator and hidden_labels must match feature rows")
        if not np.all(np.isin(self.indicator, (0, 1))):
            raise ValueError("indicator must be 0 or 1")
        if not np.all(np.isin(self.hidden_labels, (-1, 1))):
            raise ValueError("hidden labels must be +1 or -1")
        if np.any(self.hidden_labels[self.indicator == 1] != 1):
            raise ValueError("a labeled sample must be truly positive")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class PNUDataset:
    """Semi-supervised binary data: observed labels in {+1, -1, 0(unlabeled)}."""

    features: np.ndarray
    observed_labels: np.ndarray
    hidden_labels: np.ndarray
    prior: ClassPrior

    def __post_init__(self):
        self.features = as_matrix(self.features, "features")
        self.observed_labels = np.asarray(self.observed_labels, dtype=np.int64)
        self.hidden_labels = np.asarray(self.hidden_labels, dtype=np.int64)
        n = self.features.shape[0]
        if self.observed_labels.shape != (n,) or self.hidden_labels.shape != (n,):
            raise ValueError("label vectors must match feature rows")
        if not np.all(np.isin(self.observed_labels, (-1, 0, 1))):
            raise ValueError("observed labels must be +1, -1, or 0")
        seen = self.observed_labels != 0
        if np.any(self.observed_labels[seen] != self.hidden_labels[seen]):
            raise ValueError("an observed label must equal the hidden label")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class AugmentConfig:
    """Stochastic view augmentation for vector data.

    Applied in order: additive Gaussian jitter, multiplicative scaling
    drawn from scale_range, then per-coordinate zeroing with mask_prob.
    """

    noise_sigma: float = 0.1
    scale_range: tuple = (0.9, 1.1)
    mask_prob: float = 0.05

    def __post_init__(self):
        lo, hi = self.scale_range
        if not (np.isfinite(lo) and np.isfinite(hi) and lo <= hi):
            raise ValueError("scale_range must be finite with lo <= hi")
        if not (self.noise_sigma >= 0.0 and np.isfinite(self.noise_sigma)):
            raise ValueError("noise_sigma must be finite and >= 0")
        if not (0.0 <= self.mask_prob < 1.0):
            raise ValueError("mask_prob must lie in [0, 1)")


IDENTITY_AUGMENT = AugmentConfig(noise_sigma=0.0, scale_range=(1.0, 1.0), mask_prob=0.0)


@dataclass
class MultiViewBatch:
    """2b augmented views of b source samples, siblings adjacent.

    View rows 2i and 2i+1 come from source i and are each other's pair.
    The indicator and (optional) label of a source propagate to both of
    its views, so labeled views always appear in sibling pairs.
    """

    views: np.ndarray
    pair_index: np.ndarray
    indicator: np.ndarray
    labels: np.ndarray | None
    source_index: np.ndarray

    def __post_init__(self):
        self.views = as_matrix(self.views, "views")
        self.pair_index = np.asarray(self.pair_index, dtype=np.int64)
        self.indicator = np.asarray(self.indicator, dtype=np.int64)
        self.source_index = np.asarray(self.source_index, dtype=np.int64)
        m = self.views.shape[0]
        if m == 0 or m % 2 != 0:
            raise ValueError("a multi-view batch holds 2b views, b >= 1")
        idx = np.arange(m)
        a = self.pair_index
        if a.shape != (m,) or np.any(a == idx) or np.any(a[a] != idx):
            raise ValueError("pair_index must be an involution without fixed points")
        if np.any(self.indicator[a] != self.indicator):
            raise ValueError("sibling views must share the indicator")
        if np.any(self.source_index[a] != self.source_index):
            raise ValueError("sibling views must share the source")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if np.any(self.labels[a] != self.labels):
                raise ValueError("sibling views must share the label")

    @property
    def n_views(self) -> int:
        return self.views.shape[0]


def synth_gaussians(n: int, d: int, separation: float, pi_true: float, seed) -> BinaryDataset:
    """Two spherical Gaussians at +/- (separation/2) along the first axis.

    round(n * pi_true) samples are positive, the rest negative. The seed
    fully determines the dataset.
    """
    if n < 2 or d < 1:
        raise ValueError("need n >= 2 and d >= 1")
    if not (0.0 < pi_true < 1.0):
        raise ValueError("pi_true must lie strictly inside (0, 1)")
    n_pos = int(round(n * pi_true))
    n_neg = n - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("degenerate class counts; adjust n or pi_true")
    gen = _stream(seed, STREAM_SYNTH).generator()
    x = gen.normal(size=(n, d))
    half = separation / 2.0
    x[:n_pos, 0] += half
    x[n_pos:, 0] -= half
    labels = np.concatenate([np.ones(n_pos, dtype=np.int64), -np.ones(n_neg, dtype=np.int64)])
    return BinaryDataset(x, labels)


def make_pu(ds: BinaryDataset, n_labeled: int, seed, pi_override: float | None = None) -> PUDataset:
    """Label n_labeled true positives uniformly at random; hide the rest."""
    pos_idx = np.flatnonzero(ds.labels == 1)
    p_star = int(pos_idx.size)
    n_star = ds.n - p_star
    if not (0 <= n_labeled <= p_star):
        raise ValueError(f"n_labeled must be in [0, {p_star}], got {n_labeled}")
    gen = _stream(seed, STREAM_PU_SPLIT).generator()
    chosen = gen.choice(pos_idx, size=n_labeled, replace=False)
    s = np.zeros(ds.n, dtype=np.int64)
    s[chosen] = 1
    if pi_override is not None:
        prior = ClassPrior(float(pi_override))
    else:
        prior = exact_pi(p_star, n_star, n_labeled)
    return PUDataset(ds.features, s, ds.labels, prior)


def make_pnu(ds: BinaryDataset, n_labeled: int, seed) -> PNUDataset:
    """Reveal the true label of n_labeled samples chosen uniformly at random."""
    if not (0 <= n_labeled <= ds.n):
        raise ValueError(f"n_labeled must be in [0, {ds.n}], got {n_labeled}")
    gen = _stream(seed, STREAM_PNU_SPLIT).generator()
    chosen = gen.choice(ds.n, size=n_labeled, replace=False)
    observed = np.zeros(ds.n, dtype=np.int64)
    observed[chosen] = ds.labels[chosen]
    labeled_pos = int(np.sum(observed == 1))
    pool = ds.n - n_labeled
    if pool > 0:
        hidden_pos = int(np.sum(ds.labels == 1)) - labeled_pos
        prior = ClassPrior(hidden_pos / pool)
    else:
        prior = ClassPrior(float(np.mean(ds.labels == 1)))
    return PNUDataset(ds.features, observed, ds.labels, prior)


def make_multiview_batch(ds, indices, cfg: AugmentConfig, rng: RngStream) -> MultiViewBatch:
    """Augment the selected source samples into a 2b-view batch.

    Works on any of the dataset kinds; the per-view indicator and labels
    reflect what training is allowed to see (PU: s only; PNU: observed
    labels; fully labeled: everything).
    """
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        raise ValueError("cannot build a batch from zero samples")
    feats = ds.features[indices]
    if isinstance(ds, PUDataset):
        src_s = ds.indicator[indices]
        src_y = None
    elif isinstance(ds, PNUDataset):
        obs = ds.observed_labels[indices]
        src_s = (obs != 0).astype(np.int64)
        src_y = obs
    elif isinstance(ds, BinaryDataset):
        src_s = np.ones(indices.size, dtype=np.int64)
        src_y = ds.labels[indices]
    else:
        raise TypeError(f"unsupported dataset type {type(ds).__name__}")

    b = indices.size
    views = np.repeat(feats, 2, axis=0)
    gen = rng.generator()
    # Fixed draw order: jitter, scales, masks.
    views = views + cfg.noise_sigma * gen.normal(size=views.shape)
    lo, hi = cfg.scale_range
    views = views * gen.uniform(lo, hi, size=(2 * b, 1))
    keep = gen.uniform(size=views.shape) >= cfg.mask_prob
    views = views * keep

    pair = np.arange(2 * b)
    pair[0::2] += 1
    pair[1::2] -= 1
    return MultiViewBatch(
        views=views,
        pair_index=pair,
        indicator=np.repeat(src_s, 2),
        labels=None if src_y is None else np.repeat(src_y, 2),
        source_index=np.repeat(indices, 2),
    )


def _write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def write_csv_dataset(ds: BinaryDataset, path) -> None:
    """Write `feature_0..feature_{d-1},y` with full float64 precision."""
    header = [f"feature_{j}" for j in range(ds.dim)] + ["y"]
    rows = (
        [_REAL_FMT % v for v in ds.features[i]] + [f"{ds.labels[i]:+d}"]
        for i in range(ds.n)
    )
    _write_rows(path, header, rows)


def write_pu_csv(ds: PUDataset, path) -> None:
    """Write the PU variant with a trailing indicator column s."""
    header = [f"feature_{j}" for j in range(ds.dim)] + ["y", "s"]
    rows = (
        [_REAL_FMT % v for v in ds.features[i]]
        + [f"{ds.hidden_labels[i]:+d}", str(int(ds.indicator[i]))]
        for i in range(ds.n)
    )
    _write_rows(path, header, rows)


class CsvFormatError(ValueError):
    """Raised when a dataset file violates the expected schema."""


def _parse_csv(path, want_s: bool):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError(f"{path}: empty file") from None
        tail = ["y", "s"] if want_s else ["y"]
        d = len(header) - len(tail)
        expected = [f"feature_{j}" for j in range(d)] + tail
        if d < 1 or header != expected:
            raise CsvFormatError(f"{path}: bad header {header!r}")
        feats, ys, ss = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(expected):
                raise CsvFormatError(f"{path}: line {lineno}: expected {len(expected)} fields, got {len(row)}")
            try:
                feats.append([float(v) for v in row[:d]])
            except ValueError:
                raise CsvFormatError(f"{path}: line {lineno}: unparseable feature value") from None
            try:
                y = int(row[d])
            except ValueError:
                raise CsvFormatError(f"{path}: line {lineno}: unparseable label {row[d]!r}") from None
            if y not in (-1, 1):
                raise CsvFormatError(f"{path}: line {lineno}: label must be +1 or -1, got {y}")
            ys.append(y)
            if want_s:
                if row[d + 1] not in ("0", "1"):
                    raise CsvFormatError(f"{path}: line {lineno}: indicator must be 0 or 1")
                ss.append(int(row[d + 1]))
    if not feats:
        raise CsvFormatError(f"{path}: no data rows")
    return np.array(feats, dtype=np.float64), np.array(ys, dtype=np.int64), np.array(ss, dtype=np.int64)


def load_csv_dataset(path) -> BinaryDataset:
    """Load a fully labeled dataset written by `write_csv_dataset`."""
    feats, ys, _ = _parse_csv(path, want_s=False)
    return BinaryDataset(feats, ys)


def load_pu_csv(path, pi_override: float | None = None) -> PUDataset:
    """Load a PU dataset written by `write_pu_csv`.

    The prior is recomputed from the hidden class counts unless overridden.
    """
    feats, ys, ss = _parse_csv(path, want_s=True)
    p_star = int(np.sum(ys == 1))
    n_labeled = int(np.sum(ss == 1))
    if pi_override is not None:
        prior = ClassPrior(float(pi_override))
    else:
        prior = exact_pi(p_star, feats.shape[0] - p_star, n_labeled)
    return PUDataset(feats, ss, ys, prior)
