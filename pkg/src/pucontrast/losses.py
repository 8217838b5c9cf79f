"""Contrastive objectives over unit-normalized embeddings.

Every loss here is a weighted sum of terms -log softmax(z_i . z_j / tau)
where the softmax for anchor i runs over all other views k != i. The
losses differ only in which (anchor, target) pairs carry weight:

  info_nce         each anchor's augmented sibling, weight 1
  scl              all same-class views, weight 1/|Q(i)|
  punce_labeled    labeled anchors pull all other labeled views
  punce_unlabeled  unlabeled anchors split weight pi / (1 - pi) between a
                   positive-hypothesis target set and the sibling alone
  punce            (labeled + unlabeled) / 2b
  scl_pu           labeled part of punce plus plain sibling terms on the rest
  punce_pnu        semi-supervised variant with labeled negatives too

The shared kernel returns the exact analytic gradient with respect to the
embeddings, which downstream model training backpropagates further.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diagnostics
from .data import ClassPrior
from .numerics import as_matrix

# Counter bumped when a batch has fewer than two labeled views and the
# labeled term is defined to contribute zero.
DEGENERATE_LABELED_BATCH = "degenerate_labeled_batch"

_UNIT_TOL = 1e-9


@dataclass
class EmbeddedBatch:
    """Unit-norm embeddings of a multi-view batch plus its metadata."""

    z: np.ndarray
    pair_index: np.ndarray
    indicator: np.ndarray
    labels: np.ndarray | None
    tau: float

    def __post_init__(self):
        self.z = as_matrix(self.z, "z")
        self.pair_index = np.asarray(self.pair_index, dtype=np.int64)
        self.indicator = np.asarray(self.indicator, dtype=np.int64)
        m = self.z.shape[0]
        if m < 2 or m % 2 != 0:
            raise ValueError("embedded batch must hold 2b views, b >= 1")
        norms = np.sqrt(np.sum(self.z * self.z, axis=1))
        if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
            worst = float(np.max(np.abs(norms - 1.0)))
            raise ValueError(f"embeddings must be unit rows (worst deviation {worst:.3e})")
        idx = np.arange(m)
        a = self.pair_index
        if a.shape != (m,) or np.any(a == idx) or np.any(a[a] != idx):
            raise ValueError("pair_index must be an involution without fixed points")
        if self.indicator.shape != (m,) or not np.all(np.isin(self.indicator, (0, 1))):
            raise ValueError("indicator must be one 0/1 flag per view")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (m,) or not np.all(np.isin(self.labels, (-1, 0, 1))):
                raise ValueError("labels must be +1, -1, or 0 per view")
        if not (np.isfinite(self.tau) and self.tau > 0.0):
            raise ValueError("tau must be a positive real")

    @property
    def n_views(self) -> int:
        return self.z.shape[0]


@dataclass
class LossOutput:
    """Scalar risk, its per-anchor decomposition, and d(value)/d(embeddings).

    `per_anchor` holds raw per-anchor terms; `value` applies the loss's own
    normalization (mean over the 2b anchors for the batch losses, plain sum
    for the labeled/unlabeled partial risks).
    """

    value: float
    per_anchor: np.ndarray
    grad_z: np.ndarray


def _log_softmax_pairs(z: np.ndarray, tau: float):
    """Row-wise log p_ij and p_ij with the self-pair excluded.

    p_ij = exp(z_i.z_j/tau) / sum_{k != i} exp(z_i.z_k/tau); the diagonal
    of the returned probability matrix is exactly zero.
    """
    scores = (z @ z.T) / tau
    masked = scores.copy()
    np.fill_diagonal(masked, -np.inf)
    row_max = np.max(masked, axis=1)
    expd = np.exp(masked - row_max[:, None])
    denom = np.sum(expd, axis=1)
    log_denom = row_max + np.log(denom)
    logp = scores - log_denom[:, None]
    p = np.exp(logp)
    np.fill_diagonal(p, 0.0)
    return logp, p


def _from_weights(batch: EmbeddedBatch, weights: np.ndarray, normalize: bool) -> LossOutput:
    """Assemble value / per-anchor / gradient from a pair-weight matrix.

    loss_raw = sum_ij W_ij * (-log p_ij). With r_i = sum_j W_ij the exact
    gradient through the scores S = z z^T / tau is
    dL/dS_ij = (r_i p_ij - W_ij) / tau, and dL/dz = (G + G^T) z.
    """
    z, tau = batch.z, batch.tau
    logp, p = _log_softmax_pairs(z, tau)
    per_anchor = -np.sum(weights * logp, axis=1)
    row_weight = np.sum(weights, axis=1)
    g = (row_weight[:, None] * p - weights) / tau
    grad = g @ z + g.T @ z
    if normalize:
        m = z.shape[0]
        return LossOutput(float(np.sum(per_anchor)) / m, per_anchor, grad / m)
    return LossOutput(float(np.sum(per_anchor)), per_anchor, grad)


def _labeled_weights(batch: EmbeddedBatch) -> np.ndarray:
    """Pair weights of the labeled-anchor risk; zero matrix if |P| < 2."""
    m = batch.n_views
    w = np.zeros((m, m))
    labeled = np.flatnonzero(batch.indicator == 1)
    if labeled.size < 2:
        diagnostics.increment(DEGENERATE_LABELED_BATCH)
        return w
    coef = 1.0 / (labeled.size - 1)
    w[np.ix_(labeled, labeled)] = coef
    w[labeled, labeled] = 0.0
    return w


def _check_unlabeled_pairing(batch: EmbeddedBatch, unlabeled: np.ndarray) -> None:
    # The indicator is per source, so an unlabeled view's sibling must be
    # unlabeled too; anything else is a malformed batch.
    if np.any(batch.indicator[batch.pair_index[unlabeled]] != 0):
        raise ValueError("an unlabeled view is paired with a labeled sibling")


def _unlabeled_weights(batch: EmbeddedBatch, pi: float) -> np.ndarray:
    """Pair weights of the unlabeled-anchor risk at class prior pi."""
    m = batch.n_views
    w = np.zeros((m, m))
    labeled = np.flatnonzero(batch.indicator == 1)
    unlabeled = np.flatnonzero(batch.indicator == 0)
    _check_unlabeled_pairing(batch, unlabeled)
    pos_share = pi / (labeled.size + 1)
    if labeled.size > 0:
        w[np.ix_(unlabeled, labeled)] = pos_share
    sib = batch.pair_index[unlabeled]
    w[unlabeled, sib] = pos_share + (1.0 - pi)
    return w


def info_nce(batch: EmbeddedBatch) -> LossOutput:
    """Self-supervised loss: each view's only positive is its sibling."""
    m = batch.n_views
    w = np.zeros((m, m))
    w[np.arange(m), batch.pair_index] = 1.0
    return _from_weights(batch, w, normalize=True)


def scl(batch: EmbeddedBatch) -> LossOutput:
    """Fully supervised loss: every same-class view is a positive."""
    if batch.labels is None or np.any(batch.labels == 0):
        raise ValueError("scl needs a label on every view")
    same = batch.labels[:, None] == batch.labels[None, :]
    np.fill_diagonal(same, False)
    sizes = np.sum(same, axis=1)
    if np.any(sizes == 0):
        raise ValueError("every anchor needs at least one same-class view")
    w = same / sizes[:, None]
    return _from_weights(batch, w, normalize=True)


def punce_labeled(batch: EmbeddedBatch) -> LossOutput:
    """Labeled-anchor risk: labeled views pull each other together.

    The value is the raw sum over labeled anchors; the full objective
    applies the 1/2b factor. A batch with fewer than two labeled views
    contributes zero and bumps the DEGENERATE_LABELED_BATCH counter.
    """
    return _from_weights(batch, _labeled_weights(batch), normalize=False)


def punce_unlabeled(batch: EmbeddedBatch, prior: ClassPrior) -> LossOutput:
    """Unlabeled-anchor risk: positive with weight pi, negative with 1 - pi.

    Under the positive hypothesis the anchor is pulled toward all labeled
    views plus its sibling (weight pi split evenly among them); under the
    negative hypothesis only the sibling is a positive pair. Raw sum, as
    for `punce_labeled`.
    """
    return _from_weights(batch, _unlabeled_weights(batch, prior.pi), normalize=False)


def punce(batch: EmbeddedBatch, prior: ClassPrior) -> LossOutput:
    """Positive-unlabeled contrastive objective: labeled and unlabeled
    risks summed and averaged over the 2b anchors.

    With every view labeled this equals `scl` with one class; with no view
    labeled it equals `info_nce` for any prior.
    """
    w = _labeled_weights(batch) + _unlabeled_weights(batch, prior.pi)
    return _from_weights(batch, w, normalize=True)


def scl_pu(batch: EmbeddedBatch) -> LossOutput:
    """Supervised loss on labeled views, sibling-only loss on the rest.

    Identical to `punce` evaluated at prior 0.
    """
    m = batch.n_views
    w = _labeled_weights(batch)
    unlabeled = np.flatnonzero(batch.indicator == 0)
    _check_unlabeled_pairing(batch, unlabeled)
    w[unlabeled, batch.pair_index[unlabeled]] += 1.0
    return _from_weights(batch, w, normalize=True)


def punce_pnu(batch: EmbeddedBatch, prior: ClassPrior) -> LossOutput:
    """Semi-supervised objective with labeled positives and negatives.

    Labeled anchors behave as in `scl` restricted to labeled views of the
    same sign. An unlabeled anchor splits weight pi over the labeled
    positives plus its sibling and weight 1 - pi over the labeled
    negatives plus its sibling.
    """
    if batch.labels is None:
        raise ValueError("pnu loss needs per-view labels")
    lab = batch.labels
    s = batch.indicator
    if np.any((s == 1) & (lab == 0)):
        raise ValueError("every labeled view needs an explicit sign")
    m = batch.n_views
    pos = np.flatnonzero((s == 1) & (lab == 1))
    neg = np.flatnonzero((s == 1) & (lab == -1))
    unlabeled = np.flatnonzero(s == 0)
    _check_unlabeled_pairing(batch, unlabeled)

    w = np.zeros((m, m))
    for group in (pos, neg):
        if group.size >= 2:
            w[np.ix_(group, group)] = 1.0 / (group.size - 1)
            w[group, group] = 0.0
        elif group.size == 1:
            raise ValueError("a labeled view lost its sibling; cannot form same-class pairs")

    pi = prior.pi
    pos_share = pi / (pos.size + 1)
    neg_share = (1.0 - pi) / (neg.size + 1)
    if pos.size > 0:
        w[np.ix_(unlabeled, pos)] = pos_share
    if neg.size > 0:
        w[np.ix_(unlabeled, neg)] = neg_share
    sib = batch.pair_index[unlabeled]
    w[unlabeled, sib] = pos_share + neg_share
    return _from_weights(batch, w, normalize=True)


LOSSES_BY_NAME = {
    "infonce": lambda batch, prior: info_nce(batch),
    "scl": lambda batch, prior: scl(batch),
    "punce": punce,
    "scl_pu": lambda batch, prior: scl_pu(batch),
    "pnu_punce": punce_pnu,
}
