"""Cost-sensitive risks for training a scalar classifier on PU data.

All estimators share the logistic surrogate loss and return both the risk
value and its exact gradient with respect to the logits. The unbiased
estimator rewrites the supervised risk using only labeled positives, the
unlabeled pool, and the class prior; its non-negative variant clamps the
reconstructed negative part at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diagnostics
from .data import ClassPrior

# Counter bumped when a calibrated posterior exceeds 1 and is clipped.
POSTERIOR_CLIPPED = "pvu_posterior_clipped"


@dataclass
class LogitBatch:
    """One scalar score per sample plus the PU indicator and class prior."""

    logits: np.ndarray
    indicator: np.ndarray
    prior: ClassPrior

    def __post_init__(self):
        self.logits = np.asarray(self.logits, dtype=np.float64)
        self.indicator = np.asarray(self.indicator, dtype=np.int64)
        if self.logits.ndim != 1 or self.logits.size == 0:
            raise ValueError("logits must be a non-empty vector")
        if not np.all(np.isfinite(self.logits)):
            raise ValueError("logits must be finite")
        if self.indicator.shape != self.logits.shape:
            raise ValueError("indicator length must match logits")
        if not np.all(np.isin(self.indicator, (0, 1))):
            raise ValueError("indicator must be 0 or 1")


@dataclass
class RiskOutput:
    value: float
    grad_logits: np.ndarray


def logistic_loss(z: float, y: int) -> float:
    """log(1 + exp(-y z)) in softplus form; never overflows."""
    if y not in (-1, 1):
        raise ValueError("y must be +1 or -1")
    m = -y * z
    if m > 0:
        return m + np.log1p(np.exp(-m))
    return float(np.log1p(np.exp(m)))


def _softplus(t: np.ndarray) -> np.ndarray:
    # log(1 + exp(t)), stable for large |t|
    return np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))


def _sigmoid(t: np.ndarray) -> np.ndarray:
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _loss_and_grad(z: np.ndarray, y: float):
    """Vectorized logistic loss and d/dz for a common target sign y."""
    losses = _softplus(-y * z)
    grads = -y * _sigmoid(-y * z)
    return losses, grads


def pn_risk(batch: LogitBatch) -> RiskOutput:
    """Treat labeled as positive and unlabeled as negative; mean risk."""
    z, s = batch.logits, batch.indicator
    y = np.where(s == 1, 1.0, -1.0)
    losses = _softplus(-y * z)
    grads = -y * _sigmoid(-y * z)
    n = z.size
    return RiskOutput(float(np.mean(losses)), grads / n)


def _split(batch: LogitBatch):
    lab = np.flatnonzero(batch.indicator == 1)
    unl = np.flatnonzero(batch.indicator == 0)
    if lab.size == 0 or unl.size == 0:
        raise ValueError("need at least one labeled and one unlabeled sample")
    return lab, unl


def upu_risk(batch: LogitBatch) -> RiskOutput:
    """Unbiased PU risk; may be negative in finite samples.

    value = pi * mean_P loss(z,+1) + mean_U loss(z,-1) - pi * mean_P loss(z,-1)
    """
    lab, unl = _split(batch)
    z = batch.logits
    pi = batch.prior.pi
    lp_pos, gp_pos = _loss_and_grad(z[lab], +1.0)
    lu_neg, gu_neg = _loss_and_grad(z[unl], -1.0)
    lp_neg, gp_neg = _loss_and_grad(z[lab], -1.0)
    value = pi * np.mean(lp_pos) + np.mean(lu_neg) - pi * np.mean(lp_neg)
    grad = np.zeros_like(z)
    grad[lab] = pi * (gp_pos - gp_neg) / lab.size
    grad[unl] = gu_neg / unl.size
    return RiskOutput(float(value), grad)


def nnpu_risk(batch: LogitBatch) -> RiskOutput:
    """Non-negative PU risk: the reconstructed negative part is clamped.

    When the inner term mean_U loss(z,-1) - pi * mean_P loss(z,-1) is
    nonnegative this equals `upu_risk` exactly; when it is clamped, no
    gradient flows through it.
    """
    lab, unl = _split(batch)
    z = batch.logits
    pi = batch.prior.pi
    lp_pos, gp_pos = _loss_and_grad(z[lab], +1.0)
    lu_neg, gu_neg = _loss_and_grad(z[unl], -1.0)
    lp_neg, gp_neg = _loss_and_grad(z[lab], -1.0)
    inner = np.mean(lu_neg) - pi * np.mean(lp_neg)
    value = pi * np.mean(lp_pos) + max(0.0, float(inner))
    grad = np.zeros_like(z)
    grad[lab] = pi * gp_pos / lab.size
    if inner >= 0.0:
        grad[lab] -= pi * gp_neg / lab.size
        grad[unl] = gu_neg / unl.size
    return RiskOutput(float(value), grad)


def pvu_calibrate(s_probabilities_on_labeled) -> float:
    """Estimate c = p(s=1 | y=+1) as the mean predicted labeling
    probability on held-out labeled positives."""
    p = np.asarray(s_probabilities_on_labeled, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("need a non-empty probability vector")
    if np.any(p <= 0.0) or np.any(p > 1.0):
        raise ValueError("probabilities must lie in (0, 1]")
    return float(np.mean(p))


def pvu_posterior(p_s: float, c: float) -> float:
    """Convert a labeling probability into a class posterior via p_s / c.

    Finite-sample classifiers can emit p_s > c; the ratio is clipped to 1
    and the POSTERIOR_CLIPPED counter bumped.
    """
    if not (0.0 < c <= 1.0):
        raise ValueError("calibration constant must lie in (0, 1]")
    if p_s < 0.0:
        raise ValueError("p_s must be nonnegative")
    if p_s > c:
        diagnostics.increment(POSTERIOR_CLIPPED)
        return 1.0
    return p_s / c


RISKS_BY_NAME = {
    "pn": pn_risk,
    "upu": upu_risk,
    "nnpu": nnpu_risk,
}
