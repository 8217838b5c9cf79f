"""Contrastive pretraining, transfer (linear probe / finetune), evaluation,
and multi-seed aggregation.

Pretraining runs minibatch SGD with momentum under a cosine learning-rate
schedule; each step augments a fresh batch into two views, embeds it, and
descends one of the contrastive objectives. Transfer optimizes a
cost-sensitive PU risk over the scalar head logits; probing freezes the
encoder and projector, finetuning updates everything. Transfer steps are
full-batch: with few labeled positives, small uniform batches routinely
contain no labeled sample at all, which the risk estimators reject.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np

from .data import (
    AugmentConfig,
    BinaryDataset,
    ClassPrior,
    PNUDataset,
    PUDataset,
    make_multiview_batch,
    make_pu,
    synth_gaussians,
)
from .losses import LOSSES_BY_NAME, EmbeddedBatch
from .model import (
    ModelParams,
    NormPolicy,
    backward,
    copy_params,
    default_architecture,
    forward,
    freeze_encoder,
    full_mask,
    init_mlp,
    param_arrays,
    zeros_like_params,
)
from .numerics import (
    RngStream,
    STREAM_AUGMENT,
    STREAM_PVU_HOLDOUT,
    STREAM_SHUFFLE,
    STREAM_TEST_DATA,
)
from .pu_risk import RISKS_BY_NAME, LogitBatch, pn_risk, pvu_calibrate

LOSS_KINDS = ("infonce", "scl", "punce", "scl_pu", "pnu_punce")
RISK_KINDS = ("pn", "pvu", "upu", "nnpu")

_REAL_FMT = "%.17g"


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters shared by pretraining and transfer runs."""

    loss: str = "punce"
    risk: str = "nnpu"
    tau: float = 0.5
    pi_override: float | None = None
    batch_size: int = 64
    epochs: int = 100
    lr0: float = 0.01
    lr_min: float = 0.0
    momentum: float = 0.9
    seed: int = 0
    joint_lambda: float | None = None
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.loss!r}")
        if self.risk not in RISK_KINDS:
            raise ValueError(f"unknown risk kind {self.risk!r}")
        if not (self.tau > 0.0 and self.lr0 > 0.0):
            raise ValueError("tau and lr0 must be positive")
        if not (0.0 <= self.lr_min <= self.lr0):
            raise ValueError("need 0 <= lr_min <= lr0")
        if self.momentum < 0.0:
            raise ValueError("momentum must be nonnegative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.joint_lambda is not None and not (0.0 <= self.joint_lambda <= 1.0):
            raise ValueError("joint_lambda must lie in [0, 1]")
        if self.pi_override is not None and not (0.0 <= self.pi_override <= 1.0):
            raise ValueError("pi_override must lie in [0, 1]")


class RunMetrics:
    """Append-only (epoch, split, metric, value, seed) records."""

    def __init__(self):
        self.records = []
        self._last_epoch = {}

    def append(self, epoch: int, split: str, metric: str, value: float, seed: int) -> None:
        key = (split, metric, seed)
        last = self._last_epoch.get(key)
        if last is not None and epoch < last:
            raise ValueError(f"epoch must be monotone per {key}, got {epoch} after {last}")
        self._last_epoch[key] = epoch
        self.records.append((int(epoch), split, metric, float(value), int(seed)))

    def values(self, split: str, metric: str):
        return [v for (_, sp, m, v, _) in self.records if sp == split and m == metric]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "split", "metric", "value", "seed"])
            for epoch, split, metric, value, seed in self.records:
                w.writerow([epoch, split, metric, _REAL_FMT % value, seed])

    @classmethod
    def from_csv(cls, path) -> "RunMetrics":
        out = cls()
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header != ["epoch", "split", "metric", "value", "seed"]:
                raise ValueError(f"{path}: bad metrics header {header!r}")
            for row in reader:
                out.append(int(row[0]), row[1], row[2], float(row[3]), int(row[4]))
        return out


class OptState:
    """SGD momentum buffers congruent to the parameter arrays."""

    def __init__(self, params: ModelParams, momentum: float):
        self.momentum = momentum
        self.buffers = [np.zeros_like(a) for a in param_arrays(params)]
        self.t = 0


def cosine_lr(t: int, total: int, lr0: float, lr_min: float) -> float:
    """Half-cosine decay from lr0 at t=0 to lr_min at t=total."""
    if total < 1:
        raise ValueError("total steps must be >= 1")
    if not (0 <= t <= total):
        raise ValueError(f"step {t} outside [0, {total}]")
    return float(lr_min + 0.5 * (lr0 - lr_min) * (1.0 + np.cos(np.pi * t / total)))


def sgd_step(params: ModelParams, grads, opt: OptState, lr: float, mask) -> None:
    """buf <- momentum*buf + grad; param <- param - lr*buf (masked skipped).

    Updates in place; masked-out parameters and their buffers are left
    untouched.
    """
    arrays = param_arrays(params)
    if len(grads) != len(arrays) or any(g.shape != a.shape for g, a in zip(grads, arrays)):
        raise ValueError("gradient structure does not match parameters")
    for arr, g, buf, updatable in zip(arrays, grads, opt.buffers, mask):
        if not updatable:
            continue
        buf *= opt.momentum
        buf += g
        arr -= lr * buf
    opt.t += 1


def joint_objective(ce_value_grad, cl_value_grad, lam: float):
    """Convex combination lam*CE + (1-lam)*CL of (value, grads) pairs."""
    if not (0.0 <= lam <= 1.0):
        raise ValueError("lambda must lie in [0, 1]")
    ce_v, ce_g = ce_value_grad
    cl_v, cl_g = cl_value_grad
    if len(ce_g) != len(cl_g):
        raise ValueError("gradient structures differ")
    value = lam * ce_v + (1.0 - lam) * cl_v
    grads = [lam * a + (1.0 - lam) * b for a, b in zip(ce_g, cl_g)]
    return value, grads


def _check_loss_data(loss: str, data) -> None:
    if loss == "pnu_punce":
        if not isinstance(data, PNUDataset):
            raise ValueError("pnu_punce needs a PNU dataset")
    elif loss == "scl":
        if isinstance(data, BinaryDataset):
            return
        if not (isinstance(data, PNUDataset) and np.all(data.observed_labels != 0)):
            raise ValueError("scl needs a fully labeled dataset")
    elif loss in ("punce", "scl_pu"):
        if not isinstance(data, PUDataset):
            raise ValueError(f"{loss} needs a PU dataset")
    # infonce accepts anything


def _prior_for(cfg: TrainConfig, data) -> ClassPrior:
    if cfg.pi_override is not None:
        return ClassPrior(cfg.pi_override)
    if isinstance(data, (PUDataset, PNUDataset)):
        return data.prior
    return ClassPrior(float(np.mean(data.labels == 1)))


def _ce_on_labeled(params, views, indicator, labels, norm):
    """Mean logistic loss over labeled views of a batch, with param grads.

    Returns (value, grads). Unlabeled views contribute nothing; labeled
    views use the observed sign (always +1 in the PU setting).
    """
    labeled = np.flatnonzero(indicator == 1)
    if labeled.size == 0:
        return 0.0, zeros_like_params(params)
    logits, tape = forward(params, views, "finetune", norm)
    flat = logits[:, 0]
    y = np.ones(flat.size) if labels is None else labels.astype(np.float64)
    t = -y[labeled] * flat[labeled]
    losses = np.maximum(t, 0.0) + np.log1p(np.exp(-np.abs(t)))
    value = float(np.mean(losses))
    # d softplus(t)/dz with t = -y z is -y * sigmoid(t), computed stably
    sig_t = np.where(t >= 0, 1.0 / (1.0 + np.exp(-np.abs(t))), np.exp(t) / (1.0 + np.exp(t)))
    dlogit = np.zeros_like(flat)
    dlogit[labeled] = -y[labeled] * sig_t / labeled.size
    grads, _ = backward(params, tape, dlogit[:, None])
    return value, grads


def pretrain(cfg: TrainConfig, data, params: ModelParams, norm: NormPolicy = NormPolicy(), eval_data: BinaryDataset | None = None):
    """Contrastive pretraining; returns (params, RunMetrics).

    Each epoch shuffles the data, builds 2-view batches (incomplete tail
    dropped), embeds them in encode mode, and applies one SGD step per
    batch. Deterministic under cfg.seed. With joint_lambda set, a logistic
    term on the labeled views' head logits is mixed into the update.
    """
    _check_loss_data(cfg.loss, data)
    metrics = RunMetrics()
    if cfg.epochs == 0:
        return params, metrics
    n = data.n
    b = cfg.batch_size
    steps_per_epoch = n // b
    if steps_per_epoch == 0:
        raise ValueError(f"batch size {b} exceeds dataset size {n}")
    total_steps = cfg.epochs * steps_per_epoch
    prior = _prior_for(cfg, data)
    loss_fn = LOSSES_BY_NAME[cfg.loss]
    shuffle = RngStream(cfg.seed, STREAM_SHUFFLE)
    augment = RngStream(cfg.seed, STREAM_AUGMENT)
    opt = OptState(params, cfg.momentum)
    mask = full_mask(params)

    for epoch in range(cfg.epochs):
        perm = shuffle.block(epoch).generator().permutation(n)
        epoch_losses = []
        for k in range(steps_per_epoch):
            idx = perm[k * b : (k + 1) * b]
            batch = make_multiview_batch(data, idx, cfg.augment, augment.block(epoch, k))
            z, tape = forward(params, batch.views, "encode", norm)
            emb = EmbeddedBatch(z, batch.pair_index, batch.indicator, batch.labels, cfg.tau)
            out = loss_fn(emb, prior)
            grads, _ = backward(params, tape, out.grad_z)
            value = out.value
            if cfg.joint_lambda is not None:
                ce = _ce_on_labeled(params, batch.views, batch.indicator, batch.labels, norm)
                value, grads = joint_objective(ce, (out.value, grads), cfg.joint_lambda)
            lr = cosine_lr(opt.t, total_steps, cfg.lr0, cfg.lr_min)
            sgd_step(params, grads, opt, lr, mask)
            epoch_losses.append(value)
        metrics.append(epoch, "train", "loss", float(np.mean(epoch_losses)), cfg.seed)
        if eval_data is not None:
            metrics.append(epoch, "test", "accuracy", evaluate(params, eval_data).accuracy, cfg.seed)
    return params, metrics


def _head_logits(params, features_cached):
    return features_cached @ params.head_weight + params.head_bias


def _transfer(cfg: TrainConfig, params: ModelParams, data: PUDataset, mask, norm: NormPolicy, eval_data):
    """Shared probe/finetune loop: full-batch risk steps over the head
    (probe) or the whole network (finetune)."""
    if not isinstance(data, PUDataset):
        raise ValueError("transfer training needs a PU dataset")
    metrics = RunMetrics()
    if cfg.epochs == 0:
        return params, metrics
    prior = _prior_for(cfg, data)
    opt = OptState(params, cfg.momentum)
    frozen_encoder = not mask[0]

    s = data.indicator
    train_idx = np.arange(data.n)
    cal_idx = None
    if cfg.risk == "pvu":
        labeled = np.flatnonzero(s == 1)
        if labeled.size < 2:
            raise ValueError("pvu calibration needs at least two labeled positives")
        gen = RngStream(cfg.seed, STREAM_PVU_HOLDOUT).generator()
        perm = gen.permutation(labeled)
        n_cal = min(labeled.size - 1, max(1, int(round(0.2 * labeled.size))))
        cal_idx = np.sort(perm[:n_cal])
        train_idx = np.setdiff1d(np.arange(data.n), cal_idx)
    risk_fn = pn_risk if cfg.risk == "pvu" else RISKS_BY_NAME[cfg.risk]

    cached = None
    if frozen_encoder:
        cached = forward(params, data.features, "feat_ext", norm)[0]

    for epoch in range(cfg.epochs):
        if frozen_encoder:
            logits = _head_logits(params, cached[train_idx])
            batch = LogitBatch(logits, s[train_idx], prior)
            out = risk_fn(batch)
            head_w_grad = cached[train_idx].T @ out.grad_logits
            head_b_grad = np.array([np.sum(out.grad_logits)])
            grads = [np.zeros_like(a) for a in param_arrays(params)[:-2]] + [head_w_grad, head_b_grad]
        else:
            logits2d, tape = forward(params, data.features[train_idx], "finetune", norm)
            batch = LogitBatch(logits2d[:, 0], s[train_idx], prior)
            out = risk_fn(batch)
            grads, _ = backward(params, tape, out.grad_logits[:, None])
        lr = cosine_lr(opt.t, cfg.epochs, cfg.lr0, cfg.lr_min)
        sgd_step(params, grads, opt, lr, mask)
        metrics.append(epoch, "train", "risk", out.value, cfg.seed)
        if eval_data is not None:
            metrics.append(epoch, "test", "accuracy", evaluate(params, eval_data).accuracy, cfg.seed)

    if cfg.risk == "pvu":
        if frozen_encoder:
            cal_logits = _head_logits(params, cached[cal_idx])
        else:
            cal_logits = forward(params, data.features[cal_idx], "finetune", norm)[0][:, 0]
        p_cal = 1.0 / (1.0 + np.exp(-cal_logits))
        c = pvu_calibrate(p_cal)
        # Fold the posterior threshold p_s/c = 1/2 into the bias so that
        # sign(logit) implements the calibrated decision rule.
        half = c / 2.0
        params.head_bias -= np.log(half / (1.0 - half))
        metrics.append(cfg.epochs - 1, "train", "pvu_c", c, cfg.seed)
    return params, metrics


def probe(cfg: TrainConfig, params: ModelParams, data: PUDataset, norm: NormPolicy = NormPolicy(), eval_data: BinaryDataset | None = None):
    """Train only the head with the configured PU risk; encoder and
    projector stay byte-identical."""
    return _transfer(cfg, params, data, freeze_encoder(params), norm, eval_data)


def finetune(cfg: TrainConfig, params: ModelParams, data: PUDataset, norm: NormPolicy = NormPolicy(), eval_data: BinaryDataset | None = None):
    """Same loop as `probe` with every parameter updatable."""
    return _transfer(cfg, params, data, full_mask(params), norm, eval_data)


@dataclass
class EvalResult:
    accuracy: float
    true_pos: int
    false_pos: int
    true_neg: int
    false_neg: int
    recall_pos: float
    recall_neg: float

    @property
    def confusion_total(self) -> int:
        return self.true_pos + self.false_pos + self.true_neg + self.false_neg


def evaluate(params: ModelParams, test: BinaryDataset, norm: NormPolicy = NormPolicy()) -> EvalResult:
    """Accuracy and confusion counts of sign(head logit) on labeled data."""
    if test.n == 0:
        raise ValueError("test set must be non-empty")
    logits = forward(params, test.features, "finetune", norm)[0][:, 0]
    pred = np.where(logits >= 0.0, 1, -1)
    y = test.labels
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == -1)))
    tn = int(np.sum((pred == -1) & (y == -1)))
    fn = int(np.sum((pred == -1) & (y == 1)))
    pos = tp + fn
    neg = tn + fp
    return EvalResult(
        accuracy=(tp + tn) / test.n,
        true_pos=tp,
        false_pos=fp,
        true_neg=tn,
        false_neg=fn,
        recall_pos=tp / pos if pos else float("nan"),
        recall_neg=tn / neg if neg else float("nan"),
    )


def aggregate_seeds(runs):
    """Mean and unbiased std per (epoch, split, metric) across seed runs.

    All runs must record exactly the same keys; with a single run the std
    is None.
    """
    if not runs:
        raise ValueError("need at least one run")
    keyed = []
    for run in runs:
        d = {}
        for epoch, split, metric, value, _ in run.records:
            key = (epoch, split, metric)
            if key in d:
                raise ValueError(f"duplicate record {key} within one run")
            d[key] = value
        keyed.append(d)
    keys = set(keyed[0])
    for i, d in enumerate(keyed[1:], 1):
        if set(d) != keys:
            missing = keys.symmetric_difference(d)
            raise ValueError(f"run {i} records do not align: {sorted(missing)[:3]}")
    out = {}
    for key in sorted(keys):
        vals = np.array([d[key] for d in keyed])
        std = float(np.std(vals, ddof=1)) if len(vals) >= 2 else None
        out[key] = (float(np.mean(vals)), std)
    return out


def across_epoch_variance(metrics: RunMetrics, split: str = "test", metric: str = "accuracy") -> float:
    """Variance of a per-epoch metric series; the stability report."""
    vals = metrics.values(split, metric)
    if len(vals) < 2:
        raise ValueError("need at least two epochs of the metric")
    return float(np.var(np.array(vals), ddof=1))


@dataclass
class SweepCell:
    """One (loss, n_labeled, seed) run: paired transfer accuracies from the
    same pretrained checkpoint."""

    loss: str
    n_labeled: int
    seed: int
    lp_accuracy: float
    ft_accuracy: float | None


@dataclass
class SweepResult:
    cells: list

    def aggregate(self, what: str = "lp_accuracy"):
        """mean/std of an accuracy field per (n_labeled, loss) cell."""
        groups = {}
        for c in self.cells:
            v = getattr(c, what)
            if v is None:
                raise ValueError(f"{what} missing for {c.loss} n_labeled={c.n_labeled}")
            groups.setdefault((c.n_labeled, c.loss), []).append(v)
        out = {}
        for key in sorted(groups):
            vals = np.array(groups[key])
            std = float(np.std(vals, ddof=1)) if vals.size >= 2 else None
            out[key] = (float(np.mean(vals)), std)
        return out


def sweep(
    base: TrainConfig,
    losses,
    n_labeled_values,
    n_seeds: int,
    data_n: int = 2000,
    data_d: int = 10,
    data_sep: float = 6.0,
    data_pi: float = 0.5,
    test_n: int = 2000,
    probe_epochs: int = 50,
    probe_lr0: float = 0.5,
    with_finetune: bool = True,
) -> SweepResult:
    """Grid over (loss x n_labeled x seed) on synthetic Gaussian data.

    Every cell pretrains an encoder, then runs a linear probe and (when
    enabled) a finetune pass from copies of the same checkpoint, and
    records test accuracy for both. Seeds are base.seed + i.
    """
    losses = list(losses)
    n_labeled_values = list(n_labeled_values)
    for loss in losses:
        if loss not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {loss!r}")
    if loss_needs_pnu := [l for l in losses if l in ("scl", "pnu_punce")]:
        raise ValueError(f"sweep runs on PU data; {loss_needs_pnu[0]} is not applicable")
    cells = []
    enc_sizes, proj_sizes = default_architecture(data_d)
    for i in range(n_seeds):
        seed = base.seed + i
        train_ds = synth_gaussians(data_n, data_d, data_sep, data_pi, seed)
        test_ds = synth_gaussians(test_n, data_d, data_sep, data_pi, RngStream(seed, STREAM_TEST_DATA))
        for n_labeled in n_labeled_values:
            pu = make_pu(train_ds, n_labeled, seed)
            for loss in losses:
                cfg = replace(base, loss=loss, seed=seed)
                params = init_mlp(enc_sizes, proj_sizes, seed)
                params, _ = pretrain(cfg, pu, params)
                transfer_cfg = replace(cfg, epochs=probe_epochs, lr0=probe_lr0)
                lp_params, _ = probe(transfer_cfg, copy_params(params), pu)
                lp_acc = evaluate(lp_params, test_ds).accuracy
                ft_acc = None
                if with_finetune:
                    ft_params, _ = finetune(transfer_cfg, copy_params(params), pu)
                    ft_acc = evaluate(ft_params, test_ds).accuracy
                cells.append(SweepCell(loss, n_labeled, seed, lp_acc, ft_acc))
    return SweepResult(cells)
