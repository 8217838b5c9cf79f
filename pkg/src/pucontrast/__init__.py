"""Positive-unlabeled contrastive representation learning toolkit.

Pipeline: simulate a PU (or PNU) dataset from fully labeled binary data,
pretrain an MLP encoder with a contrastive objective that weights
unlabeled samples by the class prior, then transfer with a cost-sensitive
PU risk (linear probe or finetune) and evaluate on held-out labeled data.
"""

from .data import (
    AugmentConfig,
    BinaryDataset,
    ClassPrior,
    IDENTITY_AUGMENT,
    MultiViewBatch,
    PNUDataset,
    PUDataset,
    exact_pi,
    load_csv_dataset,
    load_pu_csv,
    make_multiview_batch,
    make_pnu,
    make_pu,
    synth_gaussians,
    write_csv_dataset,
    write_pu_csv,
)
from .losses import (
    EmbeddedBatch,
    LossOutput,
    info_nce,
    punce,
    punce_labeled,
    punce_pnu,
    punce_unlabeled,
    scl,
    scl_pu,
)
from .model import (
    ModelParams,
    NormPolicy,
    backward,
    copy_params,
    default_architecture,
    forward,
    freeze_encoder,
    init_mlp,
    load_checkpoint,
    param_arrays,
    save_checkpoint,
)
from .numerics import RngStream, gemm, log_sum_exp, row_l2_normalize
from .pu_risk import (
    LogitBatch,
    RiskOutput,
    logistic_loss,
    nnpu_risk,
    pn_risk,
    pvu_calibrate,
    pvu_posterior,
    upu_risk,
)
from .train import (
    EvalResult,
    OptState,
    RunMetrics,
    TrainConfig,
    aggregate_seeds,
    across_epoch_variance,
    cosine_lr,
    evaluate,
    finetune,
    joint_objective,
    pretrain,
    probe,
    sgd_step,
    sweep,
)

__version__ = "0.1.0"
