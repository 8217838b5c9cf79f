"""Command-line driver for the full pipeline.

Subcommands: gen-data, pretrain, probe, finetune, eval, sweep. Every run
merges `key = value` config-file entries with command-line flag overrides
(flags win), validates against a fixed key schema, and echoes the
effective configuration into a manifest file next to the outputs.
Re-running any subcommand from its manifest reproduces the outputs
byte for byte.
"""

from __future__ import annotations

import argparse
import os
import sys

from .data import (
    AugmentConfig,
    load_csv_dataset,
    make_pnu,
    make_pu,
    synth_gaussians,
    write_csv_dataset,
)
from .model import (
    NormPolicy,
    default_architecture,
    init_mlp,
    load_checkpoint,
    save_checkpoint,
)
from .train import (
    LOSS_KINDS,
    RISK_KINDS,
    RunMetrics,
    TrainConfig,
    evaluate,
    finetune,
    pretrain,
    probe,
    sweep,
)

ENV_OUT_DIR = "PUCONTRAST_OUTDIR"

# key -> (type tag, default); None default means "required if used".
_SCHEMA = {
    "loss": ("choice:loss", "punce"),
    "risk": ("choice:risk", "nnpu"),
    "tau": ("float", 0.5),
    "pi_override": ("optfloat", None),
    "batch_size": ("int", 64),
    "epochs": ("int", 100),
    "lr0": ("float", 0.01),
    "lr_min": ("float", 0.0),
    "momentum": ("float", 0.9),
    "seed": ("int", 0),
    "joint_lambda": ("optfloat", None),
    "noise_sigma": ("float", 0.1),
    "scale_lo": ("float", 0.9),
    "scale_hi": ("float", 1.1),
    "mask_prob": ("float", 0.05),
    "n": ("int", 2000),
    "d": ("int", 10),
    "sep": ("float", 6.0),
    "pi": ("float", 0.5),
    "n_labeled": ("optint", None),
    "pnu": ("optint", None),
    "data": ("optstr", None),
    "checkpoint": ("optstr", None),
    "out_dir": ("optstr", None),
    # sweep-only keys
    "losses": ("str", "infonce,scl_pu,punce"),
    "n_labeled_list": ("str", "50,200,800"),
    "seeds": ("int", 5),
    "test_n": ("int", 2000),
    "probe_epochs": ("int", 50),
    "probe_lr0": ("float", 0.5),
    "with_finetune": ("int", 1),
}

_SUBCOMMANDS = ("gen-data", "pretrain", "probe", "finetune", "eval", "sweep")


class UsageError(ValueError):
    pass


def _parse_value(key: str, raw):
    kind, _ = _SCHEMA[key]
    if not isinstance(raw, str):
        return raw
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "optint":
            return None if raw.lower() in ("", "none") else int(raw)
        if kind == "float":
            return float(raw)
        if kind == "optfloat":
            return None if raw.lower() in ("", "none") else float(raw)
        if kind == "choice:loss":
            if raw not in LOSS_KINDS:
                raise ValueError
            return raw
        if kind == "choice:risk":
            if raw not in RISK_KINDS:
                raise ValueError
            return raw
        return raw
    except ValueError:
        raise UsageError(f"bad value for key {key!r}: {raw!r}") from None


def _read_config_file(path) -> dict:
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            text = line.split("#", 1)[0].strip()
            if not text:
                continue
            if "=" not in text:
                raise UsageError(f"{path}: line {lineno}: expected key = value")
            key, _, raw = text.partition("=")
            key = key.strip()
            if key not in _SCHEMA:
                raise UsageError(f"{path}: line {lineno}: unknown key {key!r}")
            out[key] = _parse_value(key, raw.strip())
    return out


def parse_config(file_path, flag_overrides: dict) -> dict:
    """Merge defaults, config file, and flags (highest precedence last)."""
    merged = {k: default for k, (_, default) in _SCHEMA.items()}
    if file_path:
        merged.update(_read_config_file(file_path))
    for key, raw in flag_overrides.items():
        if raw is None:
            continue
        if key not in _SCHEMA:
            raise UsageError(f"unknown key {key!r}")
        merged[key] = _parse_value(key, raw)
    return merged


def _train_config(cfg: dict, epochs_key: str = "epochs", lr_key: str = "lr0") -> TrainConfig:
    return TrainConfig(
        loss=cfg["loss"],
        risk=cfg["risk"],
        tau=cfg["tau"],
        pi_override=cfg["pi_override"],
        batch_size=cfg["batch_size"],
        epochs=cfg[epochs_key],
        lr0=cfg[lr_key],
        lr_min=cfg["lr_min"],
        momentum=cfg["momentum"],
        seed=cfg["seed"],
        joint_lambda=cfg["joint_lambda"],
        augment=AugmentConfig(cfg["noise_sigma"], (cfg["scale_lo"], cfg["scale_hi"]), cfg["mask_prob"]),
    )


def _out_dir(cfg: dict) -> str:
    out = cfg.get("out_dir") or os.environ.get(ENV_OUT_DIR) or "."
    os.makedirs(out, exist_ok=True)
    return out


def _write_manifest(cfg: dict, subcommand: str, out_dir: str) -> str:
    path = os.path.join(out_dir, f"{subcommand.replace('-', '_')}_manifest.cfg")
    with open(path, "w") as fh:
        fh.write(f"# effective configuration for `{subcommand}`\n")
        for key in sorted(_SCHEMA):
            value = cfg[key]
            fh.write(f"{key} = {'' if value is None else value}\n")
    return path


def _require(cfg: dict, key: str, why: str):
    if cfg.get(key) is None:
        raise UsageError(f"missing required key {key!r} ({why})")
    return cfg[key]


def _load_dataset(cfg):
    path = _require(cfg, "data", "path to a dataset CSV")
    if not os.path.exists(path):
        raise UsageError(f"dataset file not found: {path}")
    return load_csv_dataset(path)


def _training_data(cfg):
    """Build the weakly supervised view of the dataset for this run."""
    ds = _load_dataset(cfg)
    if cfg["loss"] == "pnu_punce" or cfg["pnu"] is not None:
        n_l = _require(cfg, "pnu", "number of labeled samples for the PNU split")
        return make_pnu(ds, n_l, cfg["seed"])
    n_labeled = _require(cfg, "n_labeled", "number of labeled positives")
    return make_pu(ds, n_labeled, cfg["seed"], pi_override=cfg["pi_override"])


def _cmd_gen_data(cfg, out_dir):
    ds = synth_gaussians(cfg["n"], cfg["d"], cfg["sep"], cfg["pi"], cfg["seed"])
    path = os.path.join(out_dir, "dataset.csv")
    write_csv_dataset(ds, path)
    print(f"wrote {path} ({ds.n} rows, dim {ds.dim})")
    return [path]


def _cmd_pretrain(cfg, out_dir):
    data = _training_data(cfg)
    tc = _train_config(cfg)
    enc, proj = default_architecture(data.dim)
    params = init_mlp(enc, proj, tc.seed)
    norm = NormPolicy()
    params, metrics = pretrain(tc, data, params, norm)
    ckpt = os.path.join(out_dir, "pretrain_checkpoint.bin")
    met = os.path.join(out_dir, "pretrain_metrics.csv")
    save_checkpoint(params, norm, ckpt)
    metrics.to_csv(met)
    losses = metrics.values("train", "loss")
    if losses:
        print(f"pretrain [{tc.loss}] epochs={tc.epochs} first-epoch loss {losses[0]:.6f} last {losses[-1]:.6f}")
    print(f"wrote {ckpt}\nwrote {met}")
    return [ckpt, met]


def _cmd_transfer(cfg, out_dir, kind):
    ckpt_in = _require(cfg, "checkpoint", "pretrained checkpoint path")
    if not os.path.exists(ckpt_in):
        raise UsageError(f"checkpoint not found: {ckpt_in}")
    params, norm = load_checkpoint(ckpt_in)
    data = _training_data(cfg)
    if not hasattr(data, "indicator"):
        raise UsageError(f"{kind} needs a PU split (set n_labeled)")
    tc = _train_config(cfg)
    fn = probe if kind == "probe" else finetune
    params, metrics = fn(tc, params, data, norm)
    ckpt = os.path.join(out_dir, f"{kind}_checkpoint.bin")
    met = os.path.join(out_dir, f"{kind}_metrics.csv")
    save_checkpoint(params, norm, ckpt)
    metrics.to_csv(met)
    risks = metrics.values("train", "risk")
    if risks:
        print(f"{kind} [{tc.risk}] epochs={tc.epochs} first risk {risks[0]:.6f} last {risks[-1]:.6f}")
    print(f"wrote {ckpt}\nwrote {met}")
    return [ckpt, met]


def _cmd_eval(cfg, out_dir):
    ckpt_in = _require(cfg, "checkpoint", "checkpoint path")
    if not os.path.exists(ckpt_in):
        raise UsageError(f"checkpoint not found: {ckpt_in}")
    params, norm = load_checkpoint(ckpt_in)
    test = _load_dataset(cfg)
    res = evaluate(params, test, norm)
    met = os.path.join(out_dir, "eval_metrics.csv")
    metrics = RunMetrics()
    metrics.append(0, "test", "accuracy", res.accuracy, cfg["seed"])
    metrics.append(0, "test", "recall_pos", res.recall_pos, cfg["seed"])
    metrics.append(0, "test", "recall_neg", res.recall_neg, cfg["seed"])
    metrics.to_csv(met)
    print(
        f"accuracy {res.accuracy:.4f} "
        f"(tp {res.true_pos} fp {res.false_pos} tn {res.true_neg} fn {res.false_neg})"
    )
    print(f"wrote {met}")
    return [met]


def _fmt_cell(mean, std):
    if std is None:
        return f"{100 * mean:.2f}"
    return f"{100 * mean:.2f}+-{100 * std:.2f}"


def _cmd_sweep(cfg, out_dir):
    losses = [v.strip() for v in cfg["losses"].split(",") if v.strip()]
    n_labeled_values = [int(v) for v in cfg["n_labeled_list"].split(",") if v.strip()]
    if not losses or not n_labeled_values:
        raise UsageError("sweep needs non-empty losses and n_labeled_list")
    tc = _train_config(cfg)
    result = sweep(
        tc,
        losses=losses,
        n_labeled_values=n_labeled_values,
        n_seeds=cfg["seeds"],
        data_n=cfg["n"],
        data_d=cfg["d"],
        data_sep=cfg["sep"],
        data_pi=cfg["pi"],
        test_n=cfg["test_n"],
        probe_epochs=cfg["probe_epochs"],
        probe_lr0=cfg["probe_lr0"],
        with_finetune=bool(cfg["with_finetune"]),
    )
    agg = result.aggregate("lp_accuracy")
    table_path = os.path.join(out_dir, "sweep_table.csv")
    with open(table_path, "w", newline="") as fh:
        fh.write("n_labeled," + ",".join(losses) + "\n")
        for n_labeled in n_labeled_values:
            row = [str(n_labeled)]
            for loss in losses:
                mean, std = agg[(n_labeled, loss)]
                row.append(_fmt_cell(mean, std))
            fh.write(",".join(row) + "\n")
    pairs_path = os.path.join(out_dir, "sweep_lpft.csv")
    with open(pairs_path, "w", newline="") as fh:
        fh.write("loss,n_labeled,seed,lp_accuracy,ft_accuracy\n")
        for c in result.cells:
            ft = "" if c.ft_accuracy is None else "%.17g" % c.ft_accuracy
            fh.write(f"{c.loss},{c.n_labeled},{c.seed},{'%.17g' % c.lp_accuracy},{ft}\n")
    print(f"wrote {table_path}\nwrote {pairs_path}")
    for n_labeled in n_labeled_values:
        cells = "  ".join(f"{loss}: {_fmt_cell(*agg[(n_labeled, loss)])}" for loss in losses)
        print(f"n_labeled={n_labeled:>6d}  {cells}")
    return [table_path, pairs_path]


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "pretrain": _cmd_pretrain,
    "probe": lambda cfg, out: _cmd_transfer(cfg, out, "probe"),
    "finetune": lambda cfg, out: _cmd_transfer(cfg, out, "finetune"),
    "eval": _cmd_eval,
    "sweep": _cmd_sweep,
}


def _build_parser():
    parser = argparse.ArgumentParser(prog="pucontrast", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        for key in sorted(_SCHEMA):
            p.add_argument("--" + key.replace("_", "-"), dest=key)
    return parser


def run(subcommand: str, cfg: dict):
    """Execute one subcommand; returns the list of written artifacts."""
    if subcommand not in _HANDLERS:
        raise UsageError(f"unknown subcommand {subcommand!r}")
    out_dir = _out_dir(cfg)
    manifest = _write_manifest(cfg, subcommand, out_dir)
    artifacts = _HANDLERS[subcommand](cfg, out_dir)
    return [manifest] + artifacts


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    flags = {k: v for k, v in vars(args).items() if k in _SCHEMA}
    try:
        cfg = parse_config(args.config, flags)
        run(args.subcommand, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
