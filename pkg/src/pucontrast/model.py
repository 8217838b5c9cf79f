"""MLP encoder + projection head + linear online head, with exact backprop.

Three forward modes mirror how the network is used across the pipeline:
`feat_ext` returns encoder features, `encode` pushes them through the
projector (optionally L2-normalizing rows) for the contrastive stage, and
`finetune` applies the scalar online head for classification. The
projector is only ever used during contrastive training; transfer runs on
encoder features.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .numerics import RngStream, STREAM_INIT, as_matrix

MODES = ("encode", "finetune", "feat_ext")

_MAGIC = b"PUCONTRAST-CKPT\n"
_FORMAT_VERSION = 1


@dataclass
class Layer:
    weight: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray  # (fan_out,)
    relu: bool


@dataclass
class ModelParams:
    encoder: list
    projector: list
    head_weight: np.ndarray  # (encoder_out,)
    head_bias: np.ndarray  # shape (1,)


@dataclass(frozen=True)
class NormPolicy:
    """Whether encode-mode output rows are scaled to unit L2 norm."""

    normalize: bool = True


@dataclass
class ForwardTape:
    """Intermediate activations cached by `forward` for the backward pass."""

    params_id: int
    mode: str
    x: np.ndarray
    encoder_pre: list
    encoder_act: list
    projector_pre: list
    projector_act: list
    norms: np.ndarray | None
    output: np.ndarray


def default_architecture(input_dim: int):
    """Desk-scale encoder/projector sizes used by the drivers."""
    return [input_dim, 64, 64, 32], [32, 16]


def init_mlp(encoder_sizes, projector_sizes, seed) -> ModelParams:
    """He-style initialization: weights ~ N(0, 2/fan_in), biases zero.

    `encoder_sizes` chains input through the encoder; `projector_sizes`,
    when non-empty, must start at the encoder output width. Hidden layers
    use ReLU; the final projector layer is linear.
    """
    encoder_sizes = [int(v) for v in encoder_sizes]
    projector_sizes = [int(v) for v in projector_sizes]
    if len(encoder_sizes) < 2:
        raise ValueError("encoder needs at least one layer (two sizes)")
    if any(v <= 0 for v in encoder_sizes + projector_sizes):
        raise ValueError("layer sizes must be positive")
    if projector_sizes and projector_sizes[0] != encoder_sizes[-1]:
        raise ValueError("projector input width must match encoder output")
    if len(projector_sizes) == 1:
        raise ValueError("projector sizes need at least two entries or none")

    gen = (seed if isinstance(seed, RngStream) else RngStream(int(seed), STREAM_INIT)).generator()

    def make_layers(sizes, last_linear):
        layers = []
        for i in range(len(sizes) - 1):
            fan_in, fan_out = sizes[i], sizes[i + 1]
            w = gen.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out))
            relu = not (last_linear and i == len(sizes) - 2)
            layers.append(Layer(w, np.zeros(fan_out), relu))
        return layers

    encoder = make_layers(encoder_sizes, last_linear=False)
    projector = make_layers(projector_sizes, last_linear=True) if projector_sizes else []
    enc_out = encoder_sizes[-1]
    head_w = gen.normal(0.0, np.sqrt(2.0 / enc_out), size=enc_out)
    return ModelParams(encoder, projector, head_w, np.zeros(1))


def param_arrays(params: ModelParams) -> list:
    """Live views of every parameter array, in checkpoint manifest order."""
    out = []
    for layer in params.encoder + params.projector:
        out.append(layer.weight)
        out.append(layer.bias)
    out.append(params.head_weight)
    out.append(params.head_bias)
    return out


def copy_params(params: ModelParams) -> ModelParams:
    enc = [Layer(l.weight.copy(), l.bias.copy(), l.relu) for l in params.encoder]
    proj = [Layer(l.weight.copy(), l.bias.copy(), l.relu) for l in params.projector]
    return ModelParams(enc, proj, params.head_weight.copy(), params.head_bias.copy())


def zeros_like_params(params: ModelParams) -> list:
    return [np.zeros_like(a) for a in param_arrays(params)]


def freeze_encoder(params: ModelParams) -> list:
    """Updatable-flags per parameter array: head trainable, rest frozen."""
    mask = [False] * (2 * (len(params.encoder) + len(params.projector)))
    return mask + [True, True]


def full_mask(params: ModelParams) -> list:
    return [True] * len(param_arrays(params))


def _run_layers(layers, a):
    pres, acts = [], []
    for layer in layers:
        pre = a @ layer.weight + layer.bias
        a = np.maximum(pre, 0.0) if layer.relu else pre
        pres.append(pre)
        acts.append(a)
    return pres, acts, a


def forward(params: ModelParams, x, mode: str, norm: NormPolicy = NormPolicy()):
    """Run the network in one of the three modes; returns (output, tape)."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    x = as_matrix(x, "x")
    if x.shape[1] != params.encoder[0].weight.shape[0]:
        raise ValueError(
            f"input width {x.shape[1]} does not match encoder input "
            f"{params.encoder[0].weight.shape[0]}"
        )
    enc_pre, enc_act, r = _run_layers(params.encoder, x)
    proj_pre, proj_act = [], []
    norms = None
    if mode == "feat_ext":
        out = r
    elif mode == "finetune":
        out = (r @ params.head_weight + params.head_bias)[:, None]
    else:
        proj_pre, proj_act, u = _run_layers(params.projector, r)
        out = u
        if norm.normalize:
            sq = np.sum(u * u, axis=1)
            if np.any(sq == 0.0):
                raise ValueError("cannot normalize a zero embedding row")
            norms = np.sqrt(sq)
            out = u / norms[:, None]
    tape = ForwardTape(id(params), mode, x, enc_pre, enc_act, proj_pre, proj_act, norms, out)
    return out, tape


def _backprop_layers(layers, pres, acts, x, upstream):
    """Backprop a layer stack; returns ([(dW, db) per layer], grad_input)."""
    local = [None] * len(layers)
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        if layer.relu:
            upstream = upstream * (pres[i] > 0.0)
        a_in = x if i == 0 else acts[i - 1]
        local[i] = (a_in.T @ upstream, np.sum(upstream, axis=0))
        upstream = upstream @ layer.weight.T
    return local, upstream


def _flatten_grads(pairs):
    out = []
    for dw, db in pairs:
        out.append(dw)
        out.append(db)
    return out


def _zero_layer_grads(layers):
    return [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in layers]


def backward(params: ModelParams, tape: ForwardTape, grad_output):
    """Exact parameter gradients for the forward pass recorded in `tape`.

    Returns (grads, grad_input) with grads listed in `param_arrays` order;
    parameters the mode never touched get zero gradients. Includes the
    row-normalization Jacobian when the forward pass normalized.
    """
    if tape.params_id != id(params):
        raise ValueError("tape does not belong to these parameters")
    g = np.asarray(grad_output, dtype=np.float64)
    if g.shape != tape.output.shape:
        raise ValueError(f"grad_output shape {g.shape} != output shape {tape.output.shape}")

    head_w_grad = np.zeros_like(params.head_weight)
    head_b_grad = np.zeros_like(params.head_bias)

    if tape.mode == "encode":
        if tape.norms is not None:
            z = tape.output
            g = (g - z * np.sum(g * z, axis=1, keepdims=True)) / tape.norms[:, None]
        proj_pairs, g = _backprop_layers(
            params.projector, tape.projector_pre, tape.projector_act, tape.encoder_act[-1], g
        )
    elif tape.mode == "finetune":
        dlogit = g[:, 0]
        r = tape.encoder_act[-1]
        head_w_grad = r.T @ dlogit
        head_b_grad = np.array([np.sum(dlogit)])
        g = dlogit[:, None] * params.head_weight[None, :]
        proj_pairs = _zero_layer_grads(params.projector)
    else:
        proj_pairs = _zero_layer_grads(params.projector)

    enc_pairs, g_in = _backprop_layers(params.encoder, tape.encoder_pre, tape.encoder_act, tape.x, g)
    grads = _flatten_grads(enc_pairs) + _flatten_grads(proj_pairs) + [head_w_grad, head_b_grad]
    return grads, g_in


def save_checkpoint(params: ModelParams, norm: NormPolicy, path) -> None:
    """Versioned binary checkpoint; round-trips byte-exactly."""
    manifest = {
        "format_version": _FORMAT_VERSION,
        "encoder": [[l.weight.shape[0], l.weight.shape[1], int(l.relu)] for l in params.encoder],
        "projector": [[l.weight.shape[0], l.weight.shape[1], int(l.relu)] for l in params.projector],
        "normalize": int(norm.normalize),
    }
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in param_arrays(params))
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("ascii"))
        fh.write(b"\n")
        fh.write(blob)


def load_checkpoint(path):
    """Inverse of `save_checkpoint`; returns (params, norm_policy)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        header = fh.readline()
        manifest = json.loads(header.decode("ascii"))
        if manifest.get("format_version") != _FORMAT_VERSION:
            raise ValueError(f"{path}: unsupported format version {manifest.get('format_version')}")
        blob = fh.read()
    vals = np.frombuffer(blob, dtype="<f8")

    offset = 0

    def take(shape):
        nonlocal offset
        size = int(np.prod(shape))
        arr = vals[offset : offset + size].reshape(shape).astype(np.float64)
        offset += size
        return arr

    encoder = [Layer(take((fi, fo)), take((fo,)), bool(relu)) for fi, fo, relu in manifest["encoder"]]
    projector = [Layer(take((fi, fo)), take((fo,)), bool(relu)) for fi, fo, relu in manifest["projector"]]
    enc_out = manifest["encoder"][-1][1]
    head_w = take((enc_out,))
    head_b = take((1,))
    if offset != vals.size:
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    return ModelParams(encoder, projector, head_w, head_b), NormPolicy(bool(manifest["normalize"]))
