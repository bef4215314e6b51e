"""From-scratch bidirectional LSTM regressor with exact backprop.

The model stacks bidirectional LSTM layers (default per-direction
widths 200, 64, 32, 32) over a standardized input stream and maps the
last layer's concatenated hidden states through a single linear output
neuron, one prediction per 250 ms segment. Cells are standard
tanh-LSTMs: sigmoid input/forget/output gates, tanh candidate, state
update c = f*c' + i*g, output h = o*tanh(c). No dropout, no batch
norm; training runs in double precision end to end.

Gradients come from analytic backpropagation through time, not from
numeric or automatic differentiation. The batch loss is 1 - CCC over
all concatenated conversations, so per-conversation gradients are
slices of one concatenated gradient. Updates use bias-corrected Adam.

Per layer and direction the parameters are packed gate-major as
W (4H x D_in), U (4H x H), b (4H,), gate order input/forget/output/
candidate. Weights initialize uniformly in +-1/sqrt(fan_in); forget
biases start at 1, everything else at 0.

Models serialize to a small binary format (magic ``DMDL1``): a JSON
header describing the architecture, then the embedded normalization
statistics and all parameter blocks as little-endian float64 in
documented order. Setting DIMEMO_PRECISION=f32 makes *inference* run
in single precision; training numerics are unaffected.
"""

from __future__ import annotations

import json
import os
import struct
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import metrics
from .dsp import FeatureStream, NormStats, normalize_array
from .errors import (
    DimensionMismatchError,
    ModelFormatError,
    TrainingDivergedError,
    ValidationError,
)

__all__ = [
    "ModelConfig",
    "LstmDirection",
    "BiLstmLayer",
    "RegressorModel",
    "AdamState",
    "init_model",
    "forward",
    "backward",
    "init_adam",
    "adam_step",
    "parameter_count",
    "save_model",
    "load_model",
    "count_steps",
]

_MAGIC = b"DMDL1"
_VERSION = 1

_step_counter = None


@contextmanager
def count_steps():
    """Instrumentation hook: counts segment steps fed through forward."""

    class _Counter:
        steps = 0

    global _step_counter
    previous = _step_counter
    counter = _Counter()
    _step_counter = counter
    try:
        yield counter
    finally:
        _step_counter = previous


@dataclass(frozen=True)
class ModelConfig:
    """Architecture: input dim, per-direction layer widths, init seed.

    With ``units_are_total`` each width counts both directions together
    and is halved per direction (must be even).
    """

    input_dim: int
    widths: tuple[int, ...] = (200, 64, 32, 32)
    seed: int = 0
    units_are_total: bool = False

    def __post_init__(self):
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        if self.input_dim < 1:
            raise ValidationError(f"input_dim must be positive, got {self.input_dim}")
        if not self.widths:
            raise ValidationError("need at least one layer width")
        for w in self.widths:
            if self.units_are_total and (w < 2 or w % 2):
                raise ValidationError(
                    f"total width {w} cannot be split across two directions"
                )
            if not self.units_are_total and w < 1:
                raise ValidationError(f"layer width must be positive, got {w}")

    def per_direction_widths(self) -> tuple[int, ...]:
        if self.units_are_total:
            return tuple(w // 2 for w in self.widths)
        return self.widths


@dataclass
class LstmDirection:
    """One direction's packed parameters: W (4H,D), U (4H,H), b (4H,)."""

    w: np.ndarray
    u: np.ndarray
    b: np.ndarray


@dataclass
class BiLstmLayer:
    fwd: LstmDirection
    bwd: LstmDirection

    @property
    def width(self) -> int:
        return self.fwd.u.shape[1]


@dataclass
class RegressorModel:
    config: ModelConfig
    layers: list[BiLstmLayer]
    out_w: np.ndarray
    out_b: np.ndarray
    norm: NormStats

    kind = "single"

    def named_parameters(self):
        for i, layer in enumerate(self.layers):
            for tag, d in (("fwd", layer.fwd), ("bwd", layer.bwd)):
                yield f"layer{i}.{tag}.w", d.w
                yield f"layer{i}.{tag}.u", d.u
                yield f"layer{i}.{tag}.b", d.b
        yield "out.w", self.out_w
        yield "out.b", self.out_b

    def header_dict(self) -> dict:
        return {
            "kind": self.kind,
            "input_dim": self.config.input_dim,
            "widths": list(self.config.widths),
            "seed": self.config.seed,
            "units_are_total": self.config.units_are_total,
        }

    def block_arrays(self) -> list[np.ndarray]:
        blocks = [self.norm.mean, self.norm.std]
        blocks += [arr for _, arr in self.named_parameters()]
        return blocks


def _init_direction(rng: np.random.Generator, d_in: int, width: int) -> LstmDirection:
    sw = 1.0 / np.sqrt(d_in)
    su = 1.0 / np.sqrt(width)
    w = rng.uniform(-sw, sw, (4 * width, d_in))
    u = rng.uniform(-su, su, (4 * width, width))
    b = np.zeros(4 * width)
    b[width: 2 * width] = 1.0  # forget gates start open
    return LstmDirection(w, u, b)


def make_layers(
    rng: np.random.Generator, input_dim: int, widths: tuple[int, ...]
) -> list[BiLstmLayer]:
    layers = []
    d_in = input_dim
    for width in widths:
        layers.append(BiLstmLayer(
            _init_direction(rng, d_in, width),
            _init_direction(rng, d_in, width),
        ))
        d_in = 2 * width
    return layers


def init_model(config: ModelConfig) -> RegressorModel:
    """Deterministic initialization from ``config.seed``."""
    rng = np.random.default_rng(config.seed)
    widths = config.per_direction_widths()
    layers = make_layers(rng, config.input_dim, widths)
    last = 2 * widths[-1]
    sh = 1.0 / np.sqrt(last)
    out_w = rng.uniform(-sh, sh, last)
    out_b = np.zeros(1)
    return RegressorModel(
        config=config,
        layers=layers,
        out_w=out_w,
        out_b=out_b,
        norm=NormStats.identity(config.input_dim),
    )


def parameter_count(model) -> int:
    return int(sum(arr.size for _, arr in model.named_parameters()))


# ---------------------------------------------------------------------------
# forward / backward

def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -60.0, 60.0)))


def _dir_forward(d: LstmDirection, x: np.ndarray, need_cache: bool):
    steps = x.shape[0]
    width = d.u.shape[1]
    dtype = x.dtype
    # project every step's input up front; only the recurrence loops
    pre = x @ d.w.T.astype(dtype, copy=False) + d.b.astype(dtype, copy=False)
    u_t = np.ascontiguousarray(d.u.T.astype(dtype, copy=False))
    hs = np.empty((steps, width), dtype=dtype)
    if need_cache:
        gi = np.empty((steps, width))
        gf = np.empty((steps, width))
        go = np.empty((steps, width))
        gg = np.empty((steps, width))
        h_prev = np.empty((steps, width))
        c_prev = np.empty((steps, width))
        tc_all = np.empty((steps, width))
    h = np.zeros(width, dtype=dtype)
    c = np.zeros(width, dtype=dtype)
    for t in range(steps):
        a = pre[t] + h @ u_t
        sig = _sigmoid(a[: 3 * width])
        i = sig[:width]
        f = sig[width: 2 * width]
        o = sig[2 * width:]
        g = np.tanh(a[3 * width:])
        if need_cache:
            h_prev[t] = h
            c_prev[t] = c
        c = f * c + i * g
        tc = np.tanh(c)
        h = o * tc
        hs[t] = h
        if need_cache:
            gi[t] = i
            gf[t] = f
            go[t] = o
            gg[t] = g
            tc_all[t] = tc
    cache = (x, h_prev, c_prev, gi, gf, go, gg, tc_all) if need_cache else None
    return hs, cache


def _dir_backward(d: LstmDirection, cache, dh_seq: np.ndarray):
    x, h_prev, c_prev, gi, gf, go, gg, tc_all = cache
    steps, width = dh_seq.shape
    da = np.empty((steps, 4 * width))
    dh_carry = np.zeros(width)
    dc_carry = np.zeros(width)
    for t in range(steps - 1, -1, -1):
        dh = dh_seq[t] + dh_carry
        tc = tc_all[t]
        o = go[t]
        do = dh * tc
        dc = dh * o * (1.0 - tc * tc) + dc_carry
        i = gi[t]
        f = gf[t]
        g = gg[t]
        da[t, :width] = (dc * g) * i * (1.0 - i)
        da[t, width: 2 * width] = (dc * c_prev[t]) * f * (1.0 - f)
        da[t, 2 * width: 3 * width] = do * o * (1.0 - o)
        da[t, 3 * width:] = (dc * i) * (1.0 - g * g)
        dc_carry = dc * f
        dh_carry = da[t] @ d.u
    grad_w = da.T @ x
    grad_u = da.T @ h_prev
    grad_b = da.sum(axis=0)
    dx = da @ d.w
    return dx, grad_w, grad_u, grad_b


def _layer_forward(layer: BiLstmLayer, x: np.ndarray, need_cache: bool):
    hf, cache_f = _dir_forward(layer.fwd, x, need_cache)
    hb_rev, cache_b = _dir_forward(layer.bwd, np.ascontiguousarray(x[::-1]), need_cache)
    y = np.concatenate([hf, hb_rev[::-1]], axis=1)
    return y, (cache_f, cache_b)


def _layer_backward(layer: BiLstmLayer, cache, dy: np.ndarray):
    width = layer.width
    cache_f, cache_b = cache
    dx_f, gw_f, gu_f, gb_f = _dir_backward(layer.fwd, cache_f, dy[:, :width])
    dx_b_rev, gw_b, gu_b, gb_b = _dir_backward(
        layer.bwd, cache_b, np.ascontiguousarray(dy[:, width:][::-1])
    )
    dx = dx_f + dx_b_rev[::-1]
    grads = {
        "fwd.w": gw_f, "fwd.u": gu_f, "fwd.b": gb_f,
        "bwd.w": gw_b, "bwd.u": gu_b, "bwd.b": gb_b,
    }
    return dx, grads


def run_layers(layers, x: np.ndarray, need_cache: bool):
    caches = []
    for layer in layers:
        x, cache = _layer_forward(layer, x, need_cache)
        caches.append(cache)
    return x, caches


def _as_input(model_dim: int, stream) -> np.ndarray:
    x = stream.segments if isinstance(stream, FeatureStream) else np.asarray(stream, dtype=np.float64)
    if x.ndim != 2:
        raise ValidationError(f"stream must be 2-d, got shape {x.shape}")
    if x.shape[0] == 0:
        raise ValidationError("stream is empty")
    if x.shape[1] != model_dim:
        raise DimensionMismatchError(
            f"stream dim {x.shape[1]} does not match model input dim {model_dim}"
        )
    return x


def inference_dtype():
    mode = os.environ.get("DIMEMO_PRECISION", "f64")
    if mode == "f64":
        return np.float64
    if mode == "f32":
        return np.float32
    raise ValidationError(f"DIMEMO_PRECISION must be 'f64' or 'f32', got {mode!r}")


def _forward_cached(model: RegressorModel, x: np.ndarray):
    z = normalize_array(x, model.norm)
    if _step_counter is not None:
        _step_counter.steps += z.shape[0]
    last, caches = run_layers(model.layers, z, need_cache=True)
    pred = last @ model.out_w + model.out_b[0]
    return pred, caches, last


def forward(model: RegressorModel, stream) -> np.ndarray:
    """Predictions for one conversation stream, one value per segment.

    Inference honours DIMEMO_PRECISION; results are returned as float64
    either way.
    """
    x = _as_input(model.config.input_dim, stream)
    dtype = inference_dtype()
    z = normalize_array(x, model.norm).astype(dtype, copy=False)
    if _step_counter is not None:
        _step_counter.steps += z.shape[0]
    last, _ = run_layers(model.layers, z, need_cache=False)
    pred = last @ model.out_w.astype(dtype, copy=False) + dtype(model.out_b[0])
    return pred.astype(np.float64, copy=False)


def _model_backward(model: RegressorModel, caches, last, dpred: np.ndarray) -> dict:
    grads = {
        "out.w": last.T @ dpred,
        "out.b": np.array([dpred.sum()]),
    }
    dz = np.outer(dpred, model.out_w)
    for i in range(len(model.layers) - 1, -1, -1):
        dz, layer_grads = _layer_backward(model.layers[i], caches[i], dz)
        for key, val in layer_grads.items():
            grads[f"layer{i}.{key}"] = val
    return grads


def backward(model: RegressorModel, batch, refs) -> tuple[dict, float]:
    """Batch gradients of the concatenated CCC loss, plus the loss.

    ``batch`` is a list of streams, ``refs`` the matching reference
    arrays. Conversations are concatenated (in batch order) before the
    loss is taken; gradients flow back through each conversation
    separately and are summed into one dict keyed like
    ``named_parameters``.
    """
    if len(batch) == 0 or len(batch) != len(refs):
        raise ValidationError(
            f"batch and refs must be equal-length and non-empty, got {len(batch)}/{len(refs)}"
        )
    preds = []
    caches = []
    lasts = []
    lengths = []
    inputs = []
    for stream, ref in zip(batch, refs):
        x = _as_input(model.config.input_dim, stream)
        r = np.asarray(ref, dtype=np.float64)
        if r.ndim != 1 or r.size != x.shape[0]:
            raise ValidationError(
                f"reference length {r.size} does not match stream length {x.shape[0]}"
            )
        inputs.append(x)
        p, cache, last = _forward_cached(model, x)
        preds.append(p)
        caches.append(cache)
        lasts.append(last)
        lengths.append(x.shape[0])
    pred_cat = np.concatenate(preds)
    ref_cat = np.concatenate([np.asarray(r, dtype=np.float64) for r in refs])
    if not np.all(np.isfinite(pred_cat)):
        raise TrainingDivergedError("model produced non-finite predictions")
    loss, dpred_cat = metrics.ccc_loss_grad(pred_cat, ref_cat)
    grads: dict[str, np.ndarray] = {}
    offset = 0
    for cache, last, n in zip(caches, lasts, lengths):
        dpred = dpred_cat[offset: offset + n]
        offset += n
        conv_grads = _model_backward(model, cache, last, dpred)
        for key, val in conv_grads.items():
            if key in grads:
                grads[key] += val
            else:
                grads[key] = val
    return grads, loss


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def init_adam(model, lr: float = 0.001) -> AdamState:
    if lr <= 0:
        raise ValidationError(f"learning rate must be positive, got {lr}")
    state = AdamState(lr=lr)
    for name, arr in model.named_parameters():
        state.m[name] = np.zeros_like(arr)
        state.v[name] = np.zeros_like(arr)
    return state


def adam_step(model, grads: dict, state: AdamState):
    """One bias-corrected Adam update, applied in place. Returns both."""
    state.step += 1
    b1 = state.beta1
    b2 = state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, param in model.named_parameters():
        if name not in grads:
            raise ValidationError(f"gradient missing for parameter {name}")
        g = grads[name]
        if g.shape != param.shape:
            raise ValidationError(
                f"gradient shape {g.shape} does not match parameter {name} {param.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError(f"non-finite gradient for parameter {name}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        param -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return model, state


# ---------------------------------------------------------------------------
# model files

def _pack_model(header: dict, blocks: list[np.ndarray]) -> bytes:
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    out = [_MAGIC, struct.pack("<II", _VERSION, len(header_bytes)), header_bytes]
    for arr in blocks:
        out.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(out)


def save_model(model, path) -> None:
    with open(path, "wb") as fh:
        fh.write(_pack_model(model.header_dict(), model.block_arrays()))


def _take_block(blob: bytes, offset: int, shape: tuple, path: str, name: str):
    size = int(np.prod(shape)) * 8
    if offset + size > len(blob):
        raise ModelFormatError(f"{path}: truncated while reading block {name!r}")
    arr = np.frombuffer(blob, dtype="<f8", count=int(np.prod(shape)), offset=offset)
    return arr.reshape(shape).astype(np.float64), offset + size


def read_layer_blocks(blob, offset, d_in, widths, path, prefix):
    layers = []
    for i, width in enumerate(widths):
        dirs = []
        for tag in ("fwd", "bwd"):
            w, offset = _take_block(blob, offset, (4 * width, d_in), path, f"{prefix}layer{i}.{tag}.w")
            u, offset = _take_block(blob, offset, (4 * width, width), path, f"{prefix}layer{i}.{tag}.u")
            b, offset = _take_block(blob, offset, (4 * width,), path, f"{prefix}layer{i}.{tag}.b")
            dirs.append(LstmDirection(w, u, b.ravel()))
        layers.append(BiLstmLayer(dirs[0], dirs[1]))
        d_in = 2 * width
    return layers, offset


def _header_int(header: dict, key: str, path: str) -> int:
    try:
        value = int(header[key])
    except (KeyError, TypeError, ValueError):
        raise ModelFormatError(f"{path}: header field {key!r} missing or invalid") from None
    if value < 1:
        raise ModelFormatError(f"{path}: header field {key!r} must be positive, got {value}")
    return value


def _assemble_single(header: dict, blob: bytes, offset: int, path: str) -> RegressorModel:
    input_dim = _header_int(header, "input_dim", path)
    widths = header.get("widths")
    if not isinstance(widths, list) or not widths:
        raise ModelFormatError(f"{path}: header field 'widths' missing or invalid")
    config = ModelConfig(
        input_dim=input_dim,
        widths=tuple(int(w) for w in widths),
        seed=int(header.get("seed", 0)),
        units_are_total=bool(header.get("units_are_total", False)),
    )
    per_dir = config.per_direction_widths()
    mean, offset = _take_block(blob, offset, (input_dim,), path, "norm.mean")
    std, offset = _take_block(blob, offset, (input_dim,), path, "norm.std")
    layers, offset = read_layer_blocks(blob, offset, input_dim, per_dir, path, "")
    last = 2 * per_dir[-1]
    out_w, offset = _take_block(blob, offset, (last,), path, "out.w")
    out_b, offset = _take_block(blob, offset, (1,), path, "out.b")
    if offset != len(blob):
        raise ModelFormatError(f"{path}: {len(blob) - offset} unexpected trailing bytes")
    return RegressorModel(
        config=config,
        layers=layers,
        out_w=out_w.ravel(),
        out_b=out_b.ravel(),
        norm=NormStats(mean.ravel(), std.ravel()),
    )


def load_model(path):
    """Load any saved model; the header's ``kind`` picks the layout."""
    path = str(path)
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(_MAGIC)] != _MAGIC:
        raise ModelFormatError(f"{path}: not a model file (bad magic)")
    offset = len(_MAGIC)
    try:
        version, header_len = struct.unpack_from("<II", blob, offset)
    except struct.error:
        raise ModelFormatError(f"{path}: truncated header") from None
    offset += 8
    if version != _VERSION:
        raise ModelFormatError(f"{path}: unsupported version {version}")
    try:
        header = json.loads(blob[offset: offset + header_len].decode("utf-8"))
    except (ValueError, UnicodeDecodeError):
        raise ModelFormatError(f"{path}: corrupt JSON header") from None
    offset += header_len
    kind = header.get("kind")
    if kind == "single":
        return _assemble_single(header, blob, offset, path)
    if kind in ("early", "late"):
        from .fusion import assemble_fused

        return assemble_fused(header, blob, offset, path)
    raise ModelFormatError(f"{path}: unknown model kind {kind!r}")


def snapshot_parameters(model) -> dict:
    return {name: arr.copy() for name, arr in model.named_parameters()}


def restore_parameters(model, snapshot: dict) -> None:
    for name, arr in model.named_parameters():
        arr[...] = snapshot[name]


def clone_config_with_seed(config: ModelConfig, seed: int) -> ModelConfig:
    return replace(config, seed=seed)
