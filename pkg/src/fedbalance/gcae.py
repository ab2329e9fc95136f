"""Generative convolutional autoencoder with a classifier head, in plain numpy.

Feature vectors are treated as single-channel 1-D signals.  The encoder is a
conv -> ReLU -> max-pool pyramid followed by a dense map to the latent space;
the decoder mirrors it with nearest-neighbour upsampling (cropped back to the
encoder's pre-pool lengths, so odd signal lengths round-trip exactly); a small
MLP on the latent produces class logits.  Training minimises
alpha * MSE(reconstruction) + beta * cross-entropy(logits) by plain SGD with
hand-written backpropagation — no autodiff framework anywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass(frozen=True)
class ConvStage:
    channels: int
    kernel: int
    pool: int

    def __post_init__(self):
        if self.channels < 1 or self.kernel < 1 or self.pool < 1:
            raise ValueError("conv stage dimensions must be >= 1")


@dataclass(frozen=True)
class ArchSpec:
    """Shape of the network plus the two loss weights; everything else
    (stage lengths, flat widths) is derived from these fields."""

    input_len: int
    num_classes: int
    stages: tuple[ConvStage, ...] = (ConvStage(8, 5, 2), ConvStage(16, 5, 2))
    latent_dim: int = 16
    mlp_hidden: tuple[int, ...] = (32,)
    input_channels: int = 1
    recon_weight: float = 1.0
    pred_weight: float = 1.0

    def __post_init__(self):
        if self.input_len < 1 or self.input_channels < 1:
            raise ValueError("input_len and input_channels must be >= 1")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        if not self.stages:
            raise ValueError("need at least one conv stage")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if any(h < 1 for h in self.mlp_hidden):
            raise ValueError("mlp hidden widths must be >= 1")
        if self.recon_weight < 0 or self.pred_weight < 0 or self.recon_weight + self.pred_weight <= 0:
            raise ValueError("loss weights must be non-negative with a positive sum")

    @property
    def stage_input_lengths(self) -> tuple[int, ...]:
        """Signal length entering each stage (also its post-conv length)."""
        lens, cur = [], self.input_len
        for st in self.stages:
            lens.append(cur)
            cur = -(-cur // st.pool)  # ceil-mode pooling
        return tuple(lens)

    @property
    def pooled_lengths(self) -> tuple[int, ...]:
        lens, cur = [], self.input_len
        for st in self.stages:
            cur = -(-cur // st.pool)
            lens.append(cur)
        return tuple(lens)

    @property
    def flat_dim(self) -> int:
        return self.stages[-1].channels * self.pooled_lengths[-1]

    @property
    def input_width(self) -> int:
        """Width of a flattened input row."""
        return self.input_channels * self.input_len


@dataclass
class ModelState:
    arch: ArchSpec
    params: dict[str, np.ndarray]

    @property
    def dtype(self) -> np.dtype:
        return next(iter(self.params.values())).dtype

    def copy(self) -> "ModelState":
        return ModelState(self.arch, {k: v.copy() for k, v in self.params.items()})


def _param_shapes(arch: ArchSpec) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    in_ch = arch.input_channels
    for i, st in enumerate(arch.stages):
        shapes[f"enc.conv{i}.w"] = (st.channels, in_ch, st.kernel)
        shapes[f"enc.conv{i}.b"] = (st.channels,)
        in_ch = st.channels
    shapes["enc.fc.w"] = (arch.flat_dim, arch.latent_dim)
    shapes["enc.fc.b"] = (arch.latent_dim,)
    shapes["dec.fc.w"] = (arch.latent_dim, arch.flat_dim)
    shapes["dec.fc.b"] = (arch.flat_dim,)
    n = len(arch.stages)
    for d, i in enumerate(reversed(range(n))):
        out_ch = arch.stages[i - 1].channels if i > 0 else arch.input_channels
        shapes[f"dec.conv{d}.w"] = (out_ch, arch.stages[i].channels, arch.stages[i].kernel)
        shapes[f"dec.conv{d}.b"] = (out_ch,)
    widths = (arch.latent_dim,) + tuple(arch.mlp_hidden) + (arch.num_classes,)
    for j in range(len(widths) - 1):
        shapes[f"mlp.fc{j}.w"] = (widths[j], widths[j + 1])
        shapes[f"mlp.fc{j}.b"] = (widths[j + 1],)
    return shapes


def init_model(arch: ArchSpec, rng, dtype=np.float32) -> ModelState:
    """Weights ~ U(+-sqrt(3 / fan_in)), biases zero, in a fixed draw order."""
    params: dict[str, np.ndarray] = {}
    for name, shape in _param_shapes(arch).items():
        if name.endswith(".b"):
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        fan_in = int(np.prod(shape[1:])) if ".conv" in name else shape[0]
        bound = np.sqrt(3.0 / fan_in)
        params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return ModelState(arch, params)


# --- layer primitives (forward returns a context for the matching backward) ---


def _conv1d_fwd(x, w, b):
    k = w.shape[2]
    pl = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (pl, k - 1 - pl)))
    xw = sliding_window_view(xp, k, axis=2)
    y = np.einsum("bclk,ock->bol", xw, w, optimize=True) + b[None, :, None]
    return y, (xw, w)


def _conv1d_bwd(dy, ctx):
    xw, w = ctx
    k = w.shape[2]
    pl = (k - 1) // 2
    dw = np.einsum("bclk,bol->ock", xw, dy, optimize=True)
    db = dy.sum(axis=(0, 2))
    dyp = np.pad(dy, ((0, 0), (0, 0), (k - 1 - pl, pl)))
    dyw = sliding_window_view(dyp, k, axis=2)
    dx = np.einsum("bolk,ock->bcl", dyw, w[:, :, ::-1], optimize=True)
    return dx, dw, db


def _maxpool_fwd(x, p):
    B, C, L = x.shape
    T = -(-L // p)
    xp = np.pad(x, ((0, 0), (0, 0), (0, T * p - L)), constant_values=-np.inf)
    xr = xp.reshape(B, C, T, p)
    am = xr.argmax(axis=3)
    y = np.take_along_axis(xr, am[..., None], axis=3)[..., 0]
    return y, (am, p, L)


def _maxpool_bwd(dy, ctx):
    am, p, L = ctx
    B, C, T = dy.shape
    dxp = np.zeros((B, C, T, p), dtype=dy.dtype)
    np.put_along_axis(dxp, am[..., None], dy[..., None], axis=3)
    return dxp.reshape(B, C, T * p)[:, :, :L]


def _upsample_fwd(x, p, out_len):
    y = np.repeat(x, p, axis=2)[:, :, :out_len]
    return y, (p, x.shape[2], out_len)


def _upsample_bwd(dy, ctx):
    p, l_in, out_len = ctx
    full = np.zeros((dy.shape[0], dy.shape[1], l_in * p), dtype=dy.dtype)
    full[:, :, :out_len] = dy
    return full.reshape(dy.shape[0], dy.shape[1], l_in, p).sum(axis=3)


def _dense_fwd(x, w, b):
    return x @ w + b, (x, w)


def _dense_bwd(dy, ctx):
    x, w = ctx
    return dy @ w.T, x.T @ dy, dy.sum(axis=0)


def _relu_fwd(x):
    return np.maximum(x, 0), x > 0


def _relu_bwd(dy, mask):
    return dy * mask


# --- model passes ---


def _encode_cached(params, arch, x):
    stage_cache = []
    h = x.reshape(len(x), arch.input_channels, arch.input_len)
    for i, st in enumerate(arch.stages):
        h, conv_ctx = _conv1d_fwd(h, params[f"enc.conv{i}.w"], params[f"enc.conv{i}.b"])
        h, relu_mask = _relu_fwd(h)
        h, pool_ctx = _maxpool_fwd(h, st.pool)
        stage_cache.append((conv_ctx, relu_mask, pool_ctx))
    flat = h.reshape(len(x), arch.flat_dim)
    latent, fc_ctx = _dense_fwd(flat, params["enc.fc.w"], params["enc.fc.b"])
    return latent, (stage_cache, fc_ctx, h.shape)


def _decode_cached(params, arch, z):
    pre, fc_ctx = _dense_fwd(z, params["dec.fc.w"], params["dec.fc.b"])
    act, relu_mask = _relu_fwd(pre)
    n = len(arch.stages)
    lengths = arch.stage_input_lengths
    h = act.reshape(len(z), arch.stages[-1].channels, arch.pooled_lengths[-1])
    stage_cache = []
    for d, i in enumerate(reversed(range(n))):
        h, up_ctx = _upsample_fwd(h, arch.stages[i].pool, lengths[i])
        h, conv_ctx = _conv1d_fwd(h, params[f"dec.conv{d}.w"], params[f"dec.conv{d}.b"])
        if i > 0:
            h, conv_relu = _relu_fwd(h)
        else:
            conv_relu = None
        stage_cache.append((up_ctx, conv_ctx, conv_relu))
    recon = h.reshape(len(z), arch.input_width)
    return recon, (fc_ctx, relu_mask, stage_cache)


def _mlp_cached(params, arch, z):
    n_layers = len(arch.mlp_hidden) + 1
    h = z
    cache = []
    for j in range(n_layers):
        h, ctx = _dense_fwd(h, params[f"mlp.fc{j}.w"], params[f"mlp.fc{j}.b"])
        if j < n_layers - 1:
            h, mask = _relu_fwd(h)
        else:
            mask = None
        cache.append((ctx, mask))
    return h, cache


def encode(model: ModelState, x: np.ndarray) -> np.ndarray:
    x = _check_input(model, x)
    latent, _ = _encode_cached(model.params, model.arch, x)
    return latent


def decode(model: ModelState, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=model.dtype)
    if z.ndim != 2 or z.shape[1] != model.arch.latent_dim:
        raise ValueError(f"latent must be (n, {model.arch.latent_dim})")
    recon, _ = _decode_cached(model.params, model.arch, z)
    return recon


def forward(model: ModelState, x: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(reconstruction, class scores, latent codes), no gradient bookkeeping."""
    x = _check_input(model, x)
    latent, _ = _encode_cached(model.params, model.arch, x)
    recon, _ = _decode_cached(model.params, model.arch, latent)
    scores, _ = _mlp_cached(model.params, model.arch, latent)
    return recon, scores, latent


def _check_input(model: ModelState, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=model.dtype)
    if x.ndim != 2 or x.shape[1] != model.arch.input_width:
        raise ValueError(f"input must be (n, {model.arch.input_width}), got {x.shape}")
    return x


def _weights(model: ModelState, alpha, beta) -> tuple[float, float]:
    if alpha is None:
        alpha = model.arch.recon_weight
    if beta is None:
        beta = model.arch.pred_weight
    return alpha, beta


def _mse(recon, target):
    diff = recon - target
    val = float(np.mean(diff * diff))
    grad = (2.0 / diff.size) * diff
    return val, grad


def _cross_entropy(scores, labels):
    z = scores - scores.max(axis=1, keepdims=True)
    lse = np.log(np.sum(np.exp(z), axis=1))
    val = float(np.mean(lse - z[np.arange(len(labels)), labels]))
    soft = np.exp(z - lse[:, None])
    soft[np.arange(len(labels)), labels] -= 1.0
    return val, soft / len(labels)


def loss(recon, x, scores, labels, alpha: float, beta: float):
    """alpha*MSE + beta*cross-entropy with gradients for both heads.

    Returns (value, d_recon, d_scores); the cross-entropy side is computed
    in float64 for stability regardless of the input dtype.
    """
    recon = np.asarray(recon)
    x = np.asarray(x)
    labels = np.asarray(labels, dtype=np.int64)
    mse, drecon = _mse(recon, x)
    ce, dscores = _cross_entropy(np.asarray(scores, dtype=np.float64), labels)
    return alpha * mse + beta * ce, alpha * drecon, beta * dscores


def evaluate_loss(model: ModelState, x, labels, alpha: float | None = None,
                  beta: float | None = None) -> tuple[float, float, float]:
    """(total, mse, cross_entropy) on one batch; weights default to the arch's."""
    alpha, beta = _weights(model, alpha, beta)
    x = _check_input(model, x)
    labels = _check_labels(model, labels, len(x))
    latent, _ = _encode_cached(model.params, model.arch, x)
    recon, _ = _decode_cached(model.params, model.arch, latent)
    scores, _ = _mlp_cached(model.params, model.arch, latent)
    mse, _ = _mse(recon, x)
    ce, _ = _cross_entropy(scores.astype(np.float64), labels)
    return alpha * mse + beta * ce, mse, ce


def _check_labels(model, labels, n):
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (n,):
        raise ValueError("labels must be 1-D and match the batch")
    if labels.min() < 0 or labels.max() >= model.arch.num_classes:
        raise ValueError("label out of range")
    return labels


def _compute_grads(model: ModelState, x, labels, alpha, beta, head_only=False):
    params, arch = model.params, model.arch
    latent, enc_cache = _encode_cached(params, arch, x)
    recon, dec_cache = _decode_cached(params, arch, latent)
    scores, mlp_cache = _mlp_cached(params, arch, latent)

    total, drecon, dscores = loss(recon, x, scores, labels, alpha, beta)
    dtype = model.dtype
    drecon = drecon.astype(dtype)
    dscores = dscores.astype(dtype)

    grads: dict[str, np.ndarray] = {}

    # classifier head
    dz_mlp = dscores
    n_layers = len(arch.mlp_hidden) + 1
    for j in reversed(range(n_layers)):
        ctx, mask = mlp_cache[j]
        if mask is not None:
            dz_mlp = _relu_bwd(dz_mlp, mask)
        dz_mlp, grads[f"mlp.fc{j}.w"], grads[f"mlp.fc{j}.b"] = _dense_bwd(dz_mlp, ctx)
    if head_only:
        return total, grads

    # decoder
    fc_ctx, relu_mask, stage_cache = dec_cache
    dh = drecon.reshape(len(x), arch.input_channels, arch.input_len)
    n = len(arch.stages)
    for d in reversed(range(n)):
        up_ctx, conv_ctx, conv_relu = stage_cache[d]
        if conv_relu is not None:
            dh = _relu_bwd(dh, conv_relu)
        dh, grads[f"dec.conv{d}.w"], grads[f"dec.conv{d}.b"] = _conv1d_bwd(dh, conv_ctx)
        dh = _upsample_bwd(dh, up_ctx)
    dflat = dh.reshape(len(x), arch.flat_dim)
    dflat = _relu_bwd(dflat, relu_mask)
    dz_dec, grads["dec.fc.w"], grads["dec.fc.b"] = _dense_bwd(dflat, fc_ctx)

    # encoder, fed by both latent consumers
    enc_stage_cache, enc_fc_ctx, pooled_shape = enc_cache
    dlatent = dz_dec + dz_mlp
    dflat_enc, grads["enc.fc.w"], grads["enc.fc.b"] = _dense_bwd(dlatent, enc_fc_ctx)
    dh = dflat_enc.reshape(pooled_shape)
    for i in reversed(range(n)):
        conv_ctx, relu_mask_i, pool_ctx = enc_stage_cache[i]
        dh = _maxpool_bwd(dh, pool_ctx)
        dh = _relu_bwd(dh, relu_mask_i)
        dh, grads[f"enc.conv{i}.w"], grads[f"enc.conv{i}.b"] = _conv1d_bwd(dh, conv_ctx)
    return total, grads


def train_step(model: ModelState, x, labels, lr: float, alpha: float | None = None,
               beta: float | None = None, head_only: bool = False) -> float:
    """One SGD step in place; returns the pre-update loss.

    Raises FloatingPointError if the loss is not finite — divergence must
    stop a run rather than silently poison downstream aggregation.
    """
    alpha, beta = _weights(model, alpha, beta)
    x = _check_input(model, x)
    labels = _check_labels(model, labels, len(x))
    total, grads = _compute_grads(model, x, labels, alpha, beta, head_only=head_only)
    if not np.isfinite(total):
        raise FloatingPointError(f"non-finite training loss {total!r}")
    for name, g in grads.items():
        model.params[name] -= (lr * g).astype(model.dtype)
    return total


def grad_check(model: ModelState, x, labels, eps: float = 1e-5,
               alpha: float | None = None, beta: float | None = None) -> float:
    """Max relative error between analytic gradients and central differences,
    over every parameter entry.  Meaningful only on a float64 model."""
    alpha, beta = _weights(model, alpha, beta)
    x = _check_input(model, x)
    labels = _check_labels(model, labels, len(x))
    _, grads = _compute_grads(model, x, labels, alpha, beta)
    worst = 0.0
    for name, g in grads.items():
        p = model.params[name]
        flat_p, flat_g = p.reshape(-1), np.asarray(g).reshape(-1)
        for idx in range(flat_p.size):
            orig = flat_p[idx]
            flat_p[idx] = orig + eps
            lp = evaluate_loss(model, x, labels, alpha, beta)[0]
            flat_p[idx] = orig - eps
            lm = evaluate_loss(model, x, labels, alpha, beta)[0]
            flat_p[idx] = orig
            numeric = (lp - lm) / (2.0 * eps)
            scale = max(abs(numeric), abs(flat_g[idx]), 1e-8)
            worst = max(worst, abs(numeric - flat_g[idx]) / scale)
    return worst
