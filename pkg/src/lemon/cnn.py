"""Bottleneck-block expansion for convolutional networks.

A bottleneck is three conv+BN stages on a residual branch: a 1x1 conv
squeezing the outer channel count down to the inner width, a 3x3 conv at
the inner width, and a 1x1 conv expanding back.  Growing the inner width
replicates the first stage's output channels circularly (BatchNorm
statistics are per channel, so replicated channels normalize
identically) and splits the in-channel weights of the later stages so
each group of replicated channels sums back to the original kernel,
with distinct entries per replica to break symmetry.  The block output
is unchanged.

BatchNorm is inference-mode throughout: fixed running statistics, no
batch reductions.  Convolutions are direct (im2col + the package
matmul), stride 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ShapeError
from .expand_ops import _check_extents

MIN_SEPARATION = 1e-6


@dataclass
class ConvWeights:
    weight: np.ndarray  # (c_out, c_in, kh, kw)
    bias: np.ndarray    # (c_out,)
    padding: int = 0

    def copy(self) -> "ConvWeights":
        return ConvWeights(self.weight.copy(), self.bias.copy(), self.padding)


@dataclass
class BatchNormParams:
    gamma: np.ndarray
    beta: np.ndarray
    mean: np.ndarray
    var: np.ndarray
    eps: float = 1e-5

    def copy(self) -> "BatchNormParams":
        return BatchNormParams(self.gamma.copy(), self.beta.copy(),
                               self.mean.copy(), self.var.copy(), self.eps)


@dataclass
class BottleneckWeights:
    """conv1/bn1 -> relu -> conv2/bn2 -> relu -> conv3/bn3, plus identity
    shortcut; inner channels are conv1's outputs."""

    conv1: ConvWeights
    bn1: BatchNormParams
    conv2: ConvWeights
    bn2: BatchNormParams
    conv3: ConvWeights
    bn3: BatchNormParams

    def copy(self) -> "BottleneckWeights":
        return BottleneckWeights(self.conv1.copy(), self.bn1.copy(),
                                 self.conv2.copy(), self.bn2.copy(),
                                 self.conv3.copy(), self.bn3.copy())


def conv2d(x: np.ndarray, conv: ConvWeights) -> np.ndarray:
    """Direct stride-1 cross-correlation of (c_in, h, w) with the kernel."""
    w, b, pad = conv.weight, conv.bias, conv.padding
    if x.ndim != 3 or x.shape[0] != w.shape[1]:
        raise ShapeError(f"conv input shape {x.shape} does not match weight {w.shape}")
    c_out, c_in, kh, kw = w.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    h_out = x.shape[1] - kh + 1
    w_out = x.shape[2] - kw + 1
    if h_out <= 0 or w_out <= 0:
        raise ShapeError("kernel larger than padded input")
    cols = np.empty((c_in * kh * kw, h_out * w_out), dtype=x.dtype)
    idx = 0
    for c in range(c_in):
        for dy in range(kh):
            for dx in range(kw):
                cols[idx] = x[c, dy:dy + h_out, dx:dx + w_out].reshape(-1)
                idx += 1
    flat = kernels.matmul(w.reshape(c_out, -1), cols)
    return flat.reshape(c_out, h_out, w_out) + b[:, None, None]


def batchnorm_infer(x: np.ndarray, bn: BatchNormParams) -> np.ndarray:
    """Per-channel normalization with fixed running statistics."""
    if x.shape[0] != bn.mean.shape[0]:
        raise ShapeError("batchnorm channel count mismatch")
    scale = bn.gamma / np.sqrt(bn.var + bn.eps)
    return (x - bn.mean[:, None, None]) * scale[:, None, None] + bn.beta[:, None, None]


def _relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def bottleneck_forward(x: np.ndarray, w: BottleneckWeights) -> np.ndarray:
    """Residual bottleneck with identity shortcut and final ReLU."""
    r = _relu(batchnorm_infer(conv2d(x, w.conv1), w.bn1))
    r = _relu(batchnorm_infer(conv2d(r, w.conv2), w.bn2))
    r = batchnorm_infer(conv2d(r, w.conv3), w.bn3)
    if r.shape != x.shape:
        raise ShapeError(f"branch output {r.shape} does not match shortcut {x.shape}")
    return _relu(r + x)


def _circ(a: np.ndarray, n: int, axis: int = 0) -> np.ndarray:
    idx = np.arange(n) % a.shape[axis]
    return np.take(a, idx, axis=axis)


def _bn_circ(bn: BatchNormParams, n: int) -> BatchNormParams:
    return BatchNormParams(_circ(bn.gamma, n), _circ(bn.beta, n),
                           _circ(bn.mean, n), _circ(bn.var, n), bn.eps)


def _split_in_channels(w: np.ndarray, d_t: int, rng: np.random.Generator,
                       noise_scale: float) -> np.ndarray:
    """Expand in-channels so replicated-channel kernels sum to the source.

    Replicas get pairwise-distinct entries (equal share plus zero-sum
    noise); a channel with a single copy keeps the exact source kernel.
    """
    c_out, d_s, kh, kw = w.shape
    k, r = _check_extents(d_s, d_t)
    out = np.empty((c_out, d_t, kh, kw), dtype=w.dtype)
    for z in range(d_s):
        copies = [z + i * d_s for i in range(k + (1 if z < r else 0))]
        if len(copies) == 1:
            out[:, z] = w[:, z]
            continue
        shape = (c_out, kh, kw)
        for _ in range(64):
            noise = [rng.normal(0.0, noise_scale, size=shape) for _ in copies[:-1]]
            noise.append(-sum(noise))
            sep = min(np.abs(a - b).min() for i, a in enumerate(noise)
                      for b in noise[i + 1:])
            if sep > MIN_SEPARATION * noise_scale:
                break
        parts = [w[:, z] / len(copies) + n for n in noise[:-1]]
        parts.append(w[:, z] - sum(parts))
        for j, tgt in enumerate(copies):
            out[:, tgt] = parts[j]
    return out


def expand_cnn_bottleneck(w: BottleneckWeights, d_t: int,
                          rng: np.random.Generator,
                          noise_scale: float = 0.02) -> BottleneckWeights:
    """Grow the inner channel count to ``d_t`` without changing the block
    output.

    Stage 1 replicates output channels (weights, bias, BN stats)
    circularly; stage 2 splits its in-channels and replicates its
    out-channels with the same circular pattern (the in-channel split is
    drawn once per source channel and tiled, so replicated outputs stay
    bitwise identical); stage 3 splits its in-channels and keeps its
    outputs untouched.
    """
    d_s = w.conv1.weight.shape[0]
    _check_extents(d_s, d_t)
    out = w.copy()

    out.conv1.weight = _circ(w.conv1.weight, d_t)
    out.conv1.bias = _circ(w.conv1.bias, d_t)
    out.bn1 = _bn_circ(w.bn1, d_t)

    mid = _split_in_channels(w.conv2.weight, d_t, rng, noise_scale)
    out.conv2.weight = _circ(mid, d_t, axis=0)
    out.conv2.bias = _circ(w.conv2.bias, d_t)
    out.bn2 = _bn_circ(w.bn2, d_t)

    out.conv3.weight = _split_in_channels(w.conv3.weight, d_t, rng, noise_scale)
    return out


def random_bottleneck(outer: int, inner: int, kernel: int,
                      rng: np.random.Generator, eps: float = 1e-5,
                      dtype=np.float64) -> BottleneckWeights:
    """Random inference-mode bottleneck (test fixtures)."""
    def conv(c_out, c_in, k, pad):
        return ConvWeights((rng.standard_normal((c_out, c_in, k, k)) * 0.3).astype(dtype),
                           (rng.standard_normal(c_out) * 0.1).astype(dtype), pad)

    def bn(c):
        return BatchNormParams((1.0 + 0.2 * rng.standard_normal(c)).astype(dtype),
                               (0.1 * rng.standard_normal(c)).astype(dtype),
                               (0.1 * rng.standard_normal(c)).astype(dtype),
                               (1.0 + 0.5 * rng.random(c)).astype(dtype), eps)

    return BottleneckWeights(conv(inner, outer, 1, 0), bn(inner),
                             conv(inner, inner, kernel, (kernel - 1) // 2), bn(inner),
                             conv(outer, inner, 1, 0), bn(outer))
