"""Layer descriptors and their forward/backward kernels.

All math is float64. Each kernel returns (output, cache); the matching
backward consumes the cache and fills per-layer parameter gradients.
Parameters of a layer live in one contiguous slice of the flat parameter
vector: weights first, then biases.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError


@dataclass(frozen=True)
class Dense:
    out_dim: int


@dataclass(frozen=True)
class Relu:
    pass


@dataclass(frozen=True)
class Dropout:
    pass


@dataclass(frozen=True)
class Flatten:
    pass


@dataclass(frozen=True)
class Conv2d:
    filters: int
    kernel_size: int = 3


@dataclass(frozen=True)
class MaxPool2x2:
    pass


@dataclass(frozen=True)
class DropoutSpec:
    """Per-call dropout behaviour.

    keep_probability == 1.0 disables dropping. With equal mask_seed (and
    equal activation shapes) the generated masks are identical, which is how
    the training loop shares one dropping pattern across the mini-batches
    compared in a step.
    """

    keep_probability: float = 1.0
    mask_seed: int = 0
    shared_across_batches: bool = True

    def __post_init__(self) -> None:
        if not (0.0 < self.keep_probability <= 1.0):
            raise ConfigurationError(
                f"dropout keep_probability must be in (0, 1], got {self.keep_probability}"
            )


def infer_output_shape(layer, in_shape: tuple[int, ...]) -> tuple[int, ...]:
    """Shape of one example after `layer`, given the incoming example shape."""
    if isinstance(layer, Dense):
        if len(in_shape) != 1:
            raise ConfigurationError(
                f"dense layer needs flat input, got shape {in_shape}; add a flatten layer"
            )
        return (layer.out_dim,)
    if isinstance(layer, (Relu, Dropout)):
        return in_shape
    if isinstance(layer, Flatten):
        return (int(np.prod(in_shape)),)
    if isinstance(layer, Conv2d):
        h, w, c = _as_hwc(in_shape)
        k = layer.kernel_size
        if h < k or w < k:
            raise ConfigurationError(f"conv2d kernel {k} does not fit input {in_shape}")
        return (h - k + 1, w - k + 1, layer.filters)
    if isinstance(layer, MaxPool2x2):
        h, w, c = _as_hwc(in_shape)
        if h % 2 or w % 2:
            raise ConfigurationError(f"maxpool 2x2 needs even spatial dims, got {in_shape}")
        return (h // 2, w // 2, c)
    raise ConfigurationError(f"unknown layer kind: {layer!r}")


def param_count(layer, in_shape: tuple[int, ...]) -> int:
    if isinstance(layer, Dense):
        return in_shape[0] * layer.out_dim + layer.out_dim
    if isinstance(layer, Conv2d):
        _, _, c = _as_hwc(in_shape)
        k = layer.kernel_size
        return k * k * c * layer.filters + layer.filters
    return 0


def init_params(layer, in_shape: tuple[int, ...], rng: np.random.Generator) -> np.ndarray:
    """Zero-mean uniform weights scaled by 1/sqrt(fan_in); zero biases."""
    if isinstance(layer, Dense):
        fan_in = in_shape[0]
        w = rng.uniform(-1.0, 1.0, size=fan_in * layer.out_dim) / np.sqrt(fan_in)
        return np.concatenate([w, np.zeros(layer.out_dim)])
    if isinstance(layer, Conv2d):
        _, _, c = _as_hwc(in_shape)
        k = layer.kernel_size
        fan_in = k * k * c
        w = rng.uniform(-1.0, 1.0, size=fan_in * layer.filters) / np.sqrt(fan_in)
        return np.concatenate([w, np.zeros(layer.filters)])
    return np.zeros(0)


def _as_hwc(in_shape: tuple[int, ...]) -> tuple[int, int, int]:
    """Spatial layers accept (H, W) as single-channel (H, W, 1)."""
    if len(in_shape) == 2:
        return in_shape[0], in_shape[1], 1
    if len(in_shape) == 3:
        return in_shape
    raise ConfigurationError(f"spatial layer needs (H, W) or (H, W, C) input, got {in_shape}")


# ---------------------------------------------------------------------------
# forward / backward kernels


def forward_layer(layer, x, params, *, in_shape, layer_index, dropout: DropoutSpec | None):
    if isinstance(layer, Dense):
        n_in = in_shape[0]
        w = params[: n_in * layer.out_dim].reshape(n_in, layer.out_dim)
        b = params[n_in * layer.out_dim :]
        return x @ w + b, x
    if isinstance(layer, Relu):
        return np.maximum(x, 0.0), x
    if isinstance(layer, Dropout):
        if dropout is None or dropout.keep_probability == 1.0:
            return x, None
        rng = np.random.default_rng([dropout.mask_seed, layer_index])
        keep = dropout.keep_probability
        mask = (rng.random(x.shape) < keep) / keep
        return x * mask, mask
    if isinstance(layer, Flatten):
        return x.reshape(x.shape[0], -1), x.shape
    if isinstance(layer, Conv2d):
        return _conv_forward(layer, x, params, in_shape)
    if isinstance(layer, MaxPool2x2):
        return _maxpool_forward(x, in_shape)
    raise ConfigurationError(f"unknown layer kind: {layer!r}")


def backward_layer(layer, dy, params, cache, *, in_shape, grad_out):
    """Returns dx; writes this layer's parameter gradient into grad_out."""
    if isinstance(layer, Dense):
        x = cache
        n_in = in_shape[0]
        w = params[: n_in * layer.out_dim].reshape(n_in, layer.out_dim)
        grad_out[: n_in * layer.out_dim] = (x.T @ dy).ravel()
        grad_out[n_in * layer.out_dim :] = dy.sum(axis=0)
        return dy @ w.T
    if isinstance(layer, Relu):
        return dy * (cache > 0)
    if isinstance(layer, Dropout):
        return dy if cache is None else dy * cache
    if isinstance(layer, Flatten):
        return dy.reshape(cache)
    if isinstance(layer, Conv2d):
        return _conv_backward(layer, dy, params, cache, in_shape, grad_out)
    if isinstance(layer, MaxPool2x2):
        return _maxpool_backward(dy, cache, in_shape)
    raise ConfigurationError(f"unknown layer kind: {layer!r}")


def _conv_forward(layer: Conv2d, x, params, in_shape):
    h, w, c = _as_hwc(in_shape)
    n = x.shape[0]
    k = layer.kernel_size
    x3 = x.reshape(n, h, w, c)
    # (N, Ho, Wo, C, k, k) -> (N, Ho, Wo, k, k, C) to match the kernel layout
    cols = np.lib.stride_tricks.sliding_window_view(x3, (k, k), axis=(1, 2))
    cols = cols.transpose(0, 1, 2, 4, 5, 3).reshape(n, h - k + 1, w - k + 1, k * k * c)
    wmat = params[: k * k * c * layer.filters].reshape(k * k * c, layer.filters)
    b = params[k * k * c * layer.filters :]
    y = cols @ wmat + b
    return y, cols


def _conv_backward(layer: Conv2d, dy, params, cols, in_shape, grad_out):
    h, w, c = _as_hwc(in_shape)
    k = layer.kernel_size
    n, ho, wo, f = dy.shape
    kk = k * k * c
    wmat = params[: kk * f].reshape(kk, f)
    grad_out[: kk * f] = (cols.reshape(-1, kk).T @ dy.reshape(-1, f)).ravel()
    grad_out[kk * f :] = dy.sum(axis=(0, 1, 2))
    dcols = (dy @ wmat.T).reshape(n, ho, wo, k, k, c)
    dx = np.zeros((n, h, w, c))
    for i in range(k):
        for j in range(k):
            dx[:, i : i + ho, j : j + wo, :] += dcols[:, :, :, i, j, :]
    return dx.reshape((n,) + in_shape)


def _maxpool_forward(x, in_shape):
    h, w, c = _as_hwc(in_shape)
    n = x.shape[0]
    ho, wo = h // 2, w // 2
    win = (
        x.reshape(n, ho, 2, wo, 2, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, ho, wo, c, 4)
    )
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, idx


def _maxpool_backward(dy, idx, in_shape):
    h, w, c = _as_hwc(in_shape)
    n, ho, wo, _ = dy.shape
    dwin = np.zeros((n, ho, wo, c, 4))
    np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
    dx = dwin.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)
    return dx.reshape((n,) + in_shape)
