"""Network assembly, flat parameter/gradient views, loss and exact gradients.

The whole engine works on a single flat float64 parameter vector with a
per-layer segment index, so optimizers can treat gradients as plain vectors
and restrict inner products to individual layers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigurationError, DataError, InternalError, NumericError
from . import layers as L
from .layers import DropoutSpec


@dataclass(frozen=True)
class Segment:
    name: str
    offset: int
    length: int


@dataclass
class ParamVector:
    """Flat view of all trainable parameters plus the per-layer partition."""

    values: np.ndarray
    segments: list[Segment]

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise InternalError("parameter vector must be one-dimensional")
        offset = 0
        for seg in self.segments:
            if seg.offset != offset or seg.length <= 0:
                raise InternalError(
                    f"segments must tile the vector exactly; bad segment {seg}"
                )
            offset += seg.length
        if offset != self.values.size:
            raise InternalError(
                f"segments cover {offset} values but vector has {self.values.size}"
            )

    @property
    def dim(self) -> int:
        return self.values.size

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.segments)


@dataclass
class BoundLayer:
    kind: object
    in_shape: tuple[int, ...]
    out_shape: tuple[int, ...]
    segment: Segment | None


@dataclass
class Network:
    """An ordered stack of layers over one shared flat parameter vector."""

    input_shape: tuple[int, ...]
    bound: list[BoundLayer]
    params: ParamVector

    @property
    def class_count(self) -> int:
        out = self.bound[-1].out_shape
        if len(out) != 1:
            raise ConfigurationError(f"classifier must end in flat class scores, got {out}")
        return out[0]

    @property
    def layer_names(self) -> list[str]:
        return [seg.name for seg in self.params.segments]


def build_network(input_shape, layer_kinds, rng: np.random.Generator) -> Network:
    """Bind layer descriptors to shapes, allocate and initialize parameters."""
    input_shape = tuple(int(s) for s in input_shape)
    bound: list[BoundLayer] = []
    segments: list[Segment] = []
    chunks: list[np.ndarray] = []
    shape = input_shape
    offset = 0
    for i, kind in enumerate(layer_kinds):
        out_shape = L.infer_output_shape(kind, shape)
        n = L.param_count(kind, shape)
        seg = None
        if n:
            seg = Segment(f"{type(kind).__name__.lower()}{i}", offset, n)
            segments.append(seg)
            chunks.append(L.init_params(kind, shape, rng))
            offset += n
        bound.append(BoundLayer(kind, shape, out_shape, seg))
        shape = out_shape
    if not segments:
        raise ConfigurationError("network has no trainable parameters")
    values = np.concatenate(chunks)
    return Network(input_shape, bound, ParamVector(values, segments))


def forward(net: Network, batch_inputs, dropout: DropoutSpec | None = None):
    """Per-example class scores; deterministic given (params, inputs, mask_seed)."""
    scores, _ = _forward_with_caches(net, batch_inputs, dropout)
    return scores


def _forward_with_caches(net: Network, batch_inputs, dropout):
    x = np.asarray(batch_inputs, dtype=np.float64)
    if x.shape[1:] != net.input_shape:
        raise ConfigurationError(
            f"batch input shape {x.shape[1:]} does not match network input {net.input_shape}"
        )
    caches = []
    for i, bl in enumerate(net.bound):
        p = _layer_params(net, bl)
        x, cache = L.forward_layer(
            bl.kind, x, p, in_shape=bl.in_shape, layer_index=i, dropout=dropout
        )
        if not np.all(np.isfinite(x)):
            raise NumericError(f"non-finite activation after layer {i} ({type(bl.kind).__name__})")
        caches.append(cache)
    return x, caches


def _layer_params(net: Network, bl: BoundLayer):
    if bl.segment is None:
        return None
    return net.params.values[bl.segment.offset : bl.segment.offset + bl.segment.length]


def softmax_cross_entropy(scores, labels):
    """Mean softmax cross-entropy and its gradient with respect to the scores."""
    z = scores - scores.max(axis=1, keepdims=True)
    expz = np.exp(z)
    denom = expz.sum(axis=1, keepdims=True)
    logp = z - np.log(denom)
    n = scores.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = expz / denom
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return loss, grad


def _check_labels(labels, class_count: int):
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= class_count):
        raise DataError(
            f"labels must lie in [0, {class_count}), got range "
            f"[{labels.min()}, {labels.max()}]"
        )
    return labels.astype(np.int64)


def batch_loss(net: Network, inputs, labels, dropout: DropoutSpec | None = None) -> float:
    """Mean per-example cross-entropy of the batch under the current parameters."""
    labels = _check_labels(labels, net.class_count)
    scores = forward(net, inputs, dropout)
    loss, _ = softmax_cross_entropy(scores, labels)
    return float(loss)


def batch_gradient(net: Network, inputs, labels, dropout: DropoutSpec | None = None):
    """Exact reverse-mode gradient of batch_loss, flat with the params' segment index."""
    labels = _check_labels(labels, net.class_count)
    scores, caches = _forward_with_caches(net, inputs, dropout)
    _, dy = softmax_cross_entropy(scores, labels)
    grad = np.zeros(net.params.dim)
    for i in range(len(net.bound) - 1, -1, -1):
        bl = net.bound[i]
        grad_slice = None
        if bl.segment is not None:
            grad_slice = grad[bl.segment.offset : bl.segment.offset + bl.segment.length]
        dy = L.backward_layer(
            bl.kind,
            dy,
            _layer_params(net, bl),
            caches[i],
            in_shape=bl.in_shape,
            grad_out=grad_slice,
        )
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient")
    return grad


def segment_dot(g1, g2, segments: list[Segment] | None = None, layer: int | str | None = None) -> float:
    """Inner product of two flat gradients, optionally restricted to one layer."""
    g1 = np.asarray(g1)
    g2 = np.asarray(g2)
    if g1.shape != g2.shape:
        raise InternalError(f"gradient lengths differ: {g1.shape} vs {g2.shape}")
    if layer is None:
        return float(g1 @ g2)
    if segments is None:
        raise InternalError("layer-restricted dot needs the segment index")
    if segments[-1].offset + segments[-1].length != g1.size:
        raise InternalError("segment index does not match gradient length")
    seg = _find_segment(segments, layer)
    sl = slice(seg.offset, seg.offset + seg.length)
    return float(g1[sl] @ g2[sl])


def _find_segment(segments: list[Segment], layer: int | str) -> Segment:
    if isinstance(layer, int):
        if not 0 <= layer < len(segments):
            raise InternalError(f"no segment {layer}; network has {len(segments)}")
        return segments[layer]
    for seg in segments:
        if seg.name == layer:
            return seg
    raise InternalError(f"no segment named {layer!r}")
