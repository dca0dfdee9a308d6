"""The three architectures: initialization, forward traces, backprop.

Architectures (all parameters initialized i.i.d. standard normal, all
layers plus the output vector trained):

* fully-connected (``fc``): ``x_h = sqrt(c_sigma/m) * act(W_h x_{h-1})``,
  prediction ``u = a . x_H``.
* residual (``resnet``): first layer as above, then
  ``x_h = x_{h-1} + (c_res/(H sqrt(m))) * act(W_h x_{h-1})``; the skip
  connection sits at every layer.
* convolutional-residual (``convresnet``): feature maps are
  ``channels x pixels`` matrices, each matrix product goes through the
  stride-1 zero-padded patch operator (:func:`patchify`), residual
  scaling as for ``resnet``, prediction ``u = <a, x_H>`` (Frobenius
  inner product).

``forward`` records every layer activation and the diagonal of the
activation derivative at the pre-activations; ``backward`` is the exact
analytic gradient of the squared loss assembled from those traces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .activations import Activation, compute_c_sigma, softplus
from .numlin import Rng, check_finite

__all__ = [
    "NetworkConfig",
    "Params",
    "Gradients",
    "ForwardTrace",
    "Dataset",
    "init_params",
    "patchify",
    "unpatchify",
    "forward",
    "forward_all",
    "backward",
    "loss_value",
    "predictions",
    "grad_check",
    "GradCheckReport",
    "ARCHITECTURES",
]

ARCHITECTURES = ("fc", "resnet", "convresnet")


@dataclass(frozen=True)
class NetworkConfig:
    """Architecture hyper-parameters and scalings."""

    arch: str
    depth: int
    width: int
    input_dim: int = 0  # fc / resnet
    channels: int = 0  # convresnet
    pixels: int = 0  # convresnet
    filter_size: int = 0  # convresnet, odd
    c_res: float = 0.5
    activation: Activation = field(default_factory=softplus)
    c_sigma: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.depth < 1 or self.width < 1:
            raise ValueError("depth and width must be >= 1")
        if self.arch in ("resnet", "convresnet") and self.depth < 2:
            raise ValueError("residual architectures need depth >= 2")
        if self.arch == "convresnet":
            if self.channels < 1 or self.pixels < 1:
                raise ValueError("convresnet needs channels >= 1 and pixels >= 1")
            if self.filter_size < 1 or self.filter_size % 2 == 0:
                raise ValueError("filter size must be odd and >= 1")
            if self.filter_size > 2 * self.pixels - 1:
                raise ValueError("filter size exceeds 2*pixels - 1")
        elif self.input_dim < 1:
            raise ValueError("fc/resnet need input_dim >= 1")
        if not 0.0 < self.c_res < 1.0:
            raise ValueError("c_res must lie in (0, 1)")
        if self.c_sigma is None:
            object.__setattr__(self, "c_sigma", compute_c_sigma(self.activation))

    @property
    def is_conv(self) -> bool:
        return self.arch == "convresnet"

    def layer_scale(self, h: int) -> float:
        """Coefficient multiplying ``act(W_h . )`` at layer ``h``."""
        m = self.width
        if h == 1 or self.arch == "fc":
            return float(np.sqrt(self.c_sigma / m))
        return self.c_res / (self.depth * np.sqrt(m))


@dataclass
class Params:
    """Weight matrices ``W_1..W_H`` plus the output vector/matrix ``a``."""

    weights: list[np.ndarray]
    a: np.ndarray

    def copy(self) -> "Params":
        return Params([w.copy() for w in self.weights], self.a.copy())

    def flatten(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights] + [self.a.ravel()])


@dataclass
class Gradients:
    """Same layout as :class:`Params`."""

    weights: list[np.ndarray]
    a: np.ndarray

    def flatten(self) -> np.ndarray:
        return np.concatenate([w.ravel() for w in self.weights] + [self.a.ravel()])


@dataclass
class ForwardTrace:
    """Everything the backward pass and Gram assembly need.

    ``activations[h]`` is ``x_h`` (``activations[0]`` is the input) and
    ``derivs[h - 1]`` holds the activation-derivative diagonal of layer
    ``h`` as a plain array.  For fc/resnet a whole batch is traced at
    once: arrays have a trailing sample axis.  For convresnet each trace
    covers a single sample.
    """

    activations: list[np.ndarray]
    derivs: list[np.ndarray]
    u: np.ndarray | float


@dataclass
class Dataset:
    """Unit-norm inputs with bounded labels, pairwise non-parallel.

    ``allow_parallel=True`` skips the non-parallelism check; degenerate
    datasets are useful as negative controls (they make the population
    kernel singular).
    """

    inputs: np.ndarray  # (n, d) or (n, channels, pixels)
    labels: np.ndarray  # (n,)
    allow_parallel: bool = False

    def __post_init__(self):
        self.inputs = check_finite(self.inputs, "inputs")
        self.labels = check_finite(self.labels, "labels")
        n = self.inputs.shape[0]
        if self.labels.shape != (n,):
            raise ValueError("labels must be one scalar per input")
        flat = self.inputs.reshape(n, -1)
        norms = np.linalg.norm(flat, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError("inputs must have unit norm (within 1e-12)")
        if np.any(np.abs(self.labels) > 1.0 + 1e-12):
            raise ValueError("labels must lie in [-1, 1]")
        if not self.allow_parallel:
            gram = flat @ flat.T
            off = gram - np.diag(np.diag(gram))
            if np.any(np.abs(off) > 1.0 - 1e-6):
                raise ValueError("dataset contains (near-)parallel input pairs")

    @property
    def size(self) -> int:
        return self.inputs.shape[0]


def init_params(config: NetworkConfig, rng: Rng | None = None) -> Params:
    """Standard normal initialization, one rng stream per layer."""
    if rng is None:
        rng = Rng(config.seed, 0)
    m, H = config.width, config.depth
    weights = []
    for h in range(1, H + 1):
        layer_rng = rng.split(h)
        if config.is_conv:
            in_cols = config.filter_size * (config.channels if h == 1 else m)
        else:
            in_cols = config.input_dim if h == 1 else m
        weights.append(layer_rng.normal((m, in_cols)))
    a_rng = rng.split(H + 1)
    a_shape = (m, config.pixels) if config.is_conv else (m,)
    return Params(weights=weights, a=a_rng.normal(a_shape))


def patchify(x: np.ndarray, q: int) -> np.ndarray:
    """Stride-1 zero-padded patch operator.

    Column ``l`` of the output stacks the ``q`` columns of ``x`` centered
    at ``l`` (out-of-range columns are zero), so a ``channels x p`` map
    becomes ``(q * channels) x p``.  Every input entry appears at least
    once and at most ``q`` times, hence
    ``||x||_F <= ||patchify(x, q)||_F <= sqrt(q) ||x||_F``.
    """
    if q < 1 or q % 2 == 0:
        raise ValueError("patch size must be odd and >= 1")
    x = np.asarray(x, dtype=np.float64)
    channels, p = x.shape
    if q > 2 * p - 1:
        raise ValueError(f"patch size {q} exceeds 2*pixels - 1 = {2 * p - 1}")
    half = (q - 1) // 2
    padded = np.zeros((channels, p + 2 * half))
    padded[:, half : half + p] = x
    out = np.empty((q * channels, p))
    for s in range(q):
        out[s * channels : (s + 1) * channels, :] = padded[:, s : s + p]
    return out


def unpatchify(y: np.ndarray, q: int, channels: int) -> np.ndarray:
    """Adjoint of :func:`patchify`: scatter-add stacked windows back."""
    y = np.asarray(y, dtype=np.float64)
    p = y.shape[1]
    half = (q - 1) // 2
    padded = np.zeros((channels, p + 2 * half))
    for s in range(q):
        padded[:, s : s + p] += y[s * channels : (s + 1) * channels, :]
    return padded[:, half : half + p]


def _check_input_shape(config: NetworkConfig, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if config.is_conv:
        if x.shape != (config.channels, config.pixels):
            raise ValueError(
                f"expected input shape {(config.channels, config.pixels)}, got {x.shape}"
            )
    else:
        if x.shape[0] != config.input_dim or x.ndim > 2:
            raise ValueError(
                f"expected input dim {config.input_dim} (vector or batch), got {x.shape}"
            )
    return x


def forward(params: Params, config: NetworkConfig, x: np.ndarray) -> ForwardTrace:
    """Evaluate the network, keeping all layer activations and derivative
    diagonals.

    For fc/resnet, ``x`` may be a single vector ``(d,)`` or a batch
    ``(d, n)`` with one sample per column; the trace then carries the
    whole batch.  For convresnet, ``x`` is a single ``channels x pixels``
    map.
    """
    x = _check_input_shape(config, x)
    act = config.activation
    activations = [x]
    derivs = []
    cur = x
    for h in range(1, config.depth + 1):
        w = params.weights[h - 1]
        if config.is_conv:
            pre = w @ patchify(cur, config.filter_size)
        else:
            pre = w @ cur
        scale = config.layer_scale(h)
        branch = scale * act.value(pre)
        derivs.append(act.derivative(pre))
        if config.arch == "fc" or h == 1:
            cur = branch
        else:
            cur = cur + branch
        activations.append(cur)
    if config.is_conv:
        u = float(np.sum(params.a * cur))
    else:
        u = params.a @ cur  # scalar for a vector input, (n,) for a batch
    return ForwardTrace(activations=activations, derivs=derivs, u=u)


def forward_all(
    params: Params, config: NetworkConfig, dataset: Dataset
) -> list[ForwardTrace] | ForwardTrace:
    """Trace every sample: one batched trace (fc/resnet) or a list (conv)."""
    if config.is_conv:
        return [forward(params, config, xi) for xi in dataset.inputs]
    return forward(params, config, dataset.inputs.T)


def predictions(params: Params, config: NetworkConfig, dataset: Dataset) -> np.ndarray:
    traces = forward_all(params, config, dataset)
    if config.is_conv:
        return np.array([t.u for t in traces])
    return np.atleast_1d(traces.u)


def loss_value(params: Params, config: NetworkConfig, dataset: Dataset) -> float:
    """Squared loss ``1/2 sum_i (u_i - y_i)^2``."""
    r = predictions(params, config, dataset) - dataset.labels
    return 0.5 * float(r @ r)


def backward(
    params: Params,
    config: NetworkConfig,
    trace: ForwardTrace | Sequence[ForwardTrace],
    residual: np.ndarray,
) -> Gradients:
    """Gradient of the squared loss given forward traces and residuals
    ``u_i - y_i``.

    Accepts the output of :func:`forward_all`: a batched trace for
    fc/resnet or a list of single-sample traces for convresnet.  The
    batch gradient accumulates sample by sample with no intermediate
    weight updates (full-batch descent).
    """
    residual = np.atleast_1d(np.asarray(residual, dtype=np.float64))
    if config.is_conv:
        return _backward_conv(params, config, trace, residual)
    return _backward_dense(params, config, trace, residual)


def _backward_dense(
    params: Params, config: NetworkConfig, trace: ForwardTrace, residual: np.ndarray
) -> Gradients:
    H = config.depth
    xs, js = trace.activations, trace.derivs
    batched = xs[0].ndim == 2
    x_h = lambda h: xs[h] if batched else xs[h][:, None]
    j_h = lambda h: js[h - 1] if batched else js[h - 1][:, None]
    # upstream = d(loss)/d(x_h), starting at the output layer
    upstream = np.outer(params.a, residual)
    grad_a = x_h(H) @ residual
    grads = [None] * H
    for h in range(H, 0, -1):
        dz = config.layer_scale(h) * j_h(h) * upstream
        grads[h - 1] = dz @ x_h(h - 1).T
        if h > 1:
            back = params.weights[h - 1].T @ dz
            upstream = back if config.arch == "fc" else upstream + back
    if not batched:
        grad_a = grad_a.ravel() if grad_a.ndim else grad_a
    return Gradients(weights=grads, a=grad_a)


def _backward_conv(
    params: Params,
    config: NetworkConfig,
    traces: Sequence[ForwardTrace],
    residual: np.ndarray,
) -> Gradients:
    H, q, m = config.depth, config.filter_size, config.width
    grads = [np.zeros_like(w) for w in params.weights]
    grad_a = np.zeros_like(params.a)
    for trace, r in zip(traces, residual):
        xs, js = trace.activations, trace.derivs
        grad_a += r * xs[H]
        upstream = r * params.a
        for h in range(H, 0, -1):
            dz = config.layer_scale(h) * js[h - 1] * upstream
            grads[h - 1] += dz @ patchify(xs[h - 1], q).T
            if h > 1:
                channels = m  # every hidden feature map has m channels
                back = unpatchify(params.weights[h - 1].T @ dz, q, channels)
                upstream = upstream + back
    return Gradients(weights=grads, a=grad_a)


@dataclass
class GradCheckReport:
    max_relative_error: float
    worst_parameter: str
    gradient_scale: float


def grad_check(
    params: Params, config: NetworkConfig, dataset: Dataset, eps: float = 1e-5
) -> GradCheckReport:
    """Central-finite-difference check of :func:`backward` on every
    parameter entry.  Only sensible for small configurations.

    Errors are measured relative to the largest gradient magnitude in
    the whole parameter set (floored at 1e-8) so that near-zero entries
    do not blow up the ratio.
    """
    traces = forward_all(params, config, dataset)
    resid = predictions(params, config, dataset) - dataset.labels
    analytic = backward(params, config, traces, resid)

    arrays = list(params.weights) + [params.a]
    names = [f"W{h}" for h in range(1, config.depth + 1)] + ["a"]
    grads = list(analytic.weights) + [analytic.a]
    scale = max(max(np.max(np.abs(g)) for g in grads), 1e-8)
    worst, worst_name = 0.0, ""
    for arr, grad, name in zip(arrays, grads, names):
        flat = arr.ravel()
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            up = loss_value(params, config, dataset)
            flat[idx] = orig - eps
            down = loss_value(params, config, dataset)
            flat[idx] = orig
            fd = (up - down) / (2.0 * eps)
            err = abs(fd - grad.ravel()[idx]) / scale
            if err > worst:
                worst, worst_name = err, f"{name}[{idx}]"
    return GradCheckReport(
        max_relative_error=worst, worst_parameter=worst_name, gradient_scale=scale
    )
