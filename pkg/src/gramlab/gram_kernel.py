"""Finite-width Gram matrices and their infinite-width population kernels.

Finite width: ``G_h[i, j] = <du_i/dW_h, du_j/dW_h>``, the Gram matrix of
per-example prediction gradients with respect to layer ``h``.  The
layer-H matrix has a closed factored form assembled directly from
forward traces; ``gram_full`` sums all layers (plus the output-vector
term) by brute force on small configurations.

Infinite width: a layer-wise recursion of 1-D/2-D Gaussian expectations
of the activation and its derivative.  Every multi-dimensional
expectation in the convolutional case factors entry-wise through its
2x2 marginal covariance, so the quadrature engine never integrates
above dimension 2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .activations import Activation, compute_c_sigma
from .gauss_expect import Cov2, QuadRule, default_quad, expect1, expect2
from .nets import (
    Dataset,
    ForwardTrace,
    NetworkConfig,
    Params,
    backward,
    patchify,
)
from .numlin import fro_distance, operator_norm, symmetrize

__all__ = [
    "KernelState",
    "gram_layer",
    "gram_layer_H",
    "gram_output",
    "gram_full",
    "gram_full_cap_ok",
    "kernel_fc",
    "kernel_general",
    "gram_drift",
]

# gram_full materializes n flattened per-example gradients of roughly
# m^2 H entries each; refuse beyond this many total entries.
_FULL_GRAM_CAP = 2**28


def _marginal_cov(a11: float, a12: float, a22: float, where: str) -> Cov2:
    """2x2 marginal covariance with PSD repair.

    Eigenvalue violations within -1e-12 (relative) are clipped back to
    the PSD cone (quadrature rounding accumulates over layers); anything
    larger is a hard error naming the offending entry.
    """
    scale = max(1.0, abs(a11), abs(a22))
    if a11 < 0.0 or a22 < 0.0:
        if min(a11, a22) < -1e-12 * scale:
            raise ValueError(f"non-PSD marginal covariance at {where}: "
                             f"({a11}, {a12}, {a22})")
        a11, a22 = max(a11, 0.0), max(a22, 0.0)
    bound = np.sqrt(a11 * a22)
    if abs(a12) > bound:
        if a12 * a12 - a11 * a22 > 1e-12 * scale * scale:
            raise ValueError(f"non-PSD marginal covariance at {where}: "
                             f"({a11}, {a12}, {a22})")
        a12 = np.sign(a12) * bound
    return Cov2(a11, a12, a22)


@dataclass
class KernelState:
    """Per-layer population kernels and bias vectors.

    ``layers[h]`` is the layer-``h`` feature kernel: shape ``(n, n)``
    for scalar features (fc / resnet), ``(n, n, p, p)`` for the
    convolutional architecture (``layers[0]`` holds the patch Gram of
    the inputs).  ``biases`` is ``None`` for fc, otherwise the running
    mean-feature vectors: shape ``(n,)`` scalar or ``(n, p)``.
    ``final`` is the ``(n, n)`` derivative-weighted output kernel, the
    population limit of the finite-width layer-H Gram matrix.
    """

    arch: str
    layers: list[np.ndarray]
    biases: Optional[np.ndarray]
    final: np.ndarray


# ---------------------------------------------------------------------------
# finite-width Gram matrices
# ---------------------------------------------------------------------------


def _dense_columns(trace: ForwardTrace, h: int, n: int) -> np.ndarray:
    """Layer-h activations as an (m-or-d, n) column stack."""
    x = trace.activations[h]
    return x if x.ndim == 2 else x[:, None]


def gram_layer(
    traces, params: Params, config: NetworkConfig, h: int
) -> np.ndarray:
    """Layer-``h`` Gram matrix ``<du_i/dW_h, du_j/dW_h>``.

    Uses the rank-one structure of per-example weight gradients:
    ``du/dW_h = s_h (J_h g_h) x_{h-1}^T`` with ``g_h`` the backprop
    vector of the prediction, so each Gram entry factors into two inner
    products.  Dense (fc / resnet) architectures support any ``h``;
    convresnet supports ``h = H`` (the layer the theory singles out).
    """
    H = config.depth
    if not 1 <= h <= H:
        raise ValueError(f"layer index {h} outside 1..{H}")
    if config.is_conv:
        if h != H:
            raise ValueError("convresnet gram_layer only implemented for h = H")
        return _gram_layer_H_conv(traces, params, config)
    trace = traces
    n = np.atleast_1d(trace.u).shape[0]
    upstream = np.repeat(params.a[:, None], n, axis=1)
    for k in range(H, h, -1):
        dz = config.layer_scale(k) * trace.derivs[k - 1] * upstream
        back = params.weights[k - 1].T @ dz
        upstream = back if config.arch == "fc" else upstream + back
    v = config.layer_scale(h) * trace.derivs[h - 1] * upstream
    x = _dense_columns(trace, h - 1, n)
    return symmetrize((x.T @ x) * (v.T @ v))


def _gram_layer_H_conv(
    traces: Sequence[ForwardTrace], params: Params, config: NetworkConfig
) -> np.ndarray:
    H, q = config.depth, config.filter_size
    scale = config.layer_scale(H)
    n = len(traces)
    phis = [patchify(t.activations[H - 1], q) for t in traces]
    # b_i[r, l] = a[r, l] * act'(pre-activation of layer H at channel r, pixel l)
    bs = [params.a * t.derivs[H - 1] for t in traces]
    g = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            patch_inner = phis[i].T @ phis[j]  # (p, p)
            coeff = bs[i].T @ bs[j]  # (p, p)
            g[i, j] = g[j, i] = scale * scale * float(np.sum(patch_inner * coeff))
    return symmetrize(g)


def gram_layer_H(traces, params: Params, config: NetworkConfig) -> np.ndarray:
    """The layer the convergence theory tracks: ``gram_layer`` at ``h = H``."""
    return gram_layer(traces, params, config, config.depth)


def gram_output(traces, config: NetworkConfig) -> np.ndarray:
    """Gram matrix of ``du/da``: plain inner products of last-layer features."""
    H = config.depth
    if config.is_conv:
        n = len(traces)
        feats = [t.activations[H] for t in traces]
        g = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                g[i, j] = g[j, i] = float(np.sum(feats[i] * feats[j]))
        return symmetrize(g)
    x = traces.activations[H]
    x = x if x.ndim == 2 else x[:, None]
    return symmetrize(x.T @ x)


def gram_full_cap_ok(config: NetworkConfig, n: int) -> bool:
    return config.width**2 * config.depth * n <= _FULL_GRAM_CAP


def gram_full(traces, params: Params, config: NetworkConfig) -> np.ndarray:
    """Full Gram matrix over all parameters (all layers plus ``a``).

    Small-configuration diagnostic: materializes each example's entire
    flattened prediction gradient.
    """
    if config.is_conv:
        n = len(traces)
    else:
        n = np.atleast_1d(traces.u).shape[0]
    if not gram_full_cap_ok(config, n):
        raise ValueError(
            "configuration too large for gram_full; use gram_layer_H instead"
        )
    flat = []
    for i in range(n):
        basis = np.zeros(n)
        basis[i] = 1.0
        flat.append(backward(params, config, traces, basis).flatten())
    stacked = np.stack(flat)
    return symmetrize(stacked @ stacked.T)


def gram_drift(g_k: np.ndarray, g_0: np.ndarray) -> tuple[float, float]:
    """Frobenius and operator norms of ``G(k) - G(0)``."""
    if g_k.shape != g_0.shape:
        raise ValueError(f"shape mismatch: {g_k.shape} vs {g_0.shape}")
    diff = np.asarray(g_k, dtype=np.float64) - np.asarray(g_0, dtype=np.float64)
    if not np.any(diff):
        return 0.0, 0.0
    return fro_distance(g_k, g_0), operator_norm(diff)


# ---------------------------------------------------------------------------
# population kernels
# ---------------------------------------------------------------------------


def _pair_expect_matrix(act_f, act_g, kernel: np.ndarray, layer: str,
                        quad: QuadRule) -> np.ndarray:
    """Entry-wise ``E[f(u) g(v)]`` over the 2x2 marginals of a scalar kernel."""
    n = kernel.shape[0]
    out = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            cov = _marginal_cov(kernel[i, i], kernel[i, j], kernel[j, j],
                                f"(i={i}, j={j}, {layer})")
            out[i, j] = out[j, i] = expect2(act_f, act_g, cov, quad)
    return out


def kernel_fc(
    dataset: Dataset,
    depth: int,
    activation: Activation,
    quad: QuadRule | None = None,
) -> KernelState:
    """Population kernel recursion for the fully-connected network.

    ``K_0[i, j] = <x_i, x_j>``; each hidden layer applies
    ``K_h[i, j] = c_sigma E[act(u) act(v)]`` with ``(u, v)`` centered
    Gaussian with covariance read off ``K_{h-1}``; the final layer
    weights ``K_{H-1}`` by the matching derivative expectation:
    ``K_H[i, j] = c_sigma K_{H-1}[i, j] E[act'(u) act'(v)]``.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    quad = quad if quad is not None else default_quad()
    c_sigma = compute_c_sigma(activation, quad)
    flat = dataset.inputs.reshape(dataset.size, -1)
    layers = [flat @ flat.T]
    for h in range(1, depth):
        layers.append(
            c_sigma
            * _pair_expect_matrix(
                activation.value, activation.value, layers[-1], f"h={h}", quad
            )
        )
    deriv = _pair_expect_matrix(
        activation.derivative, activation.derivative, layers[-1], f"h={depth}", quad
    )
    final = symmetrize(c_sigma * layers[-1] * deriv)
    return KernelState(arch="fc", layers=layers, biases=None, final=final)


def _kernel_resnet(
    dataset: Dataset, config: NetworkConfig, quad: QuadRule
) -> KernelState:
    act = config.activation
    c_sigma = config.c_sigma
    ratio = config.c_res / config.depth
    n = dataset.size
    flat = dataset.inputs.reshape(n, -1)
    layers = [flat @ flat.T]
    # first layer: same normalized rule as fc
    layers.append(
        c_sigma * _pair_expect_matrix(act.value, act.value, layers[0], "h=1", quad)
    )
    biases = np.array(
        [np.sqrt(c_sigma) * expect1(act.value, layers[0][i, i], quad)
         for i in range(n)]
    )
    for h in range(2, config.depth):
        prev = layers[-1]
        mean_act = np.array(
            [expect1(act.value, prev[i, i], quad) for i in range(n)]
        )
        pair = _pair_expect_matrix(act.value, act.value, prev, f"h={h}", quad)
        cur = (
            prev
            + ratio * (np.outer(mean_act, biases) + np.outer(biases, mean_act))
            + ratio * ratio * pair
        )
        layers.append(symmetrize(cur))
        biases = biases + ratio * mean_act
    prev = layers[-1]
    deriv = _pair_expect_matrix(
        act.derivative, act.derivative, prev, f"h={config.depth}", quad
    )
    final = symmetrize(ratio * ratio * prev * deriv)
    return KernelState(arch="resnet", layers=layers, biases=biases, final=final)


def _patch_trace(feat: np.ndarray, q: int) -> np.ndarray:
    """Pre-activation covariance from a per-pixel feature kernel.

    Entry ``(l, r)`` sums ``feat[l + s - half, r + s - half]`` over the
    filter offsets ``s`` whose (zero-padded) positions are in range on
    both sides — the patched analogue of an inner product.
    """
    p = feat.shape[0]
    half = (q - 1) // 2
    out = np.zeros((p, p))
    for s in range(q):
        off = s - half
        lo, hi = max(0, -off), min(p, p - off)
        if lo < hi:
            out[lo:hi, lo:hi] += feat[lo + off : hi + off, lo + off : hi + off][
                : hi - lo, : hi - lo
            ]
    return out


def _kernel_conv(
    dataset: Dataset, config: NetworkConfig, quad: QuadRule
) -> KernelState:
    act = config.activation
    c_sigma = config.c_sigma
    ratio = config.c_res / config.depth
    q, p = config.filter_size, config.pixels
    n = dataset.size

    def pair_block(cov_ii, cov_ij, cov_jj, f, g, layer):
        block = np.empty((p, p))
        for l in range(p):
            for r in range(p):
                cov = _marginal_cov(cov_ii[l, l], cov_ij[l, r], cov_jj[r, r],
                                    f"{layer}, l={l}, r={r}")
                block[l, r] = expect2(f, g, cov, quad)
        return block

    # patch Gram of the inputs: covariance of the first pre-activations
    phis = [patchify(x, q) for x in dataset.inputs]
    k0 = np.empty((n, n, p, p))
    for i in range(n):
        for j in range(n):
            k0[i, j] = phis[i].T @ phis[j]
    layers = [k0]

    feat = np.empty((n, n, p, p))
    for i in range(n):
        for j in range(i, n):
            feat[i, j] = c_sigma * pair_block(
                k0[i, i], k0[i, j], k0[j, j], act.value, act.value,
                f"(i={i}, j={j}, h=1)"
            )
            feat[j, i] = feat[i, j].T
    layers.append(feat)
    biases = np.empty((n, p))
    for i in range(n):
        for l in range(p):
            biases[i, l] = np.sqrt(c_sigma) * expect1(act.value, k0[i, i][l, l], quad)

    for h in range(2, config.depth):
        prev = layers[-1]
        pre = np.empty((n, n, p, p))
        for i in range(n):
            for j in range(n):
                pre[i, j] = _patch_trace(prev[i, j], q)
        mean_act = np.empty((n, p))
        for i in range(n):
            for l in range(p):
                mean_act[i, l] = expect1(act.value, pre[i, i][l, l], quad)
        feat = np.empty((n, n, p, p))
        for i in range(n):
            for j in range(i, n):
                pair = pair_block(pre[i, i], pre[i, j], pre[j, j],
                                  act.value, act.value, f"(i={i}, j={j}, h={h})")
                feat[i, j] = (
                    prev[i, j]
                    + ratio * (np.outer(mean_act[i], biases[j])
                               + np.outer(biases[i], mean_act[j]))
                    + ratio * ratio * pair
                )
                feat[j, i] = feat[i, j].T
        layers.append(feat)
        biases = biases + ratio * mean_act

    prev = layers[-1]
    final = np.empty((n, n))
    for i in range(n):
        for j in range(i, n):
            pre_ii = _patch_trace(prev[i, i], q)
            pre_ij = _patch_trace(prev[i, j], q)
            pre_jj = _patch_trace(prev[j, j], q)
            total = 0.0
            for l in range(p):
                cov = _marginal_cov(
                    pre_ii[l, l], pre_ij[l, l], pre_jj[l, l],
                    f"(i={i}, j={j}, h={config.depth}, l={l})"
                )
                total += pre_ij[l, l] * expect2(
                    act.derivative, act.derivative, cov, quad
                )
            final[i, j] = final[j, i] = ratio * ratio * total
    return KernelState(
        arch="convresnet", layers=layers, biases=biases, final=symmetrize(final)
    )


def kernel_general(
    dataset: Dataset, config: NetworkConfig, quad: QuadRule | None = None
) -> KernelState:
    """Population kernel for any architecture, dispatched on the config.

    The residual recursions share one structure: the layer-1 kernel uses
    the normalized activation rule, later layers add the skip term, two
    mean-feature cross terms, and the scaled pair expectation, and the
    final layer applies the derivative-pair weighting with the residual
    branch prefactor ``(c_res/H)^2``.  The convolutional variant runs the
    same recursion on per-pixel feature kernels with a patch-trace step
    before each expectation; with one pixel and a size-1 filter it
    collapses exactly to the scalar path.
    """
    quad = quad if quad is not None else default_quad()
    if config.arch == "fc":
        return kernel_fc(dataset, config.depth, config.activation, quad)
    if config.arch == "resnet":
        return _kernel_resnet(dataset, config, quad)
    return _kernel_conv(dataset, config, quad)
