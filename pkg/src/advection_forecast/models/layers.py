"""Convolution building blocks, plain numpy and on the autodiff tape.

Activations are (channels, height, width); weights are
(out_channels, in_channels, k, k) and biases (out_channels,). Padding is zero.
"""

import numpy as np

from numpy.lib.stride_tricks import sliding_window_view

from ..autodiff import Var, node


def _windows(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    padded = np.pad(x, ((0, 0), (padding, padding), (padding, padding)))
    view = sliding_window_view(padded, (k, k), axis=(1, 2))
    return view[:, ::stride, ::stride]


def conv2d_forward(
    x: np.ndarray,
    weight: np.ndarray,
    bias: np.ndarray,
    stride: int = 1,
    padding: int = None,
) -> np.ndarray:
    """Cross-correlation of ``x`` with ``weight`` plus ``bias``."""
    out_channels, in_channels, k, _ = weight.shape
    if x.shape[0] != in_channels:
        raise ValueError(
            f"conv2d expects {in_channels} input channels, got {x.shape[0]}"
        )
    if padding is None:
        padding = k // 2
    windows = _windows(x, k, stride, padding)
    out = np.tensordot(weight, windows, axes=([1, 2, 3], [0, 3, 4]))
    return out + bias[:, None, None]


def conv2d_backward(
    x: np.ndarray,
    weight: np.ndarray,
    grad: np.ndarray,
    stride: int = 1,
    padding: int = None,
):
    """Gradients (input, weight, bias) of :func:`conv2d_forward`."""
    _, _, k, _ = weight.shape
    if padding is None:
        padding = k // 2
    windows = _windows(x, k, stride, padding)
    grad_weight = np.tensordot(grad, windows, axes=([1, 2], [1, 2]))
    grad_bias = grad.sum(axis=(1, 2))

    rows, cols = grad.shape[1:]
    height, width = x.shape[1:]
    grad_padded = np.zeros((x.shape[0], height + 2 * padding, width + 2 * padding))
    for a in range(k):
        for b in range(k):
            contribution = np.tensordot(weight[:, :, a, b], grad, axes=([0], [0]))
            grad_padded[
                :, a : a + stride * rows : stride, b : b + stride * cols : stride
            ] += contribution
    grad_input = grad_padded[:, padding : padding + height, padding : padding + width]
    return grad_input, grad_weight, grad_bias


def conv2d(x: Var, weight: Var, bias: Var, stride: int = 1, padding: int = None) -> Var:
    xv, wv = x.value, weight.value
    out = conv2d_forward(xv, wv, bias.value, stride, padding)
    cache = {"upstream": None, "grads": None}

    def grads(g):
        # the three parent closures receive the same upstream array
        if cache["upstream"] is not g:
            cache["upstream"] = g
            cache["grads"] = conv2d_backward(xv, wv, g, stride, padding)
        return cache["grads"]

    return node(
        out,
        [
            (x, lambda g: grads(g)[0]),
            (weight, lambda g: grads(g)[1]),
            (bias, lambda g: grads(g)[2]),
        ],
    )


def upsample2x(x: Var) -> Var:
    """Nearest-neighbour upsampling by 2 in both spatial axes."""
    channels, height, width = x.shape
    out = np.repeat(np.repeat(x.value, 2, axis=1), 2, axis=2)

    def vjp(g):
        return g.reshape(channels, height, 2, width, 2).sum(axis=(2, 4))

    return node(out, [(x, vjp)])


def he_normal(rng: np.random.Generator, shape) -> np.ndarray:
    """He fan-in initialization for a (out, in, k, k) weight."""
    fan_in = int(np.prod(shape[1:]))
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
