"""Selective state-space (S6) block.

Precompute stage turns an ``S x c`` sequence into input-dependent weights
``delta_a, delta_b`` (``S x c_state x c``) and ``c_out`` (``S x c_state``).
The scan stage runs the linear recurrence

    h[s] = h[s-1] * delta_a[s] + delta_b[s],   h[-1] = 0
    y[s] = sum_n c_out[s, n] * h[s, n, :]

either step by step or as a work-efficient (up-sweep / down-sweep) prefix
scan over the associative composition of affine maps.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .numkit import ops
from .numkit.rng import Rng
from .numkit.tensor import Tensor, as_tensor, make_result

ScanMethod = Literal["parallel", "sequential"]


# --- scan kernels (plain arrays) -------------------------------------------

def compose(later: tuple[np.ndarray, np.ndarray], earlier: tuple[np.ndarray, np.ndarray]):
    """``later o earlier`` for affine maps ``h -> h*a + b``."""
    a2, b2 = later
    a1, b1 = earlier
    return a1 * a2, b1 * a2 + b2


def scan_sequential(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """All hidden states of ``h[s] = h[s-1]*a[s] + b[s]`` from ``h[-1] = 0``."""
    h = np.empty_like(b)
    acc = np.zeros_like(b[0])
    for s in range(len(b)):
        acc = acc * a[s] + b[s]
        h[s] = acc
    return h


def scan_parallel(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Same result as :func:`scan_sequential` via a Blelloch tree scan.

    The sequence is right-padded with identity maps ``(1, 0)`` to a power
    of two.  Each tree level is one vectorised step, so depth is
    ``O(log S)`` and total work ``O(S)``.
    """
    S = len(b)
    if S == 0:
        return np.empty_like(b)
    n = 1 << (S - 1).bit_length()
    A = np.ones((n,) + a.shape[1:])
    B = np.zeros((n,) + b.shape[1:])
    A[:S] = a
    B[:S] = b
    orig_a = A.copy()
    orig_b = B.copy()

    # up-sweep: node i accumulates the composition of its subtree
    stride = 2
    while stride <= n:
        right = slice(stride - 1, n, stride)
        left = slice(stride // 2 - 1, n, stride)
        A[right], B[right] = compose((A[right], B[right]), (A[left], B[left]))
        stride *= 2

    # down-sweep: exclusive prefix compositions
    A[n - 1] = 1.0
    B[n - 1] = 0.0
    stride = n
    while stride >= 2:
        right = slice(stride - 1, n, stride)
        left = slice(stride // 2 - 1, n, stride)
        la, lb = A[left].copy(), B[left].copy()
        A[left], B[left] = A[right], B[right]
        A[right], B[right] = compose((la, lb), (A[right], B[right]))
        stride //= 2

    # inclusive state: apply element s to its exclusive prefix (h of prefix is B)
    h = B * orig_a + orig_b
    return h[:S]


_SCANS = {"sequential": scan_sequential, "parallel": scan_parallel}


def selective_scan(delta_a, delta_b, c_out, method: ScanMethod = "parallel") -> Tensor:
    """Differentiable scan primitive returning ``y`` of shape ``S x c``.

    The backward pass is itself a reversed linear recurrence and uses the
    same scan kernel.
    """
    delta_a, delta_b, c_out = as_tensor(delta_a), as_tensor(delta_b), as_tensor(c_out)
    if delta_a.shape != delta_b.shape or delta_a.ndim != 3:
        raise ValueError(f"delta_a {delta_a.shape} and delta_b {delta_b.shape} must match (S, n, c)")
    if c_out.shape != delta_a.shape[:2]:
        raise ValueError(f"c_out {c_out.shape} must be {delta_a.shape[:2]}")
    scan = _SCANS[method]
    a, b, C = delta_a.data, delta_b.data, c_out.data
    h = scan(a, b)
    y = np.einsum("sn,snc->sc", C, h)

    def backward(gy):
        gh = C[:, :, None] * gy[:, None, :]
        a_next = np.zeros_like(a)
        a_next[:-1] = a[1:]
        g = scan(a_next[::-1], gh[::-1])[::-1]
        h_prev = np.zeros_like(h)
        h_prev[1:] = h[:-1]
        return g * h_prev, g.copy(), np.einsum("snc,sc->sn", h, gy)

    return make_result(y, (delta_a, delta_b, c_out), backward)


# --- parameters and precompute ----------------------------------------------

@dataclass
class S6Params:
    a_log: Tensor      # c_state x c, A = -exp(a_log)
    conv_w: Tensor     # K x c
    conv_b: Tensor     # c
    w_c: Tensor        # c x c_state
    w_b: Tensor        # c x c_state
    w_rank: Tensor     # c x c_rank
    w_delta: Tensor    # c_rank x c
    delta_bias: Tensor  # c
    conv_padding: str = "causal"

    @property
    def c(self) -> int:
        return self.a_log.shape[1]

    @property
    def c_state(self) -> int:
        return self.a_log.shape[0]

    @property
    def c_rank(self) -> int:
        return self.w_rank.shape[1]

    @classmethod
    def init(cls, rng: Rng, c: int, c_state: int = 16, c_rank: int | None = None,
             conv_kernel: int = 4, std: float = 0.02, conv_padding: str = "causal") -> "S6Params":
        c_rank = c_rank or max(1, c // 16)
        a_log = np.log(np.repeat(np.arange(1, c_state + 1, dtype=np.float64)[:, None], c, axis=1))
        # delta bias so that softplus(bias) spans [1e-3, 1e-1] log-uniformly
        dt = np.exp(rng.uniform(c, np.log(1e-3), np.log(1e-1)))
        dt_bias = dt + np.log(-np.expm1(-dt))
        # conv kernel and delta projection use fan-in scales rather than
        # ``std``; at std=0.02 the scan input collapses to ~1e-2 and the
        # state update to ~1e-7
        conv_bound = 1.0 / np.sqrt(conv_kernel)
        delta_bound = 1.0 / np.sqrt(c_rank)
        return cls(
            a_log=Tensor(a_log, requires_grad=True, name="a_log"),
            conv_w=Tensor(rng.uniform((conv_kernel, c), -conv_bound, conv_bound),
                          requires_grad=True, name="conv_w"),
            conv_b=Tensor(np.zeros(c), requires_grad=True, name="conv_b"),
            w_c=rng.param((c, c_state), std, "w_c"),
            w_b=rng.param((c, c_state), std, "w_b"),
            w_rank=rng.param((c, c_rank), std, "w_rank"),
            w_delta=Tensor(rng.uniform((c_rank, c), -delta_bound, delta_bound),
                           requires_grad=True, name="w_delta"),
            delta_bias=Tensor(dt_bias, requires_grad=True, name="delta_bias"),
            conv_padding=conv_padding,
        )


@dataclass
class S6Weights:
    delta_a: Tensor  # S x c_state x c
    delta_b: Tensor  # S x c_state x c
    c_out: Tensor    # S x c_state


def s6_precompute(x, params: S6Params) -> S6Weights:
    x = as_tensor(x)
    if x.ndim != 2 or x.shape[1] != params.c:
        raise ValueError(f"input {x.shape} does not match model dim c={params.c}")
    if x.shape[0] < 1:
        raise ValueError("empty sequence")
    S, c = x.shape
    n = params.c_state
    u = ops.silu(ops.add(ops.conv1d_depthwise(x, params.conv_w, params.conv_padding), params.conv_b))
    c_out = ops.matmul(u, params.w_c)
    b_proj = ops.matmul(u, params.w_b)
    delta = ops.softplus(ops.add(ops.matmul(ops.matmul(u, params.w_rank), params.w_delta),
                                 params.delta_bias))
    a = ops.neg(ops.exp(params.a_log))
    delta_a = ops.exp(ops.mul(ops.reshape(delta, (S, 1, c)), ops.reshape(a, (1, n, c))))
    delta_b = ops.mul(ops.reshape(ops.mul(u, delta), (S, 1, c)), ops.reshape(b_proj, (S, n, 1)))
    return S6Weights(delta_a, delta_b, c_out)


def s6_scan_sequential(w: S6Weights) -> Tensor:
    return selective_scan(w.delta_a, w.delta_b, w.c_out, "sequential")


def s6_scan_parallel(w: S6Weights) -> Tensor:
    return selective_scan(w.delta_a, w.delta_b, w.c_out, "parallel")


def s6_forward(x, params: S6Params, method: ScanMethod = "parallel") -> Tensor:
    w = s6_precompute(x, params)
    return selective_scan(w.delta_a, w.delta_b, w.c_out, method)


def hidden_states(w: S6Weights, method: ScanMethod = "parallel") -> np.ndarray:
    """Raw hidden states ``h`` (``S x c_state x c``), no tape."""
    return _SCANS[method](w.delta_a.data, w.delta_b.data)
