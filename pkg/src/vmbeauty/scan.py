"""Numpy kernels for the diagonal linear recurrence ``h_t = a_t * h_{t-1} + b_t``.

Two evaluation strategies are provided and must agree:

* :func:`linear_recurrence_sequential` - one step per token, the reference.
* :func:`linear_recurrence_chunked` - the sequence is cut into blocks; inside a
  block the affine maps ``h -> a h + b`` are combined with a log-depth
  (Hillis-Steele) prefix scan, and a short sequential pass carries the state
  across block boundaries.  Work stays linear in the sequence length.

All kernels take the time axis at position ``axis`` (default 1, i.e. arrays
shaped ``(batch, time, ...)``) and return every intermediate state.
"""

from __future__ import annotations

import numpy as np

DEFAULT_CHUNK = 32


def linear_recurrence_sequential(a: np.ndarray, b: np.ndarray, h0: np.ndarray | None = None,
                                 axis: int = 1) -> np.ndarray:
    a = np.moveaxis(a, axis, 0)
    b = np.moveaxis(b, axis, 0)
    out = np.empty(b.shape, dtype=np.result_type(a, b))
    h = np.zeros(b.shape[1:], dtype=out.dtype) if h0 is None else h0
    for t in range(b.shape[0]):
        h = a[t] * h + b[t]
        out[t] = h
    return np.moveaxis(out, 0, axis)


def _prefix_affine(a: np.ndarray, b: np.ndarray, axis: int) -> tuple[np.ndarray, np.ndarray]:
    """Inclusive prefix composition of affine maps along ``axis``.

    Returns ``(A, H)`` with ``A_t = a_t ... a_0`` and ``H_t`` the state at ``t``
    when starting from zero.
    """
    A = a.copy()
    H = b.copy()
    n = a.shape[axis]
    step = 1
    while step < n:
        head = [slice(None)] * a.ndim
        tail = [slice(None)] * a.ndim
        head[axis] = slice(step, None)
        tail[axis] = slice(None, n - step)
        head, tail = tuple(head), tuple(tail)
        # right-hand side is evaluated before assignment, so no aliasing
        H[head] = A[head] * H[tail] + H[head]
        A[head] = A[head] * A[tail]
        step *= 2
    return A, H


def linear_recurrence_chunked(a: np.ndarray, b: np.ndarray, h0: np.ndarray | None = None,
                              axis: int = 1, chunk: int = DEFAULT_CHUNK) -> np.ndarray:
    a = np.moveaxis(a, axis, 0)
    b = np.moveaxis(b, axis, 0)
    S = b.shape[0]
    rest = b.shape[1:]
    dtype = np.result_type(a, b)
    if chunk <= 1 or S <= 1:
        return np.moveaxis(linear_recurrence_sequential(a, b, h0, axis=0), 0, axis)
    n_chunks = -(-S // chunk)
    pad = n_chunks * chunk - S
    if pad:
        a = np.concatenate([a, np.ones((pad,) + rest, dtype=a.dtype)], axis=0)
        b = np.concatenate([b, np.zeros((pad,) + rest, dtype=b.dtype)], axis=0)
    a = a.reshape((n_chunks, chunk) + rest)
    b = b.reshape((n_chunks, chunk) + rest)
    A, H = _prefix_affine(a, b, axis=1)
    carry = np.zeros(rest, dtype=dtype) if h0 is None else np.asarray(h0, dtype=dtype)
    out = np.empty((n_chunks, chunk) + rest, dtype=dtype)
    for c in range(n_chunks):
        out[c] = A[c] * carry + H[c]
        carry = out[c, -1]
    out = out.reshape((n_chunks * chunk,) + rest)[:S]
    return np.moveaxis(out, 0, axis)


STRATEGIES = {
    "sequential": linear_recurrence_sequential,
    "chunked": linear_recurrence_chunked,
}


def _recurrence(strategy: str):
    try:
        return STRATEGIES[strategy]
    except KeyError:
        raise ValueError(f"unknown scan strategy {strategy!r}; expected one of {sorted(STRATEGIES)}") from None


def selective_scan_forward(x, delta, A, B, C, strategy: str = "chunked"):
    """Run the discretized selective recurrence.

    Shapes: ``x, delta: (batch, S, inner)``, ``A: (inner, n)``,
    ``B, C: (batch, S, n)``.  Returns ``(y, h, a_bar)``: ``y`` has the shape of
    ``x``, ``h: (batch, S, inner, n)`` holds every state and ``a_bar`` the
    per-step decays.
    """
    a_bar = np.exp(delta[..., None] * A)
    bx = (delta * x)[..., None] * B[:, :, None, :]
    h = _recurrence(strategy)(a_bar, bx, axis=1)
    y = np.einsum("bsin,bsn->bsi", h, C)
    return y, h, a_bar


def selective_scan_backward(gy, x, delta, A, B, C, h, a_bar, strategy: str = "chunked"):
    """Gradients of ``sum(gy * y)`` with respect to ``(x, delta, A, B, C)``.

    The state adjoint obeys the reversed recurrence
    ``g_t = a_{t+1} g_{t+1} + C_t gy_t``, evaluated with the same kernel on
    time-reversed operands.
    """
    inj = gy[..., None] * C[:, :, None, :]
    a_next = np.concatenate([a_bar[:, 1:], np.ones_like(a_bar[:, :1])], axis=1)
    gh = _recurrence(strategy)(a_next[:, ::-1], inj[:, ::-1], axis=1)[:, ::-1]
    h_prev = np.concatenate([np.zeros_like(h[:, :1]), h[:, :-1]], axis=1)
    g_abar = gh * h_prev * a_bar  # d/d(delta*A) of exp(delta*A) folded in
    dC = np.einsum("bsi,bsin->bsn", gy, h)
    gbx = np.einsum("bsin,bsn->bsi", gh, B)
    dx = gbx * delta
    ddelta = gbx * x + np.einsum("bsin,in->bsi", g_abar, A)
    dA = np.einsum("bsin,bsi->in", g_abar, delta)
    dB = np.einsum("bsin,bsi->bsn", gh, delta * x)
    return dx, ddelta, dA, dB, dC
