"""Shared oracles for the test suite.

The central helper compares tape gradients against central finite
differences. Loss builders passed to it must be pure functions of the
tensors they read, so perturbing one coordinate and rerunning the
forward pass is a valid probe.
"""

from __future__ import annotations

import numpy as np
import pytest

from replay_lab import autodiff as ad


def finite_difference_grad(build_loss, tensor: ad.Tensor, indices=None,
                           h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of ``build_loss()`` w.r.t. ``tensor``.

    ``build_loss`` is re-run with single coordinates of ``tensor.data``
    nudged by +/- h. Returns a dense array shaped like the tensor; when
    ``indices`` is given only those flat coordinates are probed and the
    rest stay zero.
    """
    base = tensor.data.copy()
    flat = base.ravel()
    out = np.zeros_like(flat)
    probe = range(flat.size) if indices is None else indices
    for i in probe:
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        tensor.data = bumped.reshape(base.shape)
        up = float(build_loss().data)
        bumped[i] = flat[i] - h
        tensor.data = bumped.reshape(base.shape)
        down = float(build_loss().data)
        out[i] = (up - down) / (2.0 * h)
    tensor.data = base
    return out.reshape(base.shape)


def tape_grad(build_loss, tensor: ad.Tensor) -> np.ndarray:
    """Gradient of ``build_loss()`` w.r.t. ``tensor`` via one tape sweep."""
    had_flag = tensor.requires_grad
    tensor.requires_grad = True
    tensor.grad = None
    with ad.Tape() as tape:
        loss = build_loss()
    ad.backward(loss, tape)
    g = np.zeros_like(tensor.data) if tensor.grad is None else tensor.grad.copy()
    tensor.requires_grad = had_flag
    tensor.grad = None
    return g


def relative_error(approx: np.ndarray, exact: np.ndarray,
                   floor: float = 1e-8) -> float:
    """Max elementwise |approx - exact| / max(|exact|, floor)."""
    approx = np.asarray(approx, dtype=np.float64)
    exact = np.asarray(exact, dtype=np.float64)
    denom = np.maximum(np.abs(exact), floor)
    return float(np.max(np.abs(approx - exact) / denom))


def assert_grad_matches_fd(build_loss, tensor: ad.Tensor, indices=None,
                           h: float = 1e-5, rtol: float = 1e-5) -> float:
    """Assert tape and finite-difference gradients agree; returns the error."""
    g_tape = tape_grad(build_loss, tensor)
    g_fd = finite_difference_grad(build_loss, tensor, indices=indices, h=h)
    if indices is not None:
        flat_tape = g_tape.ravel()[list(indices)]
        flat_fd = g_fd.ravel()[list(indices)]
        err = relative_error(flat_tape, flat_fd)
    else:
        err = relative_error(g_tape, g_fd)
    assert err < rtol, f"gradient mismatch: rel err {err:.3e} >= {rtol:.0e}"
    return err


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
