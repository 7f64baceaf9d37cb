"""Shared test oracles: finite differences and brute-force edit distance."""

from __future__ import annotations

from itertools import product

import numpy as np

from dgt import tensor as T

FD_STEP = 1e-5
REL_TOL = 1e-4
ABS_TOL = 1e-8


def finite_difference_grad(fn, arr: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central-difference gradient of scalar fn(arr) wrt every entry."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = fn()
        flat[i] = orig - h
        down = fn()
        flat[i] = orig
        out[i] = (up - down) / (2.0 * h)
    return grad


def assert_grad_close(analytic: np.ndarray, numeric: np.ndarray, context: str = "") -> None:
    analytic = np.asarray(analytic, dtype=np.float64)
    err = np.abs(analytic - numeric)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), ABS_TOL)
    worst = float((err / scale).max()) if err.size else 0.0
    ok = np.all((err <= ABS_TOL) | (err / scale < REL_TOL))
    assert ok, f"gradient mismatch{' in ' + context if context else ''}: worst rel err {worst:.3e}"


def check_op_grads(build_loss, arrays: dict[str, np.ndarray]) -> None:
    """Compare tape gradients of build_loss(tensors) against finite differences.

    ``arrays`` maps names to float64 inputs; each becomes a requires_grad
    tensor sharing the array, so the finite-difference probe can perturb
    the same memory the op reads.
    """
    tensors = {name: T.Tensor(arr, requires_grad=True, dtype=np.float64) for name, arr in arrays.items()}
    loss = build_loss(tensors)
    T.backward(loss)
    for name, arr in arrays.items():
        numeric = finite_difference_grad(lambda: build_loss(tensors).item(), arr)
        analytic = tensors[name].grad
        assert analytic is not None, f"no gradient reached input {name!r}"
        assert_grad_close(analytic, numeric, name)


def brute_force_edit_distance(ref, hyp) -> int:
    """Minimum edits by exhaustive search over alignment paths.

    Recursion over (i, j) without memoization on purpose: an independent
    route, tractable for the short sequences tests use.
    """

    def go(i: int, j: int) -> int:
        if i == len(ref):
            return len(hyp) - j
        if j == len(hyp):
            return len(ref) - i
        best = go(i + 1, j + 1) + (ref[i] != hyp[j])
        best = min(best, go(i + 1, j) + 1)
        best = min(best, go(i, j + 1) + 1)
        return best

    return go(0, 0)


def all_words(alphabet: str, max_len: int):
    """Every word over ``alphabet`` with length 1..max_len."""
    for length in range(1, max_len + 1):
        for combo in product(alphabet, repeat=length):
            yield "".join(combo)
