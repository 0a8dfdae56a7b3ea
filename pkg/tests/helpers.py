"""Shared test oracles: central finite differences and gradient comparison."""

import numpy as np

from lmlp import tensor as T


def fd_gradient(fn, param: T.Tensor, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of the scalar ``fn()`` w.r.t. one tensor.

    ``fn`` must recompute the forward pass from current parameter values.
    """
    grad = np.zeros_like(param.data)
    flat = param.data.reshape(-1)
    out = grad.reshape(-1)
    with T.no_grad():
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            up = fn()
            flat[i] = original - step
            down = fn()
            flat[i] = original
            out[i] = (up - down) / (2.0 * step)
    return grad


def max_rel_error(auto: np.ndarray, fd: np.ndarray) -> float:
    """Infinity-norm error of the gradient relative to its largest entry."""
    scale = max(np.abs(fd).max(), 1e-12)
    return float(np.abs(auto - fd).max() / scale)


def check_gradients(loss_fn, params, step: float = 1e-5, tol: float = 1e-4) -> float:
    """Compare reverse-mode gradients of ``loss_fn`` against finite differences.

    ``loss_fn`` builds the graph and returns the scalar loss Tensor; it is also
    reused (under no_grad) for the finite-difference evaluations. Returns the
    worst relative error across all parameters.
    """
    T.reset_tape()
    for p in params:
        p.zero_grad()
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for p in params:
        assert p.grad is not None, "parameter missed by backward"
        fd = fd_gradient(lambda: loss_fn().item(), p, step=step)
        err = max_rel_error(p.grad, fd)
        worst = max(worst, err)
        assert err <= tol, f"gradient mismatch: rel error {err:.3e} > {tol}"
    T.reset_tape()
    return worst
