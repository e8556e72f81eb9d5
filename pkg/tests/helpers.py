"""Shared test utilities: an independent central-difference gradient oracle."""

import numpy as np

from flowdmd.autodiff import Var, backward, no_grad


def fd_gradient(loss_fn, param: Var, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar loss w.r.t. one parameter array.

    ``loss_fn`` must read the parameter's current value on every call; the
    entries are perturbed in place and restored afterwards.
    """
    grad = np.zeros_like(param.value)
    flat = param.value.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        saved = flat[i]
        flat[i] = saved + h
        up = float(loss_fn())
        flat[i] = saved - h
        down = float(loss_fn())
        flat[i] = saved
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def analytic_gradients(loss_builder, params) -> list:
    """Backward-pass gradients of a freshly built scalar loss."""
    for p in params:
        p.grad = None
    loss = loss_builder()
    backward(loss)
    return [p.grad_or_zeros().copy() for p in params]


def relative_gradient_error(loss_builder, params, h: float = 1e-5) -> float:
    """Worst relative gap between backward gradients and finite differences.

    The finite-difference side re-evaluates the loss with recording disabled
    so the oracle stays independent of the backward implementation.
    """
    analytic = analytic_gradients(loss_builder, params)

    def eval_loss():
        with no_grad():
            return float(loss_builder())

    worst = 0.0
    for p, a in zip(params, analytic):
        fd = fd_gradient(eval_loss, p, h=h)
        denom = max(np.linalg.norm(fd), np.linalg.norm(a), 1e-10)
        worst = max(worst, np.linalg.norm(a - fd) / denom)
    return worst
