"""Fully connected regression network trained with Adam on MSE.

Hidden layer l computes `BatchNorm(ReLU(a @ W_l + b_l))`; the output layer is
linear with one unit. Batch statistics are used while training and the
running averages at inference.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

from app.learners.base import DivergenceError, RegressorSpec, TrainedRegressor, frozen_array

logger = logging.getLogger(__name__)

BN_EPSILON = 1e-3
BN_MOMENTUM = 0.99
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-7


def init_dense_params(n_inputs: int, layer_sizes: tuple[int, ...], rng: np.random.Generator) -> dict:
    """Glorot-uniform weights, zero biases, unit BN scale."""
    params = {}
    fan_in = n_inputs
    for l, width in enumerate(layer_sizes):
        limit = np.sqrt(6.0 / (fan_in + width))
        params[f'W{l}'] = rng.uniform(-limit, limit, (fan_in, width))
        params[f'b{l}'] = np.zeros(width)
        params[f'gamma{l}'] = np.ones(width)
        params[f'beta{l}'] = np.zeros(width)
        fan_in = width
    limit = np.sqrt(6.0 / (fan_in + 1))
    params['W_out'] = rng.uniform(-limit, limit, (fan_in, 1))
    params['b_out'] = np.zeros(1)
    return params


def init_running_stats(layer_sizes: tuple[int, ...]) -> dict:
    stats = {}
    for l, width in enumerate(layer_sizes):
        stats[f'mean{l}'] = np.zeros(width)
        stats[f'var{l}'] = np.ones(width)
    return stats


def _n_hidden(params: dict) -> int:
    return sum(1 for key in params if key.startswith('gamma'))


def dense_forward(params: dict, X: np.ndarray, running: dict = None) -> tuple[np.ndarray, list]:
    """Forward pass; batch statistics when `running` is None, else inference mode."""
    a = X
    cache = []
    for l in range(_n_hidden(params)):
        z = a @ params[f'W{l}'] + params[f'b{l}']
        r = np.maximum(z, 0.0)
        if running is None:
            mean, var = r.mean(axis=0), r.var(axis=0)
        else:
            mean, var = running[f'mean{l}'], running[f'var{l}']
        inv_std = 1.0 / np.sqrt(var + BN_EPSILON)
        xhat = (r - mean) * inv_std
        cache.append((a, z, xhat, inv_std, mean, var))
        a = params[f'gamma{l}'] * xhat + params[f'beta{l}']
    out = (a @ params['W_out'] + params['b_out'])[:, 0]
    cache.append(a)
    return out, cache


def dense_backward(params: dict, cache: list, dout: np.ndarray) -> dict:
    """Gradients of a scalar loss given d loss / d output, training-mode forward."""
    grads = {}
    a = cache[-1]
    n = dout.size
    grads['W_out'] = a.T @ dout[:, None]
    grads['b_out'] = np.array([dout.sum()])
    da = dout[:, None] @ params['W_out'].T
    for l in range(_n_hidden(params) - 1, -1, -1):
        a_prev, z, xhat, inv_std, _, _ = cache[l]
        grads[f'gamma{l}'] = (da * xhat).sum(axis=0)
        grads[f'beta{l}'] = da.sum(axis=0)
        dxhat = da * params[f'gamma{l}']
        dr = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
        dz = dr * (z > 0)
        grads[f'W{l}'] = a_prev.T @ dz
        grads[f'b{l}'] = dz.sum(axis=0)
        da = dz @ params[f'W{l}'].T
    return grads


def dense_loss_and_grads(params: dict, X: np.ndarray, y: np.ndarray) -> tuple[float, dict]:
    """Mean squared error of a training-mode pass and its parameter gradients."""
    out, cache = dense_forward(params, X)
    residual = out - y
    loss = float(np.mean(residual ** 2))
    grads = dense_backward(params, cache, 2.0 * residual / y.size)
    return loss, grads


@dataclass(frozen=True)
class DenseModel(TrainedRegressor):
    params: dict = field(default_factory=dict)
    running: dict = field(default_factory=dict)
    train_loss: tuple[float, ...] = ()

    def _predict(self, X: np.ndarray) -> np.ndarray:
        out, _ = dense_forward(self.params, X, running=self.running)
        return out


def _update_running(running: dict, cache: list, n_hidden: int):
    for l in range(n_hidden):
        _, _, _, _, mean, var = cache[l]
        running[f'mean{l}'] = BN_MOMENTUM * running[f'mean{l}'] + (1 - BN_MOMENTUM) * mean
        running[f'var{l}'] = BN_MOMENTUM * running[f'var{l}'] + (1 - BN_MOMENTUM) * var


def fit_dense(X: np.ndarray, y: np.ndarray, spec: RegressorSpec) -> DenseModel:
    """Mini-batch Adam; batches are reshuffled every epoch from the spec seed.

    Raises:
        DivergenceError: if the loss becomes non-finite.
    """
    rng = np.random.default_rng(spec.seed)
    params = init_dense_params(X.shape[1], spec.layer_sizes, rng)
    running = init_running_stats(spec.layer_sizes)
    moment1 = {k: np.zeros_like(v) for k, v in params.items()}
    moment2 = {k: np.zeros_like(v) for k, v in params.items()}
    n_hidden = len(spec.layer_sizes)
    step = 0
    losses = []

    for epoch in range(spec.epochs):
        order = rng.permutation(y.size)
        epoch_loss = 0.0
        for start in range(0, y.size, spec.batch_size):
            batch = order[start:start + spec.batch_size]
            out, cache = dense_forward(params, X[batch])
            residual = out - y[batch]
            loss = float(np.mean(residual ** 2))
            if not np.isfinite(loss):
                raise DivergenceError(f"Dense network diverged at epoch {epoch}", epoch=epoch)
            grads = dense_backward(params, cache, 2.0 * residual / batch.size)
            _update_running(running, cache, n_hidden)

            step += 1
            for key, grad in grads.items():
                moment1[key] = ADAM_BETA1 * moment1[key] + (1 - ADAM_BETA1) * grad
                moment2[key] = ADAM_BETA2 * moment2[key] + (1 - ADAM_BETA2) * grad ** 2
                m_hat = moment1[key] / (1 - ADAM_BETA1 ** step)
                v_hat = moment2[key] / (1 - ADAM_BETA2 ** step)
                params[key] = params[key] - spec.step_size * m_hat / (np.sqrt(v_hat) + ADAM_EPSILON)
            epoch_loss += loss * batch.size
        losses.append(epoch_loss / y.size)
        if not all(np.isfinite(v).all() for v in params.values()):
            raise DivergenceError(f"Dense network weights became non-finite at epoch {epoch}", epoch=epoch)
        if (epoch + 1) % 50 == 0:
            logger.debug("Dense %s epoch %d loss %.4f", list(spec.layer_sizes), epoch + 1, losses[-1])

    return DenseModel(
        spec=spec,
        n_features=X.shape[1],
        params={k: frozen_array(v) for k, v in params.items()},
        running={k: frozen_array(v) for k, v in running.items()},
        train_loss=tuple(losses),
    )
