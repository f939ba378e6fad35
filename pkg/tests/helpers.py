"""Shared test utilities."""

import numpy as np

from fourier_circuits import autodiff as ad
from fourier_circuits.dataset import ModAddDataset
from fourier_circuits.training import loss_and_grad, model_arrays, regularized_loss, with_arrays


def flatten(arrays: dict) -> tuple[np.ndarray, list]:
    names = sorted(arrays)
    layout = [(n, arrays[n].shape) for n in names]
    return np.concatenate([arrays[n].ravel() for n in names]), layout


def unflatten(x: np.ndarray, layout: list) -> dict:
    out, pos = {}, 0
    for name, shape in layout:
        size = int(np.prod(shape))
        out[name] = x[pos : pos + size].reshape(shape).copy()
        pos += size
    return out


def objective_grad_error(model, inputs, labels, lam: float, eps: float = 1e-5) -> float:
    """Relative error of the taped objective gradient against central differences."""
    inputs = np.asarray(inputs)
    labels = np.asarray(labels)
    _, _, _, grads = loss_and_grad(model, inputs, labels, lam)
    x0, layout = flatten(model_arrays(model))
    g, _ = flatten(grads)
    p = getattr(model, "cfg", model).p
    k = inputs.shape[1]
    batch = ModAddDataset(p, k, inputs, labels)

    def f(x):
        return regularized_loss(with_arrays(model, unflatten(x, layout)), batch, lam)

    return ad.grad_check(f, g, x0, eps)
