import numpy as np
import pytest

from lstan.tensor import GradTape, Tensor


def central_difference(loss_fn, arrays, h=1e-5):
    """Central-difference gradient of ``loss_fn()`` with respect to each array (perturbed in place)."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = a[idx]
            a[idx] = orig + h
            up = loss_fn()
            a[idx] = orig - h
            down = loss_fn()
            a[idx] = orig
            g[idx] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def relative_error(analytic, numeric, floor=1e-8):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``; the floor keeps exact zeros from dividing by zero."""
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def tape_gradients(build, tensors):
    with GradTape() as tape:
        loss = build()
    grads = tape.backward(loss, tensors)
    return [grads[t] for t in tensors]


def max_grad_error(build, tensors, h=1e-5):
    analytic = tape_gradients(build, tensors)
    numeric = central_difference(lambda: build().item(), [t.data for t in tensors], h)
    return max(float(relative_error(a, n).max()) for a, n in zip(analytic, numeric))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def param(rng, *shape):
    return Tensor(rng.normal(size=shape), requires_grad=True)
