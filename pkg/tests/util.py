import numpy as np


def finite_diff_check(store, loss_fn, names=None, h=1e-5, tol=1e-4):
    """Central finite differences against tape gradients.

    loss_fn(store) must rebuild a fresh tape and return (loss value, grads).
    Returns the worst relative error seen.
    """
    _, grads = loss_fn(store)
    names = names if names is not None else list(grads)
    worst = 0.0
    for name in names:
        flat = store.params[name].reshape(-1)
        grad = np.asarray(grads.get(name, np.zeros_like(store.params[name]))).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up, _ = loss_fn(store)
            flat[i] = orig - h
            down, _ = loss_fn(store)
            flat[i] = orig
            numeric = (up - down) / (2 * h)
            denom = max(abs(numeric), abs(grad[i]), 1.0)
            worst = max(worst, abs(numeric - grad[i]) / denom)
    assert worst < tol, f"finite-difference mismatch {worst}"
    return worst
