"""Central finite-difference gradient checks."""
import numpy as np

from .tensor import Tensor, backward


def _scalarize(out, weights):
    if out.size == 1:
        return out.data.reshape(()).item(), None
    if weights is None:
        weights = np.random.default_rng(12345).standard_normal(out.shape)
    return float(np.sum(out.data * weights)), weights


def finite_diff_check(f, x, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps the tensor(s) ``x`` to a tensor. Non-scalar outputs are
    contracted with a fixed random weighting before differentiation. The error
    per element is ``|analytic - numeric| / max(1, |numeric|)``; the maximum
    over all elements of all inputs is returned. ``f`` must be deterministic
    across calls.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.requires_grad = True
        t.grad = None

    out = f(*xs) if not isinstance(x, Tensor) else f(x)
    _, weights = _scalarize(out, None)
    if not out.requires_grad:
        return 0.0
    loss = out if out.size == 1 else (out * Tensor(weights, dtype=out.dtype)).sum()
    backward(loss)
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64) for t in xs]

    def evaluate():
        o = f(*xs) if not isinstance(x, Tensor) else f(x)
        return _scalarize(o, weights)[0]

    worst = 0.0
    for t, grad in zip(xs, analytic):
        flat = t.data.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = evaluate()
            flat[i] = orig - step
            fm = evaluate()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * step)
            err = abs(gflat[i] - numeric) / max(1.0, abs(numeric))
            worst = max(worst, err)
    return worst


def directional_check(f, xs, step=1e-5, n_dirs=4, seed=0):
    """Max relative error of analytic directional derivatives.

    For large parameter tensors an elementwise check is too slow. Here all
    inputs are perturbed together along ``n_dirs`` random unit directions and
    ``<grad, d>`` is compared with the central difference
    ``(f(x + h d) - f(x - h d)) / 2h``, using the same error measure as
    :func:`finite_diff_check`.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    xs = [xs] if isinstance(xs, Tensor) else list(xs)
    for t in xs:
        t.requires_grad = True
        t.grad = None
    out = f(*xs)
    _, weights = _scalarize(out, None)
    if not out.requires_grad:
        return 0.0
    loss = out if out.size == 1 else (out * Tensor(weights, dtype=out.dtype)).sum()
    backward(loss)
    grads = [np.zeros(t.shape) if t.grad is None else t.grad.astype(np.float64) for t in xs]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_dirs):
        dirs = [rng.standard_normal(t.shape) for t in xs]
        norm = np.sqrt(sum(float(np.sum(d * d)) for d in dirs))
        dirs = [d / norm for d in dirs]
        analytic = sum(float(np.sum(g * d)) for g, d in zip(grads, dirs))
        originals = [t.data.copy() for t in xs]
        for t, d, o in zip(xs, dirs, originals):
            t.data[...] = o + step * d
        fp = _scalarize(f(*xs), weights)[0]
        for t, d, o in zip(xs, dirs, originals):
            t.data[...] = o - step * d
        fm = _scalarize(f(*xs), weights)[0]
        for t, o in zip(xs, originals):
            t.data[...] = o
        numeric = (fp - fm) / (2.0 * step)
        worst = max(worst, abs(analytic - numeric) / max(1.0, abs(numeric)))
    return worst
