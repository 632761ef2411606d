"""Compare tape gradients with central differences in float64."""

from __future__ import annotations

import numpy as np

from tabseg import tensor as T
from oracles import numerical_gradient, relative_error


def gradient_errors(fn, arrays: list[np.ndarray], seed: int = 0) -> list[float]:
    """Relative error per input of ``d sum(fn(*xs) * R) / d xs``.

    ``fn`` takes tensors and returns a tensor; ``R`` is a fixed random
    weighting so that every output element contributes.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    with T.high_precision():
        probe = fn(*[T.Tensor(a) for a in arrays])
    weights = np.random.default_rng(seed).standard_normal(probe.shape)

    def scalar(*xs):
        with T.high_precision(), T.no_grad():
            return float(np.sum(fn(*[T.Tensor(x) for x in xs]).data * weights))

    with T.high_precision():
        leaves = [T.Tensor(a, requires_grad=True) for a in arrays]
        out = fn(*leaves)
        T.tsum(T.mul(out, T.Tensor(weights))).backward()
    numeric = numerical_gradient(scalar, arrays)
    return [relative_error(leaf.grad if leaf.grad is not None else np.zeros_like(n), n)
            for leaf, n in zip(leaves, numeric)]
