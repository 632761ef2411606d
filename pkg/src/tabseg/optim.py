"""Adam with coupled L2 weight decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError
from .tensor import Tensor


@dataclass
class AdamState:
    learning_rate: float = 1e-5
    weight_decay: float = 1e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def init_buffers(self, params: dict[str, Tensor]) -> None:
        for name, p in params.items():
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray | None],
              state: AdamState) -> None:
    """Apply one Adam update in place.

    The decay term ``weight_decay * p`` is added to the gradient before the
    moment updates (classic L2, not decoupled AdamW).  Parameters whose
    gradient is ``None`` are treated as having a zero gradient.
    """
    state.init_buffers(params)
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** t
    correction2 = 1.0 - b2 ** t
    for name, p in params.items():
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape or v.shape != p.shape:
            raise ConfigurationError(
                f"adam: state shape {m.shape} does not match parameter {name!r} {p.shape}"
            )
        g = grads.get(name)
        g = np.zeros_like(p.data) if g is None else g.astype(p.dtype, copy=False)
        if state.weight_decay:
            g = g + p.dtype.type(state.weight_decay) * p.data
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / correction1
        v_hat = v / correction2
        p.data -= (state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)


class Adam:
    """Convenience wrapper binding a parameter dict to an :class:`AdamState`."""

    def __init__(self, params: dict[str, Tensor], state: AdamState | None = None, **hyper):
        self.params = params
        self.state = state or AdamState(**hyper)
        self.state.init_buffers(params)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, {k: p.grad for k, p in self.params.items()}, self.state)
