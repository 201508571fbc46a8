"""ADAM optimizer with decoupled weight decay.

The decay is applied as theta <- theta - lr * wd * theta before the moment
update, so it never leaks into the running moment estimates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor


@dataclass
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-5


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    """Updates a fixed set of named parameter tensors in place."""

    def __init__(self, params: list[tuple[str, Tensor]], config: AdamConfig | None = None):
        self.params = list(params)
        self.config = config or AdamConfig()
        self.state = AdamState()
        for name, p in self.params:
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def step(self, grads: dict[str, np.ndarray] | None = None) -> None:
        """Apply one update. ``grads`` defaults to each tensor's .grad.

        A NaN in any gradient aborts before any parameter is touched.
        """
        cfg = self.config
        resolved: list[tuple[str, Tensor, np.ndarray]] = []
        for name, p in self.params:
            g = grads[name] if grads is not None else p.grad_array()
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
            if np.isnan(g).any():
                raise FloatingPointError(f"NaN gradient for parameter {name}")
            resolved.append((name, p, g))

        self.state.step += 1
        t = self.state.step
        bc1 = 1.0 - cfg.beta1 ** t
        bc2 = 1.0 - cfg.beta2 ** t
        for name, p, g in resolved:
            if cfg.weight_decay:
                p.data -= cfg.lr * cfg.weight_decay * p.data
            m = self.state.m[name]
            v = self.state.v[name]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            m_hat = m / bc1
            v_hat = v / bc2
            p.data -= (cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps)).astype(p.data.dtype, copy=False)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()
