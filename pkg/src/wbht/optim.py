"""Parameter update rules and the critic weight clamp.

RMSProp is the default for adversarial (Wasserstein) training, Adam for the
probability-output mode and the encoder phase.  Updates happen in place and
zero the gradients they consumed.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .params import ParameterSet


class Optimizer:
    """RMSProp or Adam over one ParameterSet.

    kind="rmsprop": s = rho*s + (1-rho)*g^2;  w -= lr * g / (sqrt(s) + eps)
    kind="adam":    bias-corrected first/second moments with betas.
    """

    def __init__(self, params: ParameterSet, kind: str = "rmsprop",
                 lr: float = 5e-5, rho: float = 0.9,
                 betas: tuple[float, float] = (0.5, 0.999), eps: float = 1e-8):
        if kind not in ("rmsprop", "adam"):
            raise ContractError(f"unknown optimizer kind {kind!r}")
        self.params = params
        self.kind = kind
        self.lr = lr
        self.rho = rho
        self.betas = betas
        self.eps = eps
        self.step_count = 0
        self._sq = {name: np.zeros_like(t.data) for name, t in params.items()}
        self._mom = ({name: np.zeros_like(t.data) for name, t in params.items()}
                     if kind == "adam" else None)

    def step(self) -> None:
        """Apply one update from the accumulated grads, then zero them."""
        self.step_count += 1
        for name, t in self.params.items():
            g = t.grad
            if g is None:
                raise ContractError(f"parameter {name!r} has no gradient")
            if self.kind == "rmsprop":
                s = self._sq[name]
                s *= self.rho
                s += (1.0 - self.rho) * g * g
                t.data -= self.lr * g / (np.sqrt(s) + self.eps)
            else:
                b1, b2 = self.betas
                m, v = self._mom[name], self._sq[name]
                m *= b1
                m += (1.0 - b1) * g
                v *= b2
                v += (1.0 - b2) * g * g
                mhat = m / (1.0 - b1 ** self.step_count)
                vhat = v / (1.0 - b2 ** self.step_count)
                t.data -= self.lr * mhat / (np.sqrt(vhat) + self.eps)
            g[...] = 0.0


def clip_weights(params: ParameterSet, c: float) -> None:
    """Clamp every parameter element into [-c, +c] (Lipschitz enforcement)."""
    if c <= 0:
        raise ContractError(f"clip bound must be positive, got {c}")
    for _, t in params.items():
        np.clip(t.data, -c, c, out=t.data)
