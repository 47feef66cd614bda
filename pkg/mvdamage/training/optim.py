import logging
from typing import Dict, Iterable, List, Optional

import numpy as np

from mvdamage.models import Module
from mvdamage.tensor import Parameter

from .schema import TrainingError

logger = logging.getLogger(__name__)


class AdamState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    t: int

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.m = {}
        self.v = {}
        self.t = 0

    def moments(self, param: Parameter):
        key = param.name or id(param)
        if key not in self.m:
            self.m[key] = np.zeros_like(param.data)
            self.v[key] = np.zeros_like(param.data)
        return self.m[key], self.v[key]


def adam_step(params: Iterable[Parameter], state: AdamState, lr: float):
    """One bias-corrected Adam update from each parameter's .grad; frozen
    parameters and their moments are left untouched"""
    params = list(params)
    for param in params:
        if param.frozen:
            continue
        if param.grad is None or param.grad.shape != param.shape:
            raise TrainingError(f"Gradient of {param.name} does not match its value")
        if not np.all(np.isfinite(param.grad)):
            raise TrainingError(f"Non-finite gradient in {param.name}, aborting run")

    state.t += 1
    bias1 = 1.0 - state.beta1 ** state.t
    bias2 = 1.0 - state.beta2 ** state.t

    for param in params:
        if param.frozen:
            state.moments(param)
            continue

        g = param.grad
        m, v = state.moments(param)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)

        m_hat = m / bias1
        v_hat = v / bias2
        update = lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        param.data = (param.data - update).astype(param.dtype, copy=False)


class Adam:
    """Adam over a model's parameters at a fixed learning rate"""

    def __init__(self, model: Module, lr: float, state: Optional[AdamState] = None):
        self.model = model
        self.lr = lr
        self.state = state or AdamState()
        self.params: List[Parameter] = list(model.parameters())

    def zero_grad(self):
        self.model.zero_grad()

    def step(self):
        adam_step(self.params, self.state, self.lr)
