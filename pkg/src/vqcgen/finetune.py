"""Continuous gate-parameter optimization of a fixed compiled structure."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .circuits import CircuitDag
from .nn import AdamState, adam_update
from .simulator import lhst_cost, lhst_cost_and_grad


class FineTuneResult(NamedTuple):
    theta: np.ndarray
    loss: float
    steps: int  # gradient evaluations summed over restarts


@dataclass(frozen=True)
class FineTuneConfig:
    max_steps: int = 200
    lr: float = 0.05
    restarts: int = 3
    tol: float = 1e-7  # stop when the per-step loss change falls below this
    seed: int = 0

    def __post_init__(self):
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.tol <= 0:
            raise ValueError("tolerance must be > 0")


def fine_tune(comp: CircuitDag, target: CircuitDag,
              config: FineTuneConfig) -> FineTuneResult:
    """Best (params, loss) over seeded random restarts of Adam on the LHST cost.

    The returned loss is the lowest value observed at any evaluated point of
    any restart, and the params are the ones it was observed at.
    """
    n_params = len(comp.param_values)
    tparams = target.param_values
    if n_params == 0:
        return FineTuneResult(np.zeros(0), lhst_cost(target, tparams, comp, ()), 0)
    rng = np.random.Generator(np.random.PCG64(config.seed))
    adam = AdamState(lr=config.lr)
    best_loss = math.inf
    best_theta = None
    total_steps = 0
    for _ in range(config.restarts):
        theta = rng.uniform(0.0, 2.0 * math.pi, n_params)
        m = np.zeros(n_params)
        v = np.zeros(n_params)
        prev = math.inf
        for step in range(1, config.max_steps + 1):
            loss, grad = lhst_cost_and_grad(target, tparams, comp, theta)
            total_steps += 1
            if loss < best_loss:
                best_loss = loss
                best_theta = theta.copy()
            if abs(prev - loss) < config.tol:
                break
            prev = loss
            adam_update(theta, grad, m, v, step, adam)
        final = lhst_cost(target, tparams, comp, theta)
        if final < best_loss:
            best_loss = final
            best_theta = theta.copy()
    return FineTuneResult(best_theta, float(best_loss), total_steps)
