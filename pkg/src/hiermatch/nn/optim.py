from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


def scheduled_lr(lr0: float, epoch: int, halve_every: int = 10) -> float:
    """Step schedule: the rate halves every ``halve_every`` epochs."""
    return lr0 * 0.5 ** (epoch // halve_every)


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    epoch: int,
) -> Dict[str, np.ndarray]:
    """One bias-corrected Adam update at the scheduled rate for ``epoch``.

    Parameters without a gradient entry are left untouched.  Returns a new
    parameter dict; ``state`` is updated in place.
    """
    state.step += 1
    rate = scheduled_lr(lr, epoch)
    c1 = 1.0 - BETA1**state.step
    c2 = 1.0 - BETA2**state.step
    out = dict(params)
    for name, g in grads.items():
        m = state.m.get(name, np.zeros_like(g))
        v = state.v.get(name, np.zeros_like(g))
        m = BETA1 * m + (1.0 - BETA1) * g
        v = BETA2 * v + (1.0 - BETA2) * g * g
        state.m[name], state.v[name] = m, v
        out[name] = params[name] - rate * (m / c1) / (np.sqrt(v / c2) + EPS)
    return out
