"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import TrainingError


@dataclass
class AdamState:
    """Step counter, hyperparameters and moment accumulators.

    ``m[p]`` and ``v[p]`` are views shaped like each parameter into two flat
    buffers, so one update touches every parameter with a handful of numpy
    calls.
    """

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    _flat: tuple = field(default=None, repr=False)

    def _layout(self, params):
        key = tuple(id(p) for p in params)
        if self._flat is None or self._flat[0] != key:
            sizes = [p.value.size for p in params]
            edges = np.concatenate([[0], np.cumsum(sizes)])
            m_flat, v_flat = np.zeros(edges[-1]), np.zeros(edges[-1])
            for p, a, b in zip(params, edges[:-1], edges[1:]):
                if p in self.m:
                    m_flat[a:b] = self.m[p].ravel()
                    v_flat[a:b] = self.v[p].ravel()
                self.m[p] = m_flat[a:b].reshape(p.value.shape)
                self.v[p] = v_flat[a:b].reshape(p.value.shape)
            self._flat = (key, edges, m_flat, v_flat)
        return self._flat[1:]


def adam_step(state: AdamState, params, grads):
    """Apply one in-place Adam update to ``params`` using ``grads[param]``.

    Raises :class:`TrainingError` if any gradient is non-finite; nothing is
    modified in that case.
    """
    params = list(params)
    step = state.step + 1
    g = np.concatenate([np.ravel(grads[p]) for p in params])
    if not np.all(np.isfinite(g)):
        bad = next(p for p in params if not np.all(np.isfinite(grads[p])))
        raise TrainingError(f"non-finite gradient for {bad.name or 'parameter'}", step)
    edges, m, v = state._layout(params)
    state.step = step
    m *= state.beta1
    m += (1.0 - state.beta1) * g
    v *= state.beta2
    v += (1.0 - state.beta2) * (g * g)
    update = (state.lr / (1.0 - state.beta1 ** step)) * m
    update /= np.sqrt(v / (1.0 - state.beta2 ** step)) + state.eps
    for p, a, b in zip(params, edges[:-1], edges[1:]):
        p.value -= update[a:b].reshape(p.value.shape)
    return params
