"""Sign-gradient attacks that look for inputs fooling several networks at once.

The joint objective is the sum of ELU-squashed per-network margins, so a
network that is already fooled contributes almost nothing to the gradient.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .nn import Network, classify, forward, input_gradient
from .verifier.bounds import Box
from .verifier.query import runner_up

GA1, GA2, GA3 = "ga1", "ga2", "ga3"
KINDS = (GA1, GA2, GA3)


def elu(x):
    """``x`` for ``x >= 0``, ``exp(x) - 1`` otherwise."""
    if np.ndim(x) == 0:
        return float(x) if x >= 0 else math.expm1(x)
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x):
    # derivative at 0 taken from the linear branch
    if np.ndim(x) == 0:
        return 1.0 if x >= 0 else math.exp(x)
    x = np.asarray(x, dtype=np.float64)
    return np.where(x >= 0, 1.0, np.exp(np.minimum(x, 0.0)))


def _margin_functional(net: Network, x, true_label: int, runner: Optional[int]):
    y = forward(net, x)[-1]
    r = runner_up(y, true_label) if runner is None else runner
    c = np.zeros(net.output_dim)
    c[true_label] += 1.0
    c[r] -= 1.0
    return float(c @ y), c


def network_specific_loss(net: Network, x, true_label: int, runner: Optional[int] = None) -> float:
    """``y_true - y_runner``; the runner is fixed when given (targeted), else
    recomputed as the runner-up at ``x`` (untargeted)."""
    return _margin_functional(net, x, true_label, runner)[0]


def regulator_loss(nets: Sequence[Network], x, true_label: int,
                   runners: Optional[Sequence[Optional[int]]] = None) -> float:
    if len(nets) < 2:
        raise ValueError("the joint loss needs at least two networks")
    runners = runners if runners is not None else [None] * len(nets)
    return sum(elu(network_specific_loss(n, x, true_label, r)) for n, r in zip(nets, runners))


def regulator_gradient(nets: Sequence[Network], x, true_label: int,
                       runners: Optional[Sequence[Optional[int]]] = None) -> np.ndarray:
    runners = runners if runners is not None else [None] * len(nets)
    g = np.zeros(nets[0].input_dim)
    for net, r in zip(nets, runners):
        value, c = _margin_functional(net, x, true_label, r)
        g += elu_grad(value) * input_gradient(net, x, c)
    return g


@dataclass(frozen=True)
class AttackConfig:
    kind: str
    eps: float
    steps: int = 10
    clip_domain: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if not self.eps > 0:
            raise ValueError("eps must be positive")
        if self.kind != GA1 and self.steps < 1:
            raise ValueError("iterative attacks need steps >= 1")

    @property
    def step_size(self) -> float:
        return self.eps if self.kind == GA1 else self.eps / self.steps


@dataclass
class AttackOutcome:
    success: bool
    witness: Optional[np.ndarray] = None
    iterations_used: int = 0


def _all_fooled(nets, x, true_label) -> bool:
    return all(classify(n, x) != true_label for n in nets)


def run_attack(nets: Sequence[Network], x0, true_label: int, config: AttackConfig) -> AttackOutcome:
    """Search the eps-ball around ``x0`` for an input every net misclassifies."""
    x0 = np.asarray(x0, dtype=np.float64)
    for n in nets:
        if classify(n, x0) != true_label:
            raise ValueError("every network must classify x0 correctly")
    box = Box.ball(x0, config.eps, config.clip_domain)
    targeted = config.kind in (GA1, GA2)
    runners = [runner_up(forward(n, x0)[-1], true_label) for n in nets] if targeted else None
    iterations = 1 if config.kind == GA1 else config.steps
    alpha = config.step_size
    x = x0.copy()
    for it in range(1, iterations + 1):
        g = regulator_gradient(nets, x, true_label, runners)
        x = np.clip(x - alpha * np.sign(g), box.lower, box.upper)
        if _all_fooled(nets, x, true_label):
            if not box.contains(x):
                raise AssertionError("attack left the eps-ball")
            return AttackOutcome(True, x, it)
    return AttackOutcome(False, None, iterations)
