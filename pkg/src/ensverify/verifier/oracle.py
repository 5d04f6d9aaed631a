"""Exhaustive phase-enumeration decision procedure, used to cross-check ``solve``.

Every ReLU phase assignment turns the network into an affine map of the
input; each assignment gets its own exact LP (solved with HiGHS, so the LP
code path is independent of the branch-and-bound simplex).
"""
from __future__ import annotations

import itertools
import time
from typing import Union

import numpy as np
from scipy.optimize import linprog

from ..composition import CompositeNetwork
from ..nn import Affine, Network
from .bounds import Box
from .query import Postcondition, Verdict, _as_network, validate_witness

DEFAULT_RELU_BUDGET = 16


class ReluBudgetExceeded(ValueError):
    pass


def _region_lp(net: Network, box: Box, phases, C: np.ndarray):
    """Maximise min_k C_k y(x) over the cell of ``phases``; returns (value, x) or None."""
    d = net.input_dim
    A, c = np.eye(d), np.zeros(d)  # current vector = A x + c
    rows, rhs = [], []
    k = 0
    for layer in net.layers:
        if isinstance(layer, Affine):
            A, c = layer.weights @ A, layer.weights @ c + layer.bias
            continue
        n = A.shape[0]
        ph = np.asarray(phases[k:k + n])
        k += n
        # active: A x + c >= 0  ->  -A x <= c ; inactive: A x + c <= 0
        sign = np.where(ph, -1.0, 1.0)
        rows.append(sign[:, None] * A)
        rhs.append(-sign * c)
        A = A * ph[:, None]
        c = c * ph
    Y, y0 = C @ A, C @ c
    # variables (x, t): t - Y x <= y0
    m_out = Y.shape[0]
    A_ub = np.vstack([np.hstack([r, np.zeros((r.shape[0], 1))]) for r in rows]
                     + [np.hstack([-Y, np.ones((m_out, 1))])])
    b_ub = np.concatenate(rhs + [y0])
    bounds = [(lo, hi) for lo, hi in zip(box.lower, box.upper)] + [(None, None)]
    obj = np.zeros(d + 1)
    obj[-1] = -1.0
    res = linprog(obj, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs")
    if res.status != 0:
        return None
    x = np.clip(res.x[:d], box.lower, box.upper)
    return -res.fun, x


def oracle_solve(target: Union[Network, CompositeNetwork], box: Box, post: Postcondition,
                 relu_budget: int = DEFAULT_RELU_BUDGET) -> Verdict:
    net = _as_network(target)
    R = net.relu_count
    if R > relu_budget:
        raise ReluBudgetExceeded(f"{R} ReLUs exceeds the oracle budget of {relu_budget}")
    start = time.monotonic()
    verdict = Verdict("UNSAT")
    for C in post.conjuncts:
        for phases in itertools.product((True, False), repeat=R):
            verdict.lp_calls += 1
            verdict.nodes += 1
            sol = _region_lp(net, box, phases, C)
            if sol is None:
                continue
            _, x = sol
            if validate_witness(net, box, post, x):
                verdict.status = "SAT"
                verdict.witness = x
                verdict.wall_time = time.monotonic() - start
                return verdict
    verdict.wall_time = time.monotonic() - start
    return verdict
