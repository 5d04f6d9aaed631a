"""Shared generators for the test-suite."""
from __future__ import annotations

import numpy as np

from ensverify.composition import compose_side_by_side
from ensverify.nn import Affine, Network, classify, forward, random_network
from ensverify.verifier import Postcondition, encode_mutual_error_query, encode_robustness_query
from ensverify.verifier.bounds import Box


def fuzz_pair(rng: np.random.Generator, max_relus: int = 10):
    """Two random nets that agree at a random ``x0``; returns (members, x0, label, eps)."""
    d = int(rng.integers(1, 5))
    r = int(rng.integers(2, 5))
    members = [random_network(rng, [d, int(rng.integers(1, max_relus // 2 + 1)), r]) for _ in range(2)]
    x0 = rng.uniform(-1, 1, d)
    label = classify(members[0], x0)
    # shift the second member's label bias so both agree at x0
    last = members[1].layers[-1]
    out1 = forward(members[1], x0)[-1]
    bias = np.array(last.bias)
    bias[label] += max(0.0, out1.max() - out1[label]) + 0.1
    members[1] = Network(members[1].layers[:-1] + (Affine(last.weights, bias),), d)
    return members, x0, label, float(rng.uniform(0.05, 1.0))


def fuzz_instance(rng: np.random.Generator, max_relus: int = 10):
    """A random (target, box, postcondition) triple with at most ``max_relus`` ReLUs.

    Three flavours: a robustness query, a pair mutual-error query and a raw
    postcondition with random constraint rows (no misclassification groups).
    """
    kind = rng.integers(3)
    if kind == 1:
        members, x0, label, eps = fuzz_pair(rng, max_relus)
        target = compose_side_by_side(members)
        mode = "full" if rng.random() < 0.5 else "runner_up"
        box, post = encode_mutual_error_query(target, x0, eps, label, mode)
        return target, box, post
    d = int(rng.integers(1, 5))
    r = int(rng.integers(2, 5))
    depth = int(rng.integers(1, 3))
    widths = [d]
    budget = max_relus
    for i in range(depth):
        h = int(rng.integers(1, max(2, budget // (depth - i)) + 1))
        h = min(h, budget - (depth - i - 1))
        widths.append(max(1, h))
        budget -= widths[-1]
    widths.append(r)
    net = random_network(rng, widths)
    x0 = rng.uniform(-1, 1, d)
    eps = float(rng.uniform(0.05, 1.0))
    if kind == 0:
        mode = "full" if rng.random() < 0.5 else "runner_up"
        box, post = encode_robustness_query(net, x0, eps, classify(net, x0), mode)
        return net, box, post
    lo = rng.uniform(-1, 0.5, d)
    box = Box(lo, lo + rng.uniform(0.0, 1.5, d))
    conj = tuple(rng.normal(size=(int(rng.integers(1, 3)), r)) for _ in range(int(rng.integers(1, 3))))
    return net, box, Postcondition(conj)
