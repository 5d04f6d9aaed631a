"""Query types and the robustness / mutual-error encodings."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from ..composition import CompositeNetwork
from ..nn import Network, argmax_label, forward
from .bounds import Box

FULL = "full"
RUNNER_UP = "runner_up"
MODES = (FULL, RUNNER_UP)


@dataclass(frozen=True, eq=False)
class Postcondition:
    """Disjunction of conjunctions of ``c . y >= 0`` over the logits ``y``.

    ``conjuncts[i]`` is a ``(K_i, output_dim)`` matrix, one row per
    constraint. ``groups`` lists ``(start, stop, label)`` output slices whose
    argmax must differ from ``label`` for a witness to count; this is what
    turns the non-strict constraints into a misclassification check.
    """

    conjuncts: Tuple[np.ndarray, ...]
    groups: Tuple[Tuple[int, int, int], ...] = ()

    def __post_init__(self):
        conj = tuple(np.atleast_2d(np.asarray(c, dtype=np.float64)) for c in self.conjuncts)
        if not conj:
            raise ValueError("postcondition needs at least one conjunct")
        width = conj[0].shape[1]
        if any(c.shape[1] != width or c.shape[0] == 0 for c in conj):
            raise ValueError("conjuncts must be non-empty and share the output width")
        for start, stop, label in self.groups:
            if not (0 <= start <= start + label < stop <= width):
                raise ValueError(f"group {(start, stop, label)} out of range")
        object.__setattr__(self, "conjuncts", conj)
        object.__setattr__(self, "groups", tuple(tuple(int(v) for v in g) for g in self.groups))

    @property
    def output_dim(self) -> int:
        return self.conjuncts[0].shape[1]

    def satisfied_by(self, y) -> bool:
        y = np.asarray(y, dtype=np.float64)
        for start, stop, label in self.groups:
            if argmax_label(y[start:stop]) == label:
                return False
        return any(bool(np.all(C @ y >= 0.0)) for C in self.conjuncts)


@dataclass
class Verdict:
    status: str  # "SAT" | "UNSAT" | "TIMEOUT"
    witness: Optional[np.ndarray] = None
    nodes: int = 0
    lp_calls: int = 0
    wall_time: float = 0.0
    degenerate: int = 0

    @property
    def is_sat(self) -> bool:
        return self.status == "SAT"


def validate_witness(net: Network, box: Box, post: Postcondition, x) -> bool:
    """Exact re-check of a candidate witness: inside the box and a postcondition hit."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.input_dim,) or not box.contains(x):
        return False
    return post.satisfied_by(forward(net, x)[-1])


def _as_network(target: Union[Network, CompositeNetwork]) -> Network:
    return target.network if isinstance(target, CompositeNetwork) else target


def runner_up(y, label: int) -> int:
    y = np.asarray(y, dtype=np.float64).copy()
    y[label] = -np.inf
    return argmax_label(y)


def _diff_row(width: int, i: int, l: int) -> np.ndarray:
    row = np.zeros(width)
    row[i] += 1.0
    row[l] -= 1.0
    return row


def encode_robustness_query(target: Union[Network, CompositeNetwork], x0, eps: float, label: int,
                            mode: str = FULL, runner: Optional[int] = None,
                            clip: bool = False) -> Tuple[Box, Postcondition]:
    """Box around ``x0`` and the "some other label scores at least as high" postcondition."""
    net = _as_network(target)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    y0 = forward(net, x0)[-1]
    if argmax_label(y0) != label:
        raise ValueError("x0 is not classified as the given label; query would be vacuous")
    r = net.output_dim
    if mode == RUNNER_UP:
        ru = runner_up(y0, label) if runner is None else int(runner)
        conj = (_diff_row(r, ru, label)[None, :],)
    else:
        conj = tuple(_diff_row(r, i, label)[None, :] for i in range(r) if i != label)
    return Box.ball(x0, eps, clip), Postcondition(conj, ((0, r, label),))


def encode_mutual_error_query(composite: CompositeNetwork, x0, eps: float, label: int,
                              mode: str = FULL, clip: bool = False) -> Tuple[Box, Postcondition]:
    """Every member slice of a side-by-side composite must move off ``label``.

    Full mode cross-distributes the per-member disjunctions into DNF; runner-up
    mode keeps one constraint per member against that member's own runner-up.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    if composite.aggregation != "side_by_side":
        raise ValueError("mutual-error queries need a side-by-side composite")
    net = composite.network
    y0 = forward(net, x0)[-1]
    width = net.output_dim
    per_member = []
    groups = []
    for start, stop in composite.slices:
        ys = y0[start:stop]
        if argmax_label(ys) != label:
            raise ValueError(f"member slice {start}:{stop} does not classify x0 as {label}")
        groups.append((start, stop, label))
        if mode == RUNNER_UP:
            others = [runner_up(ys, label)]
        else:
            others = [i for i in range(stop - start) if i != label]
        per_member.append([_diff_row(width, start + i, start + label) for i in others])
    conj = tuple(np.vstack(rows) for rows in itertools.product(*per_member))
    return Box.ball(x0, eps, clip), Postcondition(conj, tuple(groups))
