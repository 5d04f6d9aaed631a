"""Interval and symbolic (back-substituted linear) bounds for ReLU networks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from ..nn import Affine, Network


@dataclass(frozen=True)
class Box:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=np.float64).ravel()
        hi = np.asarray(self.upper, dtype=np.float64).ravel()
        if lo.shape != hi.shape:
            raise ValueError("box bounds differ in length")
        if np.any(lo > hi):
            raise ValueError("box lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def ball(cls, center, eps: float, clip: bool = False) -> "Box":
        c = np.asarray(center, dtype=np.float64)
        lo, hi = c - eps, c + eps
        if clip:
            lo, hi = np.clip(lo, 0.0, 1.0), np.clip(hi, 0.0, 1.0)
        return cls(lo, hi)

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    def contains(self, x) -> bool:
        x = np.asarray(x)
        return bool(np.all(x >= self.lower) and np.all(x <= self.upper))


def _affine_interval(W, b, lo, hi):
    # centre/radius form: a zero-width box reproduces W @ x + b exactly
    mid = W @ (0.5 * (lo + hi)) + b
    rad = np.abs(W) @ (0.5 * (hi - lo))
    return mid - rad, mid + rad


def interval_bounds(net: Network, box: Box) -> List[Tuple[np.ndarray, np.ndarray]]:
    """Interval bounds for every trace entry of ``net`` (input first)."""
    if box.dim != net.input_dim:
        raise ValueError("box dimension does not match the network input")
    lo, hi = box.lower, box.upper
    out = [(lo, hi)]
    for layer in net.layers:
        if isinstance(layer, Affine):
            lo, hi = _affine_interval(layer.weights, layer.bias, lo, hi)
        else:
            lo, hi = np.maximum(lo, 0.0), np.maximum(hi, 0.0)
        out.append((lo, hi))
    return out


# ---------------------------------------------------------------------------
# normalised form: x -> (W1,b1) -> relu -> ... -> (WH,bH) -> relu -> (Wout,bout)


@dataclass(frozen=True, eq=False)
class ReluChain:
    """A network rewritten as alternating affine maps and ReLU layers.

    Consecutive affine layers are multiplied out; ``hidden[h]`` produces the
    pre-activations of ReLU layer ``h``.
    """

    hidden: Tuple[Tuple[np.ndarray, np.ndarray], ...]
    out: Tuple[np.ndarray, np.ndarray]
    input_dim: int

    @property
    def widths(self) -> List[int]:
        return [W.shape[0] for W, _ in self.hidden]

    @property
    def relu_count(self) -> int:
        return sum(self.widths)

    def offsets(self) -> List[int]:
        off, acc = [], 0
        for w in self.widths:
            off.append(acc)
            acc += w
        return off


def to_chain(net: Network) -> ReluChain:
    dim = net.input_dim
    W, b = np.eye(dim), np.zeros(dim)
    hidden = []
    pending_identity = True
    after_relu = False
    for layer in net.layers:
        if isinstance(layer, Affine):
            W, b = layer.weights @ W, layer.weights @ b + layer.bias
            pending_identity = False
        else:
            if pending_identity and after_relu:
                continue  # relu(relu(v)) == relu(v)
            hidden.append((W, b))
            W, b = np.eye(W.shape[0]), np.zeros(W.shape[0])
            pending_identity = True
            after_relu = True
    return ReluChain(tuple(hidden), (W, b), net.input_dim)


@dataclass
class ChainBounds:
    """Pre-activation bounds of every ReLU layer plus relaxation slopes."""

    lower: List[np.ndarray]
    upper: List[np.ndarray]
    # a <= up_slope * z + up_icpt,  a >= lo_slope * z
    up_slope: List[np.ndarray]
    up_icpt: List[np.ndarray]
    lo_slope: List[np.ndarray]
    post_lower: List[np.ndarray]
    post_upper: List[np.ndarray]
    infeasible: bool = False


def _relaxation(l, u, phase):
    """Triangle relaxation; ``phase`` is +1 active, -1 inactive, 0 free."""
    active = (l >= 0.0) | (phase > 0)
    inactive = ((u <= 0.0) | (phase < 0)) & ~active
    unstable = ~active & ~inactive
    su = np.where(active, 1.0, 0.0)
    tu = np.zeros_like(l)
    sl = np.where(active, 1.0, 0.0)
    if np.any(unstable):
        lu, uu = l[unstable], u[unstable]
        s = uu / (uu - lu)
        su[unstable] = s
        tu[unstable] = -s * lu
        sl[unstable] = np.where(uu > -lu, 1.0, 0.0)
    return su, tu, sl


def _backsub(chain: ReluChain, cb: ChainBounds, h: int, Lam: np.ndarray, const: np.ndarray,
             upper: bool) -> Tuple[np.ndarray, np.ndarray]:
    """Push a linear form over the post-activations of layer ``h`` back to the input.

    ``h == -1`` means the form is already over the input. Returns the input
    coefficients and constant of a sound upper (or lower) bounding function.
    """
    Lam = Lam.copy()
    const = const.copy()
    for k in range(h, -1, -1):
        pos, neg = np.maximum(Lam, 0.0), np.minimum(Lam, 0.0)
        su, tu, sl = cb.up_slope[k], cb.up_icpt[k], cb.lo_slope[k]
        if upper:
            const = const + pos @ tu
            Lz = pos * su + neg * sl
        else:
            const = const + neg @ tu
            Lz = pos * sl + neg * su
        W, b = chain.hidden[k]
        const = const + Lz @ b
        Lam = Lz @ W
    return Lam, const


def _concretize(Lam, const, lo, hi, upper: bool):
    pos, neg = np.maximum(Lam, 0.0), np.minimum(Lam, 0.0)
    if upper:
        return pos @ hi + neg @ lo + const
    return pos @ lo + neg @ hi + const


def chain_bounds(chain: ReluChain, box: Box, phases: Optional[np.ndarray] = None,
                 symbolic: bool = True) -> ChainBounds:
    """Bounds for every ReLU pre-activation under optional fixed phases.

    ``phases`` holds +1/-1/0 per ReLU (layer-major). Interval and symbolic
    bounds are intersected; a phase contradicting the bounds marks the result
    infeasible.
    """
    if phases is None:
        phases = np.zeros(chain.relu_count, dtype=np.int8)
    cb = ChainBounds([], [], [], [], [], [], [])
    lo_a, hi_a = box.lower, box.upper
    offs = chain.offsets()
    for h, (W, b) in enumerate(chain.hidden):
        l, u = _affine_interval(W, b, lo_a, hi_a)
        if symbolic and h > 0:
            Lu, cu = _backsub(chain, cb, h - 1, W, b, upper=True)
            Ll, cl = _backsub(chain, cb, h - 1, W, b, upper=False)
            u = np.minimum(u, _concretize(Lu, cu, box.lower, box.upper, True))
            l = np.maximum(l, _concretize(Ll, cl, box.lower, box.upper, False))
        ph = phases[offs[h]:offs[h] + W.shape[0]]
        l = np.where(ph > 0, np.maximum(l, 0.0), l)
        u = np.where(ph < 0, np.minimum(u, 0.0), u)
        if np.any(l > u):
            cb.infeasible = True
            u = np.maximum(u, l)
        su, tu, sl = _relaxation(l, u, ph)
        cb.lower.append(l)
        cb.upper.append(u)
        cb.up_slope.append(su)
        cb.up_icpt.append(tu)
        cb.lo_slope.append(sl)
        act = (l >= 0.0) | (ph > 0)
        ina = ((u <= 0.0) | (ph < 0)) & ~act
        lo_a = np.where(ina, 0.0, np.maximum(l, 0.0))
        hi_a = np.where(ina, 0.0, np.maximum(u, 0.0))
        cb.post_lower.append(lo_a)
        cb.post_upper.append(hi_a)
    return cb


def output_form_bounds(chain: ReluChain, cb: ChainBounds, box: Box, C: np.ndarray,
                       symbolic: bool = True) -> Tuple[np.ndarray, np.ndarray]:
    """Lower and upper bounds of ``C @ y`` over the box, one per row of ``C``."""
    Wo, bo = chain.out
    Lam = C @ Wo
    const = C @ bo
    H = len(chain.hidden)
    # interval part
    if H:
        lo_a, hi_a = cb.post_lower[-1], cb.post_upper[-1]
    else:
        lo_a, hi_a = box.lower, box.upper
    lo = _concretize(Lam, const, lo_a, hi_a, False)
    hi = _concretize(Lam, const, lo_a, hi_a, True)
    if symbolic and H:
        Lu, cu = _backsub(chain, cb, H - 1, Lam, const, upper=True)
        Ll, cl = _backsub(chain, cb, H - 1, Lam, const, upper=False)
        hi = np.minimum(hi, _concretize(Lu, cu, box.lower, box.upper, True))
        lo = np.maximum(lo, _concretize(Ll, cl, box.lower, box.upper, False))
    return lo, hi


@dataclass
class SymbolicBounds:
    """Per-layer linear bounding functions of the pre-activations in terms of the input.

    ``lower_fn[h] = (A, c)`` means ``z_h >= A @ x + c`` on the box.
    """

    lower_fn: List[Tuple[np.ndarray, np.ndarray]]
    upper_fn: List[Tuple[np.ndarray, np.ndarray]]
    lower: List[np.ndarray]
    upper: List[np.ndarray]
    output_lower: np.ndarray
    output_upper: np.ndarray


def symbolic_bounds(net: Network, box: Box) -> SymbolicBounds:
    """Symbolic bounds for each ReLU layer's pre-activations and for the logits.

    Concretised intervals are intersected with plain interval bounds.
    """
    if box.dim != net.input_dim:
        raise ValueError("box dimension does not match the network input")
    chain = to_chain(net)
    cb = chain_bounds(chain, box)
    lower_fn, upper_fn = [], []
    for h, (W, b) in enumerate(chain.hidden):
        upper_fn.append(_backsub(chain, cb, h - 1, W, b, upper=True))
        lower_fn.append(_backsub(chain, cb, h - 1, W, b, upper=False))
    r = chain.out[0].shape[0]
    olo, ohi = output_form_bounds(chain, cb, box, np.eye(r))
    return SymbolicBounds(lower_fn, upper_fn, cb.lower, cb.upper, olo, ohi)


def relu_states(cb: ChainBounds, phases: np.ndarray) -> Dict[str, np.ndarray]:
    """Boolean masks (layer-major, concatenated) of active/inactive/unstable ReLUs."""
    l = np.concatenate(cb.lower) if cb.lower else np.zeros(0)
    u = np.concatenate(cb.upper) if cb.upper else np.zeros(0)
    active = (l >= 0.0) | (phases > 0)
    inactive = ((u <= 0.0) | (phases < 0)) & ~active
    return {"active": active, "inactive": inactive, "unstable": ~active & ~inactive,
            "lower": l, "upper": u}
