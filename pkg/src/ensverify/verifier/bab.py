"""Complete branch-and-bound over ReLU phases with an LP relaxation at every node."""
from __future__ import annotations

import time
from typing import List, Optional, Union

import numpy as np

from ..composition import CompositeNetwork
from ..nn import Network
from .bounds import Box, ChainBounds, ReluChain, chain_bounds, output_form_bounds, relu_states, to_chain
from .query import Postcondition, Verdict, _as_network, validate_witness
from .simplex import DegenerateLP, FEAS_TOL, lp_solve

DEFAULT_TIMEOUT = 60.0


def _build_lp(chain: ReluChain, cb: ChainBounds, box: Box, phases: np.ndarray, C: np.ndarray,
              t_lo: float, t_hi: float):
    """LP over (input, post-activations, margin t): maximise t subject to C y >= t."""
    d = chain.input_dim
    widths = chain.widths
    R = sum(widths)
    nvar = d + R + 1
    t_idx = nvar - 1
    bounds = np.empty((nvar, 2))
    bounds[:d, 0], bounds[:d, 1] = box.lower, box.upper
    bounds[t_idx] = (t_lo, t_hi)
    ub_rows: List[np.ndarray] = []
    ub_rhs: List[np.ndarray] = []
    eq_rows: List[np.ndarray] = []
    eq_rhs: List[np.ndarray] = []
    prev = slice(0, d)
    off = d
    for h, (W, b) in enumerate(chain.hidden):
        n = W.shape[0]
        cur = np.arange(off, off + n)
        l, u = cb.lower[h], cb.upper[h]
        ph = phases[off - d:off - d + n]
        act = (l >= 0.0) | (ph > 0)
        ina = ((u <= 0.0) | (ph < 0)) & ~act
        uns = ~act & ~ina
        bounds[cur, 0] = cb.post_lower[h]
        bounds[cur, 1] = cb.post_upper[h]
        if np.any(act):
            rows = np.zeros((int(act.sum()), nvar))
            rows[:, prev] = -W[act]
            rows[np.arange(rows.shape[0]), cur[act]] = 1.0
            eq_rows.append(rows)
            eq_rhs.append(b[act])
        sp = ph > 0
        if np.any(sp):  # z >= 0
            rows = np.zeros((int(sp.sum()), nvar))
            rows[:, prev] = -W[sp]
            ub_rows.append(rows)
            ub_rhs.append(b[sp])
        sn = ph < 0
        if np.any(sn):  # z <= 0
            rows = np.zeros((int(sn.sum()), nvar))
            rows[:, prev] = W[sn]
            ub_rows.append(rows)
            ub_rhs.append(-b[sn])
        if np.any(uns):
            k = int(uns.sum())
            Wu, bu, lu, uu = W[uns], b[uns], l[uns], u[uns]
            s = uu / (uu - lu)
            lower_rows = np.zeros((k, nvar))  # z - a <= 0
            lower_rows[:, prev] = Wu
            lower_rows[np.arange(k), cur[uns]] = -1.0
            upper_rows = np.zeros((k, nvar))  # a - s z <= -s l
            upper_rows[:, prev] = -s[:, None] * Wu
            upper_rows[np.arange(k), cur[uns]] = 1.0
            ub_rows += [lower_rows, upper_rows]
            ub_rhs += [-bu, s * (bu - lu)]
        prev = slice(off, off + n)
        off += n
    Wo, bo = chain.out
    out_rows = np.zeros((C.shape[0], nvar))
    out_rows[:, prev] = -(C @ Wo)
    out_rows[:, t_idx] = 1.0
    ub_rows.append(out_rows)
    ub_rhs.append(C @ bo)
    A_ub = np.vstack(ub_rows)
    b_ub = np.concatenate(ub_rhs)
    A_eq = np.vstack(eq_rows) if eq_rows else None
    b_eq = np.concatenate(eq_rhs) if eq_rhs else None
    obj = np.zeros(nvar)
    obj[t_idx] = 1.0
    return obj, A_ub, b_ub, A_eq, b_eq, bounds


class _Timeout(Exception):
    pass


def _solve_conjunct(net: Network, chain: ReluChain, box: Box, post: Postcondition, C: np.ndarray,
                    root: ChainBounds, deadline: float, verdict: Verdict) -> Optional[np.ndarray]:
    """Search one conjunct. Returns a validated witness, ``None`` when closed.

    Raises ``_Timeout`` on deadline expiry; leaves with a degenerate LP are
    reported by setting ``verdict.degenerate``.
    """
    R = chain.relu_count
    stack = [np.zeros(R, dtype=np.int8)]
    undecided = False
    while stack:
        if time.monotonic() > deadline:
            raise _Timeout
        phases = stack.pop()
        verdict.nodes += 1
        cb = root if not phases.any() else chain_bounds(chain, box, phases)
        if cb.infeasible:
            continue
        lo, hi = output_form_bounds(chain, cb, box, C)
        if np.min(hi) < 0.0:
            continue
        st = relu_states(cb, phases)
        free = st["unstable"] & (phases == 0)
        try:
            verdict.lp_calls += 1
            obj, A_ub, b_ub, A_eq, b_eq, bnds = _build_lp(
                chain, cb, box, phases, C, float(np.min(lo)) - 1.0, float(np.min(hi)))
            res = lp_solve(obj, A_ub, b_ub, A_eq, b_eq, bnds, maximize=True)
        except DegenerateLP:
            verdict.degenerate += 1
            if not free.any():
                undecided = True
                continue
            res = None
        if res is not None:
            if res.status != "optimal" or res.value < -FEAS_TOL:
                continue
            x = res.x[:chain.input_dim]
            if validate_witness(net, box, post, x):
                return x
        if not free.any():
            continue  # exact LP at a leaf and its optimum does not validate
        width = np.where(free, st["upper"] - st["lower"], -np.inf)
        j = int(np.argmax(width))
        inactive, active = phases.copy(), phases.copy()
        inactive[j], active[j] = -1, 1
        stack.append(inactive)
        stack.append(active)
    if undecided:
        raise _Timeout
    return None


def solve(target: Union[Network, CompositeNetwork], box: Box, post: Postcondition,
          timeout: float = DEFAULT_TIMEOUT) -> Verdict:
    """Decide whether some input in ``box`` satisfies ``post``.

    SAT verdicts carry a witness that has been re-checked by exact forward
    evaluation. TIMEOUT is returned when the wall-clock budget runs out (or a
    leaf LP breaks down numerically, counted in ``Verdict.degenerate``).
    """
    net = _as_network(target)
    if box.dim != net.input_dim:
        raise ValueError("box dimension does not match the network input")
    if post.output_dim != net.output_dim:
        raise ValueError("postcondition width does not match the network output")
    start = time.monotonic()
    deadline = start + timeout
    verdict = Verdict("UNSAT")
    chain = to_chain(net)
    root = chain_bounds(chain, box)
    timed_out = False
    for C in post.conjuncts:
        try:
            w = _solve_conjunct(net, chain, box, post, C, root, deadline, verdict)
        except _Timeout:
            timed_out = True
            if time.monotonic() > deadline:
                break
            continue
        if w is not None:
            verdict.status = "SAT"
            verdict.witness = w
            break
    if timed_out and verdict.status != "SAT":
        verdict.status = "TIMEOUT"
    verdict.wall_time = time.monotonic() - start
    return verdict
