"""Greedy swap-the-weakest-member ensemble improvement loop."""
from __future__ import annotations

import itertools
import time
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .scoring import MutualErrorTable, PairQueryEngine, compute_mutual_error_table


@dataclass
class SwapRecord:
    removed: int
    inserted: int
    us_before: float
    us_after: float
    joint_before: int
    joint_after: int
    timeouts: int = 0


@dataclass
class EnsembleState:
    members: List[int]
    initial: List[int]
    history: List[SwapRecord] = field(default_factory=list)
    tables: List[MutualErrorTable] = field(default_factory=list)
    stop_reason: str = ""
    audit: List[str] = field(default_factory=list)


def weakest_member(us: Dict[int, float]) -> int:
    """Member with the lowest score; ties go to the lowest index."""
    return min(sorted(us), key=lambda i: us[i])


def _sat_total(engine: PairQueryEngine, member: int, others: Sequence[int], eps_list) -> int:
    return sum(engine.counts(member, j, e)["sat"] for j in others for e in eps_list)


def _us_against(engine: PairQueryEngine, member: int, others: Sequence[int], eps_list) -> Fraction:
    # exact: float averaging can make equal scores compare as unequal
    m = len(engine.agreement)
    return 1 - Fraction(_sat_total(engine, member, others, eps_list), m * len(others) * len(eps_list))


def best_replacement(remaining: Sequence[int], candidates: Sequence[int], engine: PairQueryEngine,
                     eps_list: Sequence[float], incumbent_us: Union[float, Fraction]
                     ) -> Optional[Tuple[int, Fraction]]:
    """Candidate with the highest eps-averaged uniqueness against ``remaining``.

    Returned only if it strictly beats ``incumbent_us``; ties between
    candidates go to the lowest index.
    """
    if set(candidates) & set(remaining):
        raise ValueError("candidates must lie outside the ensemble")
    if not candidates:
        return None
    engine.run([(c, j) for c in candidates for j in remaining], eps_list)
    scored = [(c, _us_against(engine, c, remaining, eps_list)) for c in sorted(candidates)]
    best = max(scored, key=lambda cs: (cs[1], -cs[0]))
    return best if best[1] > Fraction(incumbent_us) else None


def joint_error_count(ensemble: Sequence[int], engine: PairQueryEngine, eps_list: Sequence[float]) -> int:
    """Mutual errors summed over all member pairs, points and eps values."""
    pairs = list(itertools.combinations(sorted(ensemble), 2))
    engine.run(pairs, eps_list)
    return sum(engine.counts(a, b, e)["sat"] for a, b in pairs for e in eps_list)


def iterate_selection(pool_size: int, k: int, engine: PairQueryEngine, eps_list: Sequence[float],
                      max_iters: int = 10, global_timeout: Optional[float] = None,
                      initial: Optional[Sequence[int]] = None) -> EnsembleState:
    """Start from the first ``k`` pool members (or ``initial``) and swap while it helps."""
    if pool_size <= k:
        raise ValueError("the pool must be larger than the ensemble")
    if k < 2:
        raise ValueError("ensembles need at least two members")
    members = list(initial) if initial is not None else list(range(k))
    if len(members) != k or len(set(members)) != k:
        raise ValueError("initial ensemble must hold k distinct members")
    state = EnsembleState(list(members), list(members))
    start = time.monotonic()
    for _ in range(max_iters):
        if global_timeout is not None and time.monotonic() - start > global_timeout:
            state.stop_reason = "timeout"
            return state
        table = compute_mutual_error_table(members, engine, eps_list)
        state.tables.append(table)
        us = {i: _us_against(engine, i, [j for j in members if j != i], eps_list) for i in members}
        weakest = weakest_member(us)
        remaining = [i for i in members if i != weakest]
        candidates = [c for c in range(pool_size) if c not in members]
        found = best_replacement(remaining, candidates, engine, eps_list, us[weakest])
        if found is None:
            state.stop_reason = "converged"
            return state
        cand, cand_us = found
        before = joint_error_count(members, engine, eps_list)
        members = sorted(remaining + [cand])
        after = joint_error_count(members, engine, eps_list)
        touched = [(min(a, b), max(a, b)) for a in (weakest, cand) for b in remaining]
        timeouts = sum(engine.counts(a, b, e)["timeout"] for a, b in touched for e in eps_list)
        if after >= before:
            state.audit.append(
                f"swap {weakest}->{cand}: joint errors {before}->{after} did not decrease"
                f" ({timeouts} timeouts on affected pairs)")
        state.history.append(SwapRecord(weakest, cand, float(us[weakest]), float(cand_us), before, after, timeouts))
        state.members = list(members)
    state.stop_reason = state.stop_reason or "max_iters"
    if max_iters > 0:
        state.tables.append(compute_mutual_error_table(members, engine, eps_list))
    return state
