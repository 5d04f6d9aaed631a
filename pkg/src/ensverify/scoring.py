"""Agreement points, mutual-error tables and uniqueness scores."""
from __future__ import annotations

import csv
import itertools
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .attacks import KINDS as ATTACK_KINDS
from .attacks import AttackConfig, run_attack
from .composition import compose_side_by_side
from .data import Dataset
from .nn import Network, classify_batch
from .verifier import DEFAULT_TIMEOUT, RUNNER_UP, encode_mutual_error_query, solve

VERIFIER = "verifier"
BACKENDS = (VERIFIER,) + ATTACK_KINDS


class AgreementShortage(RuntimeError):
    def __init__(self, found: int, wanted: int):
        super().__init__(f"only {found} agreement points qualify, {wanted} requested")
        self.found = found
        self.wanted = wanted


@dataclass(frozen=True, eq=False)
class AgreementSet:
    points: np.ndarray  # (m, d)
    labels: np.ndarray  # consensus labels
    indices: np.ndarray  # positions in the source dataset
    label_filter: Optional[int] = None

    def __len__(self) -> int:
        return int(self.labels.shape[0])


def find_agreement_points(pool: Sequence[Network], validation: Dataset, m: int,
                          label_filter: Optional[int] = None, require_correct: bool = True) -> AgreementSet:
    """First ``m`` validation points (in dataset order) on which every pool member agrees."""
    if m < 1:
        raise ValueError("m must be >= 1")
    preds = np.stack([classify_batch(n, validation.images) for n in pool])
    consensus = preds[0]
    ok = np.all(preds == consensus, axis=0)
    if require_correct:
        ok &= consensus == validation.labels
    if label_filter is not None:
        ok &= consensus == label_filter
    idx = np.flatnonzero(ok)
    if idx.size < m:
        raise AgreementShortage(int(idx.size), m)
    idx = idx[:m]
    return AgreementSet(validation.images[idx].copy(), consensus[idx].copy(), idx, label_filter)


# ---------------------------------------------------------------------------
# query dispatch


def run_pair_query(nets: Sequence[Network], x0, label: int, eps: float, backend: str,
                   mode: str = RUNNER_UP, timeout: float = DEFAULT_TIMEOUT,
                   clip: bool = False, steps: int = 10) -> Tuple[str, Optional[np.ndarray], dict]:
    """One mutual-error query. Returns (status, witness, stats).

    For attack backends "UNSAT" only means the attack failed.
    """
    if backend == VERIFIER:
        comp = compose_side_by_side(list(nets))
        box, post = encode_mutual_error_query(comp, x0, eps, label, mode, clip)
        v = solve(comp, box, post, timeout)
        return v.status, v.witness, {"nodes": v.nodes, "lp_calls": v.lp_calls,
                                      "wall_time": v.wall_time, "degenerate": v.degenerate}
    if backend in ATTACK_KINDS:
        out = run_attack(list(nets), x0, label, AttackConfig(backend, eps, steps, clip))
        return ("SAT" if out.success else "UNSAT"), out.witness, {"iterations": out.iterations_used}
    raise ValueError(f"backend {backend!r} unavailable")


def _run_job(job):
    nets, x0, label, eps, backend, mode, timeout, clip = job
    status, _, _ = run_pair_query(nets, x0, label, eps, backend, mode, timeout, clip)
    return status


def default_workers() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1))


QueryKey = Tuple[int, int, int, float, str, str]  # (i, j, point, eps, mode, backend)


class PairQueryEngine:
    """Runs and caches pairwise mutual-error queries over a fixed pool and agreement set.

    Queries are deterministic, so a verdict is cached by
    ``(i, j, point, eps, mode, backend)``; TIMEOUT verdicts are cached too, to
    keep later decisions consistent with earlier ones.
    """

    def __init__(self, pool: Sequence[Network], agreement: AgreementSet, backend: str = VERIFIER,
                 mode: str = RUNNER_UP, timeout: float = DEFAULT_TIMEOUT, workers: int = 1,
                 clip: bool = False):
        if backend not in BACKENDS:
            raise ValueError(f"backend {backend!r} unavailable")
        self.pool = list(pool)
        self.agreement = agreement
        self.backend = backend
        self.mode = mode
        self.timeout = timeout
        self.workers = workers
        self.clip = clip
        self.cache: Dict[QueryKey, str] = {}
        self.dispatched = 0

    def key(self, i: int, j: int, p: int, eps: float) -> QueryKey:
        a, b = (i, j) if i < j else (j, i)
        return (a, b, p, float(eps), self.mode, self.backend)

    def run(self, pairs: Iterable[Tuple[int, int]], eps_list: Sequence[float]) -> None:
        todo = []
        seen = set()
        for i, j in pairs:
            for eps in eps_list:
                for p in range(len(self.agreement)):
                    k = self.key(i, j, p, eps)
                    if k not in self.cache and k not in seen:
                        seen.add(k)
                        todo.append(k)
        if not todo:
            return
        jobs = [([self.pool[a], self.pool[b]], self.agreement.points[p], int(self.agreement.labels[p]),
                 eps, self.backend, self.mode, self.timeout, self.clip) for a, b, p, eps, _, _ in todo]
        if self.workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=self.workers) as ex:
                results = list(ex.map(_run_job, jobs, chunksize=max(1, len(jobs) // (4 * self.workers))))
        else:
            results = [_run_job(job) for job in jobs]
        self.dispatched += len(jobs)
        self.cache.update(zip(todo, results))

    def status(self, i: int, j: int, p: int, eps: float) -> str:
        return self.cache[self.key(i, j, p, eps)]

    def counts(self, i: int, j: int, eps: float) -> Dict[str, int]:
        self.run([(i, j)], [eps])
        c = {"sat": 0, "unsat": 0, "timeout": 0}
        for p in range(len(self.agreement)):
            c[self.status(i, j, p, eps).lower()] += 1
        return c


# ---------------------------------------------------------------------------
# tables and scores


@dataclass
class MutualErrorTable:
    members: List[int]
    eps_list: List[float]
    m: int
    backend: str
    counts: Dict[Tuple[int, int, float], Dict[str, int]] = field(default_factory=dict)

    def get(self, i: int, j: int, eps: float) -> Dict[str, int]:
        a, b = (i, j) if i < j else (j, i)
        return self.counts[(a, b, float(eps))]

    def pairs(self) -> List[Tuple[int, int]]:
        return list(itertools.combinations(sorted(self.members), 2))

    def timeouts(self) -> int:
        return sum(c["timeout"] for c in self.counts.values())

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["member_a", "member_b", "eps", "sat", "unsat", "timeout", "m", "backend"])
            for (a, b, eps), c in sorted(self.counts.items()):
                w.writerow([a, b, repr(eps), c["sat"], c["unsat"], c["timeout"], self.m, self.backend])

    @classmethod
    def from_csv(cls, path) -> "MutualErrorTable":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if not rows:
            raise ValueError(f"{path}: empty table")
        members = sorted({int(r["member_a"]) for r in rows} | {int(r["member_b"]) for r in rows})
        eps_list = sorted({float(r["eps"]) for r in rows})
        t = cls(members, eps_list, int(rows[0]["m"]), rows[0]["backend"])
        for r in rows:
            t.counts[(int(r["member_a"]), int(r["member_b"]), float(r["eps"]))] = {
                "sat": int(r["sat"]), "unsat": int(r["unsat"]), "timeout": int(r["timeout"])}
        return t


def compute_mutual_error_table(ensemble: Sequence[int], engine: PairQueryEngine,
                               eps_list: Sequence[float]) -> MutualErrorTable:
    """Counts for every unordered member pair and every eps (``C(k,2) * m * |eps|`` queries)."""
    members = list(ensemble)
    pairs = list(itertools.combinations(sorted(members), 2))
    engine.run(pairs, eps_list)
    table = MutualErrorTable(members, [float(e) for e in eps_list], len(engine.agreement), engine.backend)
    for a, b in pairs:
        for eps in eps_list:
            table.counts[(a, b, float(eps))] = engine.counts(a, b, eps)
    return table


def query_count(k: int, m: int, n_eps: int) -> int:
    return k * (k - 1) // 2 * m * n_eps


def me_score(table: MutualErrorTable, pair: Tuple[int, int], eps: float) -> float:
    """Fraction of agreement balls holding a mutual error; timeouts count as none found."""
    return table.get(pair[0], pair[1], eps)["sat"] / table.m


def uniqueness_score(table: MutualErrorTable, member: int, eps: float,
                     members: Optional[Sequence[int]] = None) -> float:
    members = list(table.members if members is None else members)
    if member not in members or len(members) < 2:
        raise ValueError("member must belong to an ensemble of at least two")
    others = [j for j in members if j != member]
    return 1.0 - sum(me_score(table, (member, j), eps) for j in others) / len(others)


def uniqueness_score_avg(table: MutualErrorTable, member: int,
                         members: Optional[Sequence[int]] = None) -> float:
    return float(np.mean([uniqueness_score(table, member, e, members) for e in table.eps_list]))
