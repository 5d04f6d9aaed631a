"""Robust accuracy of averaged ensembles, backend comparison and report files."""
from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .composition import compose_average_ensemble
from .data import Dataset
from .nn import Network, classify
from .scoring import VERIFIER, MutualErrorTable, PairQueryEngine
from .verifier import DEFAULT_TIMEOUT, FULL, RUNNER_UP, encode_robustness_query, solve


@dataclass
class RobustAccuracyReport:
    ensemble_id: str
    eps_list: List[float]
    point_ids: List[int]
    counts: Dict[float, Dict[str, int]] = field(default_factory=dict)
    # per point: "UNSAT" robust, "SAT" not robust, "TIMEOUT", per eps
    verdicts: Dict[float, List[str]] = field(default_factory=dict)
    misclassified: List[int] = field(default_factory=list)

    def fraction(self, eps: float) -> float:
        c = self.counts[float(eps)]
        decided = c["robust"] + c["non_robust"]
        return c["robust"] / decided if decided else float("nan")

    def overall(self) -> float:
        robust = sum(c["robust"] for c in self.counts.values())
        decided = robust + sum(c["non_robust"] for c in self.counts.values())
        return robust / decided if decided else float("nan")

    def timeouts(self) -> int:
        return sum(c["timeout"] for c in self.counts.values())


def sample_points(test: Dataset, n: int, seed: int) -> np.ndarray:
    """Seeded sample of test indices, no label or agreement filtering."""
    if n > len(test):
        raise ValueError(f"cannot sample {n} of {len(test)} test points")
    return np.sort(np.random.default_rng(seed).choice(len(test), size=n, replace=False))


def robust_accuracy(members: Sequence[Network], test: Dataset, point_ids: Sequence[int],
                    eps_list: Sequence[float], mode: str = RUNNER_UP,
                    timeout: float = DEFAULT_TIMEOUT, ensemble_id: str = "ensemble",
                    clip: bool = False) -> RobustAccuracyReport:
    """Verify the averaged ensemble around each sampled point for every eps.

    Points the ensemble already misclassifies count as non-robust and are
    listed in ``misclassified``.
    """
    comp = compose_average_ensemble(list(members))
    eps_list = [float(e) for e in eps_list]
    rep = RobustAccuracyReport(ensemble_id, eps_list, [int(p) for p in point_ids])
    for eps in eps_list:
        rep.counts[eps] = {"robust": 0, "non_robust": 0, "timeout": 0}
        rep.verdicts[eps] = []
    for p in rep.point_ids:
        x, label = test.images[p], int(test.labels[p])
        wrong = classify(comp.network, x) != label
        if wrong:
            rep.misclassified.append(p)
        for eps in eps_list:
            if wrong:
                status = "SAT"
            else:
                box, post = encode_robustness_query(comp, x, eps, label, mode, clip=clip)
                status = solve(comp, box, post, timeout).status
            rep.verdicts[eps].append(status)
            key = {"UNSAT": "robust", "SAT": "non_robust", "TIMEOUT": "timeout"}[status]
            rep.counts[eps][key] += 1
    return rep


def eps_monotonicity_violations(rep: RobustAccuracyReport) -> List[str]:
    """Decided points that are robust at some eps but not at a smaller one."""
    order = sorted(rep.eps_list)
    bad = []
    for i, p in enumerate(rep.point_ids):
        for small, large in itertools.combinations(order, 2):
            vs, vl = rep.verdicts[small][i], rep.verdicts[large][i]
            if vl == "UNSAT" and vs == "SAT":
                bad.append(f"point {p}: UNSAT at {large} but SAT at {small}")
    return bad


# ---------------------------------------------------------------------------
# backend comparison


@dataclass
class BackendComparison:
    sat_totals: Dict[str, int]
    timeouts: Dict[str, int]
    query_count: int
    violations: List[str]
    statuses: Dict[str, Dict[tuple, str]]


def compare_backends(engines: Dict[str, PairQueryEngine], members: Sequence[int],
                     eps_list: Sequence[float]) -> BackendComparison:
    """Run the same pair queries through every engine and audit attack SAT => verifier SAT."""
    pairs = list(itertools.combinations(sorted(members), 2))
    statuses: Dict[str, Dict[tuple, str]] = {}
    for name, eng in engines.items():
        eng.run(pairs, eps_list)
        m = len(eng.agreement)
        statuses[name] = {(a, b, p, float(e)): eng.status(a, b, p, e)
                          for a, b in pairs for e in eps_list for p in range(m)}
    violations = []
    if VERIFIER in statuses:
        ver = statuses[VERIFIER]
        for name, st in statuses.items():
            if name == VERIFIER:
                continue
            for q, s in st.items():
                if s == "SAT" and ver[q] == "UNSAT":
                    violations.append(f"{name} found a mutual error at {q} the verifier ruled out")
    n = len(next(iter(statuses.values()))) if statuses else 0
    return BackendComparison(
        {k: sum(v == "SAT" for v in st.values()) for k, st in statuses.items()},
        {k: sum(v == "TIMEOUT" for v in st.values()) for k, st in statuses.items()},
        n, violations, statuses)


# ---------------------------------------------------------------------------
# report files

SERIES_COLUMNS = ["ensemble_id", "eps", "robust", "non_robust", "timeout"]
HISTORY_COLUMNS = ["step", "removed", "inserted", "us_before", "us_after", "joint_before", "joint_after",
                   "timeouts"]


def write_series(reports: Sequence[RobustAccuracyReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SERIES_COLUMNS)
        for rep in reports:
            for eps in rep.eps_list:
                c = rep.counts[eps]
                w.writerow([rep.ensemble_id, repr(eps), c["robust"], c["non_robust"], c["timeout"]])


def read_series(path) -> List[dict]:
    with open(path, newline="") as fh:
        return [{"ensemble_id": r["ensemble_id"], "eps": float(r["eps"]), "robust": int(r["robust"]),
                 "non_robust": int(r["non_robust"]), "timeout": int(r["timeout"])}
                for r in csv.DictReader(fh)]


def write_history(history, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HISTORY_COLUMNS)
        for i, h in enumerate(history):
            w.writerow([i, h.removed, h.inserted, repr(h.us_before), repr(h.us_after),
                        h.joint_before, h.joint_after, h.timeouts])


def emit_report(out_dir, tables: Sequence[MutualErrorTable] = (), reports: Sequence[RobustAccuracyReport] = (),
                history=(), comparison: Optional[BackendComparison] = None, plot: bool = False,
                extra: Optional[dict] = None) -> Path:
    """Write score tables, robust-accuracy series, swap history and ``summary.txt``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    for i, t in enumerate(tables):
        t.to_csv(out / f"scores_{i:02d}.csv")
    if reports:
        write_series(reports, out / "robust_accuracy.csv")
    write_history(history, out / "history.csv")
    lines = []
    if history:
        for h in history:
            lines.append(f"swap N{h.removed} -> N{h.inserted}: US {h.us_before:.4f} -> {h.us_after:.4f}, "
                         f"joint errors {h.joint_before} -> {h.joint_after}")
    else:
        lines.append("no swaps accepted")
    for rep in reports:
        parts = ", ".join(f"eps={e}: {rep.fraction(e):.3f}" for e in rep.eps_list)
        lines.append(f"robust accuracy [{rep.ensemble_id}] {parts} (timeouts: {rep.timeouts()})")
    if comparison is not None:
        for k, v in comparison.sat_totals.items():
            lines.append(f"backend {k}: {v} SAT of {comparison.query_count} ({comparison.timeouts[k]} timeouts)")
        lines.append(f"subset audit violations: {len(comparison.violations)}")
    if extra:
        lines += [f"{k}: {v}" for k, v in extra.items()]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    if plot and reports:
        _plot(reports, out / "robust_accuracy.png")
    return out


def _plot(reports, path) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    eps = reports[0].eps_list
    width = 0.8 / len(reports)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    for i, rep in enumerate(reports):
        xs = np.arange(len(eps)) + i * width
        ax.bar(xs, [rep.fraction(e) for e in eps], width, label=rep.ensemble_id)
    ax.set_xticks(np.arange(len(eps)) + 0.4 - width / 2)
    ax.set_xticklabels([str(e) for e in eps])
    ax.set_xlabel("eps")
    ax.set_ylabel("robust accuracy")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def report_to_dict(rep: RobustAccuracyReport) -> dict:
    return {"ensemble_id": rep.ensemble_id, "eps_list": rep.eps_list, "point_ids": rep.point_ids,
            "counts": {repr(k): v for k, v in rep.counts.items()},
            "verdicts": {repr(k): v for k, v in rep.verdicts.items()},
            "misclassified": rep.misclassified}


def report_from_dict(d: dict) -> RobustAccuracyReport:
    rep = RobustAccuracyReport(d["ensemble_id"], [float(e) for e in d["eps_list"]], d["point_ids"])
    rep.counts = {float(k): v for k, v in d["counts"].items()}
    rep.verdicts = {float(k): v for k, v in d["verdicts"].items()}
    rep.misclassified = d["misclassified"]
    return rep


def dump_json(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
