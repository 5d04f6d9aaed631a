"""Pipeline stages over a run directory.

Each stage reads the manifests written by its predecessors and writes its
own; manifests are sorted-key JSON without timestamps, so re-running a stage
with the same inputs reproduces them byte for byte. Layout::

    <out>/run.cfg
    <out>/data/manifest.json        (+ IDX files when built from digits)
    <out>/pool/manifest.json        (+ net_XX.nn)
    <out>/agreement.json
    <out>/scores/<backend>.csv
    <out>/selection/manifest.json   (+ history.csv, tables/)
    <out>/evaluation/manifest.json  (+ robust_accuracy.csv)
    <out>/report/
"""
from __future__ import annotations

import itertools
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import data as data_mod
from .config import RunConfig, dump_config
from .evaluation import (BackendComparison, compare_backends, emit_report, eps_monotonicity_violations,
                         report_from_dict, report_to_dict, robust_accuracy, sample_points, write_history,
                         write_series)
from .nn import load_network, save_network
from .scoring import (VERIFIER, AgreementSet, MutualErrorTable, PairQueryEngine, compute_mutual_error_table,
                      query_count, run_pair_query)
from .selection import SwapRecord, iterate_selection
from .training import TrainConfig, accuracy, train_pool
from .verifier import FULL

log = logging.getLogger("ensverify")


class StageFailure(RuntimeError):
    """A stage could not run, typically because a predecessor's output is missing."""


def _require(path: Path) -> Path:
    if not path.exists():
        raise StageFailure(f"missing input: {path}")
    return path


def _dump(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _load(path: Path):
    return json.loads(_require(path).read_text())


def write_vector(x, path) -> None:
    Path(path).write_text(" ".join(repr(float(v)) for v in np.asarray(x).ravel()) + "\n")


def read_vector(path) -> np.ndarray:
    try:
        return np.array([float(t) for t in Path(path).read_text().split()], dtype=np.float64)
    except ValueError as exc:
        raise ValueError(f"{path}: malformed vector file") from exc


# ---------------------------------------------------------------------------
# data, pool, agreement


def prepare_data(cfg: RunConfig, out: Path) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.cfg").write_text(dump_config(cfg))
    ddir = out / "data"
    if cfg.digits:
        paths = data_mod.write_digits_idx(ddir)
        source = "digits"
    else:
        paths = {"train_images": cfg.train_images, "train_labels": cfg.train_labels,
                 "test_images": cfg.test_images, "test_labels": cfg.test_labels}
        for key in ("train_images", "train_labels"):
            _require(Path(paths[key]))
        source = "idx"
    man = {"source": source, "val_fraction": cfg.val_fraction, "seed": cfg.seed,
           "downscale": cfg.downscale, **{k: (str(Path(v).resolve()) if v else None) for k, v in paths.items()}}
    splits = load_splits_from(man)
    man["counts"] = {"train": len(splits.train), "validation": len(splits.validation), "test": len(splits.test)}
    man["dim"] = splits.train.dim
    _dump(man, ddir / "manifest.json")
    return man


def load_splits_from(man: dict) -> data_mod.Splits:
    train = data_mod.load_idx(_require(Path(man["train_images"])), _require(Path(man["train_labels"])))
    test = None
    if man.get("test_images"):
        test = data_mod.load_idx(_require(Path(man["test_images"])), _require(Path(man["test_labels"])))
    if man["downscale"] > 1:
        train = data_mod.downscale(train, man["downscale"])
        test = data_mod.downscale(test, man["downscale"]) if test is not None else None
    return data_mod.make_splits(train, man["val_fraction"], man["seed"], test)


def load_splits(out: Path) -> data_mod.Splits:
    return load_splits_from(_load(Path(out) / "data" / "manifest.json"))


def train_pool_stage(cfg: RunConfig, out: Path) -> dict:
    out = Path(out)
    splits = load_splits(out)
    tc = TrainConfig(cfg.hidden, cfg.epochs, cfg.batch_size, cfg.learning_rate)
    # disjoint member seeds for different run seeds
    base = cfg.seed * cfg.pool_size
    pool = train_pool(splits, tc, cfg.pool_size, base_seed=base, workers=cfg.workers)
    pdir = out / "pool"
    pdir.mkdir(parents=True, exist_ok=True)
    members = []
    for i, net in enumerate(pool):
        path = pdir / f"net_{i:02d}.nn"
        save_network(net, path)
        acc = accuracy(net, splits.test) if len(splits.test) else None
        members.append({"id": i, "path": path.name, "seed": base + i, "test_accuracy": acc})
    man = {"members": members, "hidden": list(cfg.hidden), "epochs": cfg.epochs, "batch_size": cfg.batch_size,
           "learning_rate": cfg.learning_rate}
    _dump(man, pdir / "manifest.json")
    return man


def load_pool(out: Path) -> list:
    pdir = Path(out) / "pool"
    man = _load(pdir / "manifest.json")
    return [load_network(_require(pdir / m["path"])) for m in man["members"]]


def agreement_stage(cfg: RunConfig, out: Path) -> dict:
    from .scoring import find_agreement_points

    out = Path(out)
    pool = load_pool(out)
    splits = load_splits(out)
    A = find_agreement_points(pool, splits.validation, cfg.m, cfg.label_filter)
    man = {"source": "validation", "m": len(A), "label_filter": cfg.label_filter,
           "indices": [int(i) for i in A.indices], "labels": [int(v) for v in A.labels]}
    _dump(man, out / "agreement.json")
    return man


def load_agreement(out: Path, splits: Optional[data_mod.Splits] = None) -> AgreementSet:
    out = Path(out)
    man = _load(out / "agreement.json")
    splits = splits or load_splits(out)
    idx = np.asarray(man["indices"], dtype=np.int64)
    return AgreementSet(splits.validation.images[idx].copy(), np.asarray(man["labels"], dtype=np.int64),
                        idx, man["label_filter"])


def _engine(cfg: RunConfig, out: Path, backend: Optional[str] = None, mode: Optional[str] = None
            ) -> PairQueryEngine:
    return PairQueryEngine(load_pool(out), load_agreement(out), backend or cfg.backend, mode or cfg.mode,
                           cfg.timeout, cfg.workers, cfg.clip_domain)


# ---------------------------------------------------------------------------
# scoring and batches


def score_stage(cfg: RunConfig, out: Path, members: Optional[Sequence[int]] = None) -> MutualErrorTable:
    out = Path(out)
    members = list(members) if members is not None else list(range(cfg.ensemble_size))
    eng = _engine(cfg, out)
    table = compute_mutual_error_table(members, eng, cfg.eps_list)
    (out / "scores").mkdir(parents=True, exist_ok=True)
    table.to_csv(out / "scores" / f"{cfg.backend}.csv")
    return table


def default_queries(cfg: RunConfig, members: Sequence[int]) -> List[dict]:
    return [{"members": [a, b], "point": p, "eps": float(e), "mode": cfg.mode}
            for a, b in itertools.combinations(sorted(members), 2) for e in cfg.eps_list for p in range(cfg.m)]


def read_queries(path) -> List[dict]:
    recs = []
    for n, line in enumerate(Path(_require(Path(path))).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            r = json.loads(line)
            recs.append({"members": [int(v) for v in r["members"]], "point": int(r["point"]),
                         "eps": float(r["eps"]), "mode": str(r.get("mode", "runner_up")).replace("-", "_")})
        except (ValueError, KeyError, TypeError) as exc:
            raise ValueError(f"{path}:{n}: malformed query record") from exc
    return recs


def write_queries(recs, path) -> None:
    Path(path).write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in recs))


def _batch_job(job):
    nets, x0, label, eps, backend, mode, timeout, clip, steps = job
    return run_pair_query(nets, x0, label, eps, backend, mode, timeout, clip, steps)


def run_batch(cfg: RunConfig, out: Path, queries: List[dict], backend: str, results_path: Path) -> dict:
    """Run query records through ``backend``; one result line per query, witnesses as vector files."""
    out = Path(out)
    pool = load_pool(out)
    A = load_agreement(out)
    for q in queries:
        if any(not 0 <= i < len(pool) for i in q["members"]) or not 0 <= q["point"] < len(A):
            raise ValueError(f"query {q} references an unknown member or point")
    jobs = [([pool[i] for i in q["members"]], A.points[q["point"]], int(A.labels[q["point"]]), q["eps"],
             backend, q["mode"], cfg.timeout, cfg.clip_domain, cfg.steps) for q in queries]
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(_batch_job, jobs))
    else:
        results = [_batch_job(j) for j in jobs]
    results_path = Path(results_path)
    wdir = results_path.parent / (results_path.stem + "_witnesses")
    lines, tally = [], {"SAT": 0, "UNSAT": 0, "TIMEOUT": 0}
    for n, (q, (status, witness, stats)) in enumerate(zip(queries, results)):
        tally[status] += 1
        wpath = None
        if witness is not None:
            wdir.mkdir(parents=True, exist_ok=True)
            wpath = wdir / f"q{n:06d}.vec"
            write_vector(witness, wpath)
            wpath = str(wpath.relative_to(results_path.parent))
        rec = {"query": n, **q, "backend": backend, "verdict": status, "witness": wpath,
               "nodes": stats.get("nodes"), "lp_calls": stats.get("lp_calls"),
               "wall_time": stats.get("wall_time"), "iterations": stats.get("iterations")}
        lines.append(json.dumps(rec, sort_keys=True) + "\n")
    results_path.parent.mkdir(parents=True, exist_ok=True)
    results_path.write_text("".join(lines))
    return tally


# ---------------------------------------------------------------------------
# selection, evaluation, report


def select_stage(cfg: RunConfig, out: Path, engine: Optional[PairQueryEngine] = None):
    out = Path(out)
    eng = engine or _engine(cfg, out)
    state = iterate_selection(cfg.pool_size, cfg.ensemble_size, eng, cfg.eps_list, cfg.max_iters)
    sdir = out / "selection"
    (sdir / "tables").mkdir(parents=True, exist_ok=True)
    for i, t in enumerate(state.tables):
        t.to_csv(sdir / "tables" / f"iter_{i:02d}.csv")
    write_history(state.history, sdir / "history.csv")
    man = {"initial": state.initial, "members": state.members, "stop_reason": state.stop_reason,
           "audit": state.audit, "backend": eng.backend, "mode": eng.mode,
           "eps_list": [float(e) for e in cfg.eps_list],
           "history": [vars(h) for h in state.history],
           "timeouts": sum(t.timeouts() for t in state.tables)}
    _dump(man, sdir / "manifest.json")
    return state


def evaluate_stage(cfg: RunConfig, out: Path) -> dict:
    out = Path(out)
    sel = _load(out / "selection" / "manifest.json")
    pool = load_pool(out)
    splits = load_splits(out)
    if len(splits.test) == 0:
        raise StageFailure("no test split available for evaluation")
    ids = sample_points(splits.test, cfg.eval_points, cfg.seed)
    reports, accs = [], {}
    for name in ("initial", "final"):
        members = sel["initial"] if name == "initial" else sel["members"]
        nets = [pool[i] for i in members]
        reports.append(robust_accuracy(nets, splits.test, ids, cfg.eps_list, cfg.mode, cfg.timeout, name,
                                       cfg.clip_domain))
        accs[name] = accuracy(nets, splits.test)
    edir = out / "evaluation"
    edir.mkdir(parents=True, exist_ok=True)
    write_series(reports, edir / "robust_accuracy.csv")
    man = {"reports": [report_to_dict(r) for r in reports], "accuracy": accs,
           "robust_accuracy": {r.ensemble_id: r.overall() for r in reports},
           "eps_violations": [v for r in reports for v in eps_monotonicity_violations(r)],
           "timeouts": sum(r.timeouts() for r in reports)}
    _dump(man, edir / "manifest.json")
    return man


def report_stage(cfg: RunConfig, out: Path, plot: bool = False, compare: Sequence[str] = ()) -> dict:
    out = Path(out)
    sel = _load(out / "selection" / "manifest.json")
    ev = _load(out / "evaluation" / "manifest.json")
    tables = [MutualErrorTable.from_csv(p) for p in sorted((out / "selection" / "tables").glob("iter_*.csv"))]
    history = [SwapRecord(**h) for h in sel["history"]]
    reports = [report_from_dict(r) for r in ev["reports"]]
    comparison: Optional[BackendComparison] = None
    if compare:
        # attacks accept any wrong label, so the verifier side must use the full postcondition
        engines = {b: _engine(cfg, out, b, FULL if b == VERIFIER else None) for b in compare}
        comparison = compare_backends(engines, sel["members"], cfg.eps_list)
    extra = {"initial ensemble": sel["initial"], "final ensemble": sel["members"],
             "stop reason": sel["stop_reason"],
             "accuracy initial/final": f"{ev['accuracy']['initial']:.4f} / {ev['accuracy']['final']:.4f}",
             "audit findings": len(sel["audit"]), "eps monotonicity violations": len(ev["eps_violations"])}
    rdir = emit_report(out / "report", tables, reports, history, comparison, plot, extra)
    result = {"path": str(rdir), "timeouts": sel["timeouts"] + ev["timeouts"]}
    if comparison is not None:
        _dump({"sat": comparison.sat_totals, "timeouts": comparison.timeouts,
               "queries": comparison.query_count, "violations": comparison.violations},
              rdir / "backend_comparison.json")
        result["timeouts"] += sum(comparison.timeouts.values())
    return result


def dry_run_counts(cfg: RunConfig, stage: str, n_queries: Optional[int] = None) -> int:
    k, m, e = cfg.ensemble_size, cfg.m, len(cfg.eps_list)
    if stage == "score":
        return query_count(k, m, e)
    if stage in ("verify-batch", "attack-batch"):
        return n_queries if n_queries is not None else query_count(k, m, e)
    if stage == "select":
        # first iteration: the ensemble table plus every candidate against k-1 members
        return query_count(k, m, e) + (cfg.pool_size - k) * (k - 1) * m * e
    if stage == "evaluate":
        return 2 * cfg.eval_points * e
    return 0
