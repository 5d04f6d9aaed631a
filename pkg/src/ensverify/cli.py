"""``ensverify`` command line: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage error, 2 stage failure, 3 finished with timeouts.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import stages
from .config import ConfigError, RunConfig, load_config
from .composition import compose_side_by_side
from .nn import NetworkFormatError, classify, load_network
from .scoring import BACKENDS, AgreementShortage, default_workers
from .verifier import FULL, RUNNER_UP, encode_mutual_error_query, encode_robustness_query, solve
from .data import IdxFormatError

EXIT_OK, EXIT_USAGE, EXIT_STAGE, EXIT_TIMEOUTS = 0, 1, 2, 3

log = logging.getLogger("ensverify")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _mode(s: str) -> str:
    s = s.replace("-", "_")
    if s not in (FULL, RUNNER_UP):
        raise argparse.ArgumentTypeError("mode must be full or runner-up")
    return s


def _eps_list(s: str):
    try:
        return tuple(float(v) for v in s.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad eps list {s!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="INI run configuration ([run] section)")
    p.add_argument("--out", dest="out_dir", help="run directory")
    p.add_argument("--workers", type=int, help="worker processes (default: available CPUs)")
    p.add_argument("--seed", type=int)
    p.add_argument("--timeout", type=float, help="per-query timeout in seconds")
    p.add_argument("--eps", dest="eps_list", type=_eps_list, help="comma separated eps values")
    p.add_argument("--mode", type=_mode)
    p.add_argument("--backend", choices=BACKENDS)
    p.add_argument("-n", "--pool-size", dest="pool_size", type=int)
    p.add_argument("-k", "--ensemble-size", dest="ensemble_size", type=int)
    p.add_argument("-m", dest="m", type=int, help="agreement points")
    p.add_argument("--clip-domain", dest="clip_domain", action="store_const", const=True)
    p.add_argument("--dry-run", action="store_true", help="print the query count and exit")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="ensverify", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare-data", help="read IDX files (or the bundled digits) and fix the splits")
    _common(p)
    p.add_argument("--digits", action="store_const", const=True)
    p.add_argument("--train-images")
    p.add_argument("--train-labels")
    p.add_argument("--test-images")
    p.add_argument("--test-labels")
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--downscale", type=int)

    p = sub.add_parser("train-pool", help="train the pool of n networks")
    _common(p)
    p.add_argument("--hidden", type=lambda s: tuple(int(v) for v in s.split(",")))
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)

    for name, text in (("agreement", "pick the agreement points"),
                       ("score", "mutual-error table for an ensemble"),
                       ("select", "greedy member replacement"),
                       ("evaluate", "robust accuracy of the initial and final ensembles"),
                       ("pipeline", "run every stage in order")):
        p = sub.add_parser(name, help=text)
        _common(p)
        if name == "score":
            p.add_argument("--members", type=lambda s: [int(v) for v in s.split(",")])
        if name == "select":
            p.add_argument("--max-iters", type=int)
        if name == "pipeline":
            p.add_argument("--plot", action="store_true")

    for name in ("verify-batch", "attack-batch"):
        p = sub.add_parser(name, help="run a query batch file" + (" with an attack" if name[0] == "a" else ""))
        _common(p)
        p.add_argument("--queries", help="JSONL query records (default: all pairs of the first k members)")
        p.add_argument("--results", help="JSONL results path")
        if name == "attack-batch":
            p.add_argument("--attack", choices=("ga1", "ga2", "ga3"), default="ga3")
        p.add_argument("--steps", type=int)

    p = sub.add_parser("verify", help="a single robustness or mutual-error query")
    p.add_argument("--net", action="append", required=True, help="network file (repeat for a mutual-error query)")
    p.add_argument("--point", required=True, help="whitespace separated input vector")
    p.add_argument("--label", type=int, required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--mode", type=_mode, default=RUNNER_UP)
    p.add_argument("--timeout", type=float, default=60.0)
    p.add_argument("--clip-domain", action="store_true")
    p.add_argument("--witness", help="write the witness vector here on SAT")
    p.add_argument("-v", "--verbose", action="store_true")

    p = sub.add_parser("report", help="summary, CSV series and optional plots")
    _common(p)
    p.add_argument("--plot", action="store_true")
    p.add_argument("--compare", type=lambda s: [v for v in s.split(",") if v],
                   help="backends to compare on the final ensemble, e.g. verifier,ga1,ga2,ga3")
    return ap


_CFG_KEYS = set(RunConfig.__dataclass_fields__) - {"extra"}


def _config(args) -> RunConfig:
    overrides = {k: v for k, v in vars(args).items() if k in _CFG_KEYS}
    cfg = load_config(getattr(args, "config", None), **overrides)
    if getattr(args, "workers", None) is None and (args.config is None or "workers" not in _file_keys(args.config)):
        cfg = cfg.replace(workers=default_workers())
    return cfg


def _file_keys(path) -> set:
    import configparser

    cp = configparser.ConfigParser()
    cp.read(path)
    return set(cp["run"]) if "run" in cp else set()


def _out(cfg: RunConfig) -> Path:
    return Path(cfg.out_dir)


def _cmd_verify(args) -> int:
    try:
        nets = [load_network(p) for p in args.net]
        x0 = stages.read_vector(args.point)
    except (OSError, NetworkFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    for path, net in zip(args.net, nets):
        if classify(net, x0) != args.label:
            print(f"error: {path} does not classify the point as {args.label}", file=sys.stderr)
            return EXIT_USAGE
    if len(nets) == 1:
        target = nets[0]
        box, post = encode_robustness_query(target, x0, args.eps, args.label, args.mode, clip=args.clip_domain)
    else:
        target = compose_side_by_side(nets)
        box, post = encode_mutual_error_query(target, x0, args.eps, args.label, args.mode, args.clip_domain)
    v = solve(target, box, post, args.timeout)
    print(f"{v.status} nodes={v.nodes} lp_calls={v.lp_calls} wall_time={v.wall_time:.3f}")
    if v.status == "SAT" and args.witness:
        stages.write_vector(v.witness, args.witness)
    return EXIT_TIMEOUTS if v.status == "TIMEOUT" else EXIT_OK


def _timeouts_code(n: int) -> int:
    if n:
        print(f"warning: {n} queries timed out", file=sys.stderr)
        return EXIT_TIMEOUTS
    return EXIT_OK


def _run(args) -> int:
    if args.command == "verify":
        return _cmd_verify(args)
    cfg = _config(args)
    out = _out(cfg)
    cmd = args.command
    if args.dry_run:
        n = None
        if cmd in ("verify-batch", "attack-batch") and args.queries:
            n = len(stages.read_queries(args.queries))
        if cmd == "pipeline":
            for st in ("score", "select", "evaluate"):
                print(f"{st}: {stages.dry_run_counts(cfg, st)} queries")
            return EXIT_OK
        print(f"{stages.dry_run_counts(cfg, cmd, n)} queries")
        return EXIT_OK
    if cmd == "prepare-data":
        man = stages.prepare_data(cfg, out)
        print(f"train {man['counts']['train']} / validation {man['counts']['validation']} / "
              f"test {man['counts']['test']} items, d={man['dim']}")
        return EXIT_OK
    if cmd == "train-pool":
        man = stages.train_pool_stage(cfg, out)
        for mem in man["members"]:
            print(f"net {mem['id']}: seed {mem['seed']} test accuracy {mem['test_accuracy']}")
        return EXIT_OK
    if cmd == "agreement":
        man = stages.agreement_stage(cfg, out)
        print(f"{man['m']} agreement points")
        return EXIT_OK
    if cmd == "score":
        table = stages.score_stage(cfg, out, args.members)
        print(f"wrote {out / 'scores' / (cfg.backend + '.csv')}")
        return _timeouts_code(table.timeouts())
    if cmd in ("verify-batch", "attack-batch"):
        backend = "verifier" if cmd == "verify-batch" else args.attack
        if args.steps is not None:
            cfg = cfg.replace(steps=args.steps)
        queries = (stages.read_queries(args.queries) if args.queries
                   else stages.default_queries(cfg, range(cfg.ensemble_size)))
        results = Path(args.results) if args.results else out / "batches" / f"{backend}_results.jsonl"
        tally = stages.run_batch(cfg, out, queries, backend, results)
        print(f"{tally['SAT']} SAT, {tally['UNSAT']} UNSAT, {tally['TIMEOUT']} TIMEOUT -> {results}")
        return _timeouts_code(tally["TIMEOUT"])
    if cmd == "select":
        if args.max_iters is not None:
            cfg = cfg.replace(max_iters=args.max_iters)
        state = stages.select_stage(cfg, out)
        print(f"initial {state.initial} -> final {state.members} ({len(state.history)} swaps, {state.stop_reason})")
        for a in state.audit:
            print(f"audit: {a}", file=sys.stderr)
        return _timeouts_code(sum(t.timeouts() for t in state.tables))
    if cmd == "evaluate":
        man = stages.evaluate_stage(cfg, out)
        for name, ra in man["robust_accuracy"].items():
            print(f"{name}: robust accuracy {ra:.4f}, accuracy {man['accuracy'][name]:.4f}")
        return _timeouts_code(man["timeouts"])
    if cmd == "report":
        res = stages.report_stage(cfg, out, args.plot, args.compare or ())
        print((Path(res["path"]) / "summary.txt").read_text(), end="")
        return _timeouts_code(res["timeouts"])
    if cmd == "pipeline":
        stages.prepare_data(cfg, out)
        stages.train_pool_stage(cfg, out)
        stages.agreement_stage(cfg, out)
        t = stages.score_stage(cfg, out).timeouts()
        stages.select_stage(cfg, out)
        stages.evaluate_stage(cfg, out)
        res = stages.report_stage(cfg, out, args.plot)
        print((Path(res["path"]) / "summary.txt").read_text(), end="")
        return _timeouts_code(t + res["timeouts"])
    raise AssertionError(cmd)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return _run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except stages.StageFailure as exc:
        print(f"stage failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (AgreementShortage, IdxFormatError, NetworkFormatError, OSError, ValueError) as exc:
        print(f"stage failed: {exc}", file=sys.stderr)
        return EXIT_STAGE


if __name__ == "__main__":
    sys.exit(main())
