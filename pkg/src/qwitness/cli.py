"""Command-line front end.

Commands::

    qwitness criterion --state tmss:r=0.8 --id epr_product_cv
    qwitness sweep --state squeezed --id cv_sscopic --param r --start 0 --stop 1 --steps 11
    qwitness simulate --state tmss:r=0.8 --id epr_product_cv --n 200000 --seed 7 --out run/
    qwitness oracle --id support_min_p --S 4

Exit codes: 0 success (a violation is a result, not a failure), 1 usage or
state-spec error, 2 numerical failure (truncation, convergence, estimator
preconditions).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import criteria, oracles, sampling
from .errors import NumericalError, QWitnessError
from .states import StateSpec

DEFAULT_SEED = 7
SWEEP_COLUMNS = ("param", "value", "criterion_id", "lhs", "rhs", "ratio", "violated", "s_min", "method", "cutoff")
ORACLE_IDS = ("support_min_p", "theorem1_sweep", "spin_window", "tmss_moments")
ORACLE_SCHEMA_VERSION = "1.0"

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; 2 is reserved for numerical failures here
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass(frozen=True)
class RunConfig:
    command: str
    state: StateSpec | None = None
    criterion_id: str | None = None
    S: float | None = None
    bins: object = "default"
    check_convergence: bool = True
    seed: int = DEFAULT_SEED
    n: int | None = None
    noise: tuple = (0.0, 0.0)
    bin_width: float | None = None
    param: str | None = None
    start: float | None = None
    stop: float | None = None
    steps: int = 1
    oracle_id: str | None = None
    j: float | None = None
    r: float | None = None
    check: str = "theorem1_cv"
    restarts: int = 50
    grid_n: int = 1024
    grid_l: float | None = None
    output_format: str = "json"
    output: Path | None = None
    out_dir: Path | None = None
    workers: int | None = None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="qwitness", description="Uncertainty-relation witnesses for quantum states.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def state_args(p):
        g = p.add_mutually_exclusive_group(required=True)
        g.add_argument("--state", help="state spec, e.g. 'tmss:r=0.8,cutoff=40' or a JSON document")
        g.add_argument("--state-file", type=Path, help="file holding a JSON (or text) state spec")
        p.add_argument("--id", dest="criterion_id", required=True, choices=criteria.CRITERION_IDS)
        p.add_argument("--S", type=float, help="claimed size for mr_bound")
        p.add_argument("--output", type=Path, help="write here instead of standard output")
        p.add_argument("--workers", type=int)

    p = sub.add_parser("criterion", help="evaluate one criterion")
    state_args(p)
    p.add_argument("--bins", default="default", help="'default', 'exact', or a bin count")
    p.add_argument("--no-convergence-check", action="store_true")

    p = sub.add_parser("sweep", help="evaluate a criterion over a parameter range")
    state_args(p)
    p.add_argument("--bins", default="default", help="'default', 'exact', or a bin count")
    p.add_argument("--no-convergence-check", action="store_true")
    p.add_argument("--param", required=True)
    p.add_argument("--start", type=float, required=True)
    p.add_argument("--stop", type=float)
    p.add_argument("--steps", type=int, default=1)
    p.add_argument("--format", dest="output_format", choices=("csv", "json"), default="csv")

    p = sub.add_parser("simulate", help="sample measurement records and estimate a criterion")
    state_args(p)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--noise-a", type=float, default=0.0, help="sd of Gaussian noise on A outcomes")
    p.add_argument("--noise-b", type=float, default=0.0, help="sd of Gaussian noise on B outcomes")
    p.add_argument("--bin-width", type=float, help="B bin width (default: range/sqrt(n), >= 50 per bin)")
    p.add_argument("--out", dest="out_dir", type=Path, help="directory for record files and report.json")

    p = sub.add_parser("oracle", help="run an independent bound check")
    p.add_argument("--id", dest="oracle_id", required=True, choices=ORACLE_IDS)
    p.add_argument("--S", type=float)
    p.add_argument("--j", type=float)
    p.add_argument("--r", type=float)
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.add_argument("--check", default="theorem1_cv", choices=oracles.SWEEP_CHECKS)
    p.add_argument("--restarts", type=int, default=50)
    p.add_argument("--grid-n", type=int, default=1024)
    p.add_argument("--grid-l", type=float)
    p.add_argument("--output", type=Path)
    return parser


def _parse_bins(text: str):
    if text in ("default", "auto"):
        return text
    if text == "exact":
        return None
    try:
        count = int(text)
    except ValueError:
        raise UsageError(f"--bins must be 'default', 'exact' or a positive integer, got {text!r}") from None
    if count < 1:
        raise UsageError("--bins must be positive")
    return count


def parse_config(argv=None) -> RunConfig:
    ns = build_parser().parse_args(argv)
    kw = {k: v for k, v in vars(ns).items() if v is not None}
    kw.pop("command")
    cfg = {"command": ns.command}
    if ns.command != "oracle":
        if ns.state_file is not None:
            if not ns.state_file.is_file():
                raise UsageError(f"state file {ns.state_file} does not exist")
            text = ns.state_file.read_text()
        else:
            text = ns.state
        cfg["state"] = StateSpec.parse(text)
        kw.pop("state", None)
        kw.pop("state_file", None)
    if "bins" in kw:
        cfg["bins"] = _parse_bins(kw.pop("bins"))
    if kw.pop("no_convergence_check", False):
        cfg["check_convergence"] = False
    if ns.command == "simulate":
        cfg["noise"] = (kw.pop("noise_a"), kw.pop("noise_b"))
    cfg.update(kw)
    return RunConfig(**cfg)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _emit(text: str, output: Path | None, stdout) -> None:
    if output is None:
        stdout.write(text)
    else:
        output.write_text(text)


def _evaluate(config: RunConfig, spec: StateSpec):
    return criteria.evaluate_spec(
        spec, config.criterion_id, S=config.S, binning=config.bins, check_convergence=config.check_convergence
    )


def cmd_criterion(config: RunConfig, stdout=sys.stdout) -> int:
    report = _evaluate(config, config.state)
    _emit(_dump_json(report.to_dict()), config.output, stdout)
    return EXIT_OK


def sweep_values(start: float, stop: float | None, steps: int) -> list:
    if steps < 1:
        raise UsageError("--steps must be >= 1")
    if steps == 1:
        return [start]
    if stop is None:
        raise UsageError("--stop is required when --steps > 1")
    return [float(v) for v in np.linspace(start, stop, steps)]


def cmd_sweep(config: RunConfig, stdout=sys.stdout) -> int:
    values = sweep_values(config.start, config.stop, config.steps)
    specs = [config.state.with_param(config.param, v) for v in values]

    def run(spec):
        return _evaluate(config, spec)

    if config.workers and config.workers > 1:
        with ThreadPoolExecutor(config.workers) as pool:
            reports = list(pool.map(run, specs))
    else:
        reports = [run(s) for s in specs]

    if config.output_format == "json":
        rows = [dict(r.to_dict(), param=config.param, value=v) for r, v in zip(reports, values)]
        _emit(_dump_json(rows), config.output, stdout)
        return EXIT_OK
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(SWEEP_COLUMNS)
    for value, report in zip(values, reports):
        d = report.to_dict()
        cutoff = d["metadata"].get("cutoff")
        writer.writerow(
            [
                config.param,
                repr(value),
                d["criterion_id"],
                _cell(d["lhs"]),
                _cell(d["rhs"]),
                _cell(d["ratio"]),
                "true" if d["violated"] else "false",
                _cell(d["s_min"]),
                d["method"],
                "" if cutoff is None else " ".join(str(c) for c in cutoff),
            ]
        )
    _emit(buf.getvalue(), config.output, stdout)
    return EXIT_OK


def _cell(v):
    return "" if v is None else repr(v)


def _record_filename(setting: str) -> str:
    return "record_" + setting.replace("|", "_given_") + ".txt"


def cmd_simulate(config: RunConfig, stdout=sys.stdout) -> int:
    if config.n is None or config.n < 1:
        raise UsageError("--n must be >= 1")
    spec = config.state
    cid = config.criterion_id
    state = criteria.prepare_state(spec, cid)
    records = sampling.simulate_records(state, cid, config.n, config.seed, config.noise, config.workers)
    bound = None
    if cid == "epr_sum_spin":
        bound = criteria.hoffmann_bound(criteria.spin_j(state.space, "A"))
    report = sampling.estimate_criterion(cid, records, config.bin_width, S=config.S, bound=bound)
    meta = dict(report.metadata)
    meta["record_seeds"] = meta.get("seed")
    meta["seed"] = config.seed
    meta["state"] = spec.to_text()
    meta["cutoff"] = list(state.space.cutoffs) if state.space.kind == "fock" else None
    report = replace(report, metadata=meta)
    text = _dump_json(report.to_dict())
    if config.out_dir is not None:
        config.out_dir.mkdir(parents=True, exist_ok=True)
        for rec in records:
            rec.write(config.out_dir / _record_filename(rec.setting))
        (config.out_dir / "report.json").write_text(text)
    _emit(text, config.output, stdout)
    return EXIT_OK


def oracle_report(config: RunConfig) -> dict:
    oid = config.oracle_id
    params: dict = {}
    if oid == "support_min_p":
        S = 4.0 if config.S is None else config.S
        params = {"S": S, "L": S if config.grid_l is None else config.grid_l, "N": config.grid_n}
        value = oracles.min_p_variance_on_support(S, config.grid_l, config.grid_n)
        bound = criteria.mr_bound(S)
        extra = {"box_value": 4 * math.pi**2 / S**2}
        passed = value >= bound
    elif oid == "theorem1_sweep":
        params = {"n": config.n, "seed": config.seed, "check": config.check}
        value = oracles.random_state_sweep(config.n, config.seed, config.check)
        bound = oracles.SWEEP_CONTRACT
        extra = {}
        passed = value >= bound
    elif oid == "spin_window":
        if config.j is None or config.S is None:
            raise UsageError("spin_window needs --j and --S")
        params = {"j": config.j, "S": config.S, "restarts": config.restarts, "seed": config.seed}
        search = oracles.spin_window_search(config.j, config.S, config.restarts, config.seed)
        value = search.minimum
        bound = oracles.SPIN_WINDOW_CONTRACT
        extra = {"window_start": search.window_start, "starts": int(search.finals.size)}
        passed = value >= bound
    elif oid == "tmss_moments":
        r = 0.0 if config.r is None else config.r
        params = {"r": r}
        x_var, p_inf = oracles.gaussian_tmss_moments(r)
        value = x_var * p_inf
        bound = 1.0
        extra = {"x_variance": x_var, "inferred_p_variance": p_inf}
        passed = abs(value - bound) <= 1e-12
    else:  # pragma: no cover
        raise UsageError(f"unknown oracle {oid!r}")
    return {
        "schema_version": ORACLE_SCHEMA_VERSION,
        "oracle_id": oid,
        "value": float(value),
        "bound": float(bound),
        "pass": bool(passed),
        "parameters": params,
        "details": extra,
    }


def cmd_oracle(config: RunConfig, stdout=sys.stdout) -> int:
    _emit(_dump_json(oracle_report(config)), config.output, stdout)
    return EXIT_OK


COMMANDS = {"criterion": cmd_criterion, "sweep": cmd_sweep, "simulate": cmd_simulate, "oracle": cmd_oracle}


def run(config: RunConfig, stdout=sys.stdout) -> int:
    return COMMANDS[config.command](config, stdout)


def main(argv=None, stdout=None, stderr=None) -> int:
    stdout = sys.stdout if stdout is None else stdout
    stderr = sys.stderr if stderr is None else stderr
    try:
        config = parse_config(argv)
        return run(config, stdout)
    except NumericalError as exc:
        stderr.write(f"qwitness: numerical failure: {exc}\n")
        return EXIT_NUMERICAL
    except (UsageError, QWitnessError, ValueError, KeyError, TypeError, OSError) as exc:
        stderr.write(f"qwitness: {exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
