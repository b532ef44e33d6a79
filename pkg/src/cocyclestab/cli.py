"""Command-line front end.

Exit codes: 0 success, 2 configuration or usage error, 3 a bound check failed.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import bounds, experiments, oseledets
from .config import RunConfig, load_config
from .errors import CocycleError, ConfigError

log = logging.getLogger("cocyclestab")

EXIT_OK, EXIT_CONFIG, EXIT_FAIL = 0, 2, 3
SUBCOMMANDS = ("spectrum", "splitting", "perturb-exponents", "perturb-spaces", "grassmann",
               "good-blocks", "verify-constants")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cocyclestab", description="Lyapunov spectra, Oseledets splittings and "
                "stability experiments for matrix cocycles.")
    sub = p.add_subparsers(dest="command", required=True, metavar="{" + ",".join(SUBCOMMANDS) + "}",
                           parser_class=_Parser)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=name != "verify-constants", help="JSON run config")
        s.add_argument("--out", default=".", help="output directory")
        s.add_argument("--seed", type=int, default=None, help="override run.seed")
        s.add_argument("--quiet", action="store_true")
    return p


def _write(out: Path, name: str, text: str) -> Path:
    path = out / name
    path.write_text(text)
    log.info("wrote %s", path)
    return path


def _base_point(cfg: RunConfig, system):
    return system.sample_state(np.random.default_rng(experiments.trial_seed(cfg.run.seed, 0, 6)))


def cmd_spectrum(cfg: RunConfig, out: Path) -> int:
    ecfg = cfg.experiment_config()
    system = ecfg.system()
    omega = _base_point(cfg, system)
    rep = oseledets.estimate_spectrum(system, omega, ecfg.horizon, group_tol=None)
    if rep.warning:
        log.warning(rep.warning)
    rows = [{"epsilon": 0.0, "index": i + 1, "estimate": mu, "stderr": se, "n_trials": 1,
             "flag": "neg_inf" if mu == -math.inf else ""}
            for i, (mu, se) in enumerate(zip(rep.exponents, rep.stderr))]
    table = experiments.ConvergenceTable("spectrum", rows, rep.to_dict())
    _write(out, "spectrum.csv", table.to_csv())
    _write(out, "spectrum.json", experiments.dumps(
        experiments.envelope(ecfg, {"omega": omega, "spectrum": rep.to_dict()})))
    log.info("exponents: %s", ", ".join("%.6g" % x for x in rep.exponents))
    return EXIT_OK


def cmd_splitting(cfg: RunConfig, out: Path) -> int:
    ecfg = cfg.experiment_config()
    system = ecfg.system()
    omega = _base_point(cfg, system)
    spec = oseledets.estimate_spectrum(system, omega, ecfg.horizon)
    rep = oseledets.splitting(system, omega, ecfg.space_horizon, spectrum=spec)
    _write(out, "splitting.json", experiments.dumps(
        experiments.envelope(ecfg, {"omega": omega, "splitting": rep.to_dict()})))
    return EXIT_OK


def _table_cmd(fn, stem):
    def run(cfg: RunConfig, out: Path) -> int:
        ecfg = cfg.experiment_config()
        table = fn(ecfg)
        _write(out, f"{stem}.csv", table.to_csv())
        _write(out, f"{stem}.json", experiments.dumps(experiments.envelope(ecfg, table.to_dict())))
        return EXIT_OK
    return run


def _json_cmd(fn, stem):
    def run(cfg: RunConfig, out: Path) -> int:
        ecfg = cfg.experiment_config()
        _write(out, f"{stem}.json", experiments.dumps(experiments.envelope(ecfg, fn(ecfg))))
        return EXIT_OK
    return run


def cmd_verify_constants(cfg: RunConfig, out: Path) -> int:
    seed = cfg.run.seed
    n_samples = cfg.experiment.n_samples
    b = bounds.compute_constant_B()
    reports = (bounds.linear_battery(seed=seed) + bounds.poly_battery(seed=seed + 1)
               + bounds.operator_battery(seed=seed + 2) + bounds.magic_battery(seed=seed + 3))
    bad = bounds.bad_block_battery(n_samples=n_samples, seed=seed + 4)
    glue = bounds.glue_battery(n_samples=n_samples, seed=seed + 5)
    failures = (sum(not r.passed for r in reports) + sum(not r["passed"] for r in bad)
                + sum(not g.passed for g in glue))
    result = {
        "B": b,
        "B_minimizer": bounds.constant_B_minimizer(),
        "reports": [r.to_dict() for r in reports],
        "bad_block": bad,
        "glue": [g.to_dict() for g in glue],
        "glue_K_max": max(g.K for g in glue),
        "failures": failures,
    }
    doc = {"config": cfg.model_dump(mode="json"), "seeds": {"seed": seed},
           "result": experiments.json_safe(result)}
    _write(out, "constants.json", experiments.dumps(doc))
    log.info("B = %.6f, %d checks, %d failures", b, len(reports) + len(bad) + len(glue), failures)
    return EXIT_FAIL if failures else EXIT_OK


COMMANDS = {
    "spectrum": cmd_spectrum,
    "splitting": cmd_splitting,
    "perturb-exponents": _table_cmd(experiments.run_exponent_convergence, "exponents"),
    "perturb-spaces": _table_cmd(experiments.run_space_convergence, "spaces"),
    "grassmann": _json_cmd(experiments.run_grassmann_conditional, "grassmann"),
    "good-blocks": _json_cmd(experiments.run_good_block_census, "good_blocks"),
    "verify-constants": cmd_verify_constants,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(message)s", force=True)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg = cfg.model_copy(update={"run": cfg.run.model_copy(update={"seed": args.seed})})
        if args.command != "verify-constants" and cfg.cocycle is None:
            raise ConfigError(f"{args.config}: field cocycle: required for {args.command}")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](cfg, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CocycleError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
