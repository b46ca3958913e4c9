"""Command line entry point: ``simulate``, ``run`` and ``verify``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from .core import DataError
from .experiment import (ConfigError, ExperimentConfig, load_config_archive, run_experiment,
                         select_test_dates, verify_ensemble_archive, write_report_files)
from .synth_io import ScenarioConfig, generate_scenario, write_archive

EXIT_CONFIG = 2
EXIT_DATA = 3

log = logging.getLogger("empcop")


def _read_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None


def cmd_simulate(args):
    d = _read_json(args.config)
    d = d.get("scenario", d)
    if args.seed is not None:
        d["seed"] = args.seed
    try:
        cfg = ScenarioConfig.from_dict(d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    archive = generate_scenario(cfg)
    out = Path(args.out)
    write_archive(archive, out)
    (out / "scenario.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(f"wrote {len(archive)} days x {len(archive.margins)} margins to {out}")


def cmd_run(args):
    d = _read_json(args.config)
    if args.seed is not None:
        d["seed"] = args.seed
    cfg = ExperimentConfig.from_dict(d)
    result = run_experiment(cfg, args.out, threads=args.threads, base=Path(args.config).parent)
    for m, rep in result.reports.items():
        print(f"{m:16s} ES {rep.mean_es:.4f}  VS {rep.mean_vs:.4f}  ({rep.cases} days)")
    if result.skipped:
        print(f"skipped {len(result.skipped)} test days")


def cmd_verify(args):
    d = _read_json(args.config)
    allowed = {"archive", "geometry", "method", "seed", "test_start", "test_end"}
    unknown = set(d) - allowed
    if unknown:
        raise ConfigError(f"unknown verify fields: {sorted(unknown)}")
    seed = args.seed if args.seed is not None else d.get("seed", 0)
    cfg = ExperimentConfig(archive=d.get("archive", {}), methods=["raw"], geometry=d.get("geometry"),
                           seed=seed, test_start=d.get("test_start"), test_end=d.get("test_end"))
    archive, geometry = load_config_archive(cfg, Path(args.config).parent)
    dates = select_test_dates(archive, cfg)
    method = d.get("method", "ensemble")
    report = verify_ensemble_archive(archive, geometry, method, seed, dates)
    write_report_files({method: report}, archive.margins, Path(args.out))
    print(f"{method:16s} ES {report.mean_es:.4f}  VS {report.mean_vs:.4f}  ({report.cases} days)")


def build_parser():
    p = argparse.ArgumentParser(prog="empcop", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, func, hlp in (("simulate", cmd_simulate, "generate a synthetic archive"),
                            ("run", cmd_run, "run a postprocessing experiment"),
                            ("verify", cmd_verify, "score an ensemble archive")):
        s = sub.add_parser(name, help=hlp)
        s.add_argument("--config", required=True, help="JSON config file")
        s.add_argument("--out", required=True, help="output directory")
        s.add_argument("--seed", type=int, help="override the master seed")
        s.add_argument("--threads", type=int, default=1, help="worker threads")
        s.set_defaults(func=func)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return 0
