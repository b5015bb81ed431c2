"""Command-line front end: ``d2dmec {generate,solve,experiment,validate}``.

Exit codes: 0 success (a recorded infeasible status counts as success),
1 usage or input error, 2 solver breakdown, 3 a validation check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from ..instances import GenConfig, ScenarioFormatError, gen_scenario, load_scenario, save_scenario
from ..model import SchemeResult
from ..numerics import EllipsoidBreakdown, SimplexBreakdown
from .experiment import (
    SCHEMES,
    load_config,
    load_preset,
    preset_names,
    run_experiment,
    run_scheme,
    to_csv,
    write_outputs,
)
from .validate import validate_scenario

EXIT_OK, EXIT_USAGE, EXIT_BREAKDOWN, EXIT_INVALID = 0, 1, 2, 3

log = logging.getLogger("d2dmec")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _result_path(scn_path: Path, scheme: str) -> Path:
    name = scn_path.name
    stem = name[: -len(".scn.json")] if name.endswith(".scn.json") else scn_path.stem
    return scn_path.with_name(f"{stem}.{scheme}.result.json")


def summary(res: SchemeResult) -> str:
    lines = [f"scheme    {res.scheme}", f"status    {res.status}"]
    if res.feasible:
        lines.append(f"latency   {res.latency * 1e3:.6g} ms")
        labels = np.argmax(res.assignment, axis=1)
        K = res.assignment.shape[1] - 1
        where = ["local" if j == K else f"helper {j + 1}" for j in labels]
        lines.append("tasks     " + ", ".join(f"{i + 1}->{w}" for i, w in enumerate(where)))
        if res.energy is not None:
            lines.append("energy    " + " ".join(f"{e:.4g}" for e in res.energy) + " J (helpers..., local)")
    elif "reason" in res.diagnostics:
        lines.append(f"reason    {res.diagnostics['reason']}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    base = {}
    if args.config:
        base = json.loads(Path(args.config).read_text())
        base = base.get("base", base)
    for key in ("K", "L"):
        if getattr(args, key) is not None:
            base[key] = getattr(args, key)
    base["seed"] = args.seed
    cfg = GenConfig.from_dict(base)
    scn = gen_scenario(cfg)
    out = Path(args.out or f"scenario_K{cfg.K}_L{cfg.L}_s{cfg.seed}.scn.json")
    save_scenario(out, scn, seed=args.seed, meta={"generator": cfg.to_dict()})
    print(f"wrote {out}")
    return EXIT_OK


def cmd_solve(args) -> int:
    path = Path(args.scenario)
    scn = load_scenario(path)
    t0 = time.perf_counter()
    res = run_scheme(scn, args.scheme, np.random.default_rng(args.seed))
    elapsed = time.perf_counter() - t0
    doc = {"scenario": str(path), "seed": args.seed, "elapsed_s": elapsed, **res.to_dict()}
    if res.feasible:
        doc["check_ok"] = bool(res.check(scn).ok)
    out = Path(args.out) if args.out else _result_path(path, args.scheme)
    out.write_text(json.dumps(doc, indent=2) + "\n")
    print(summary(res))
    print(f"wrote {out}")
    return EXIT_OK


def cmd_experiment(args) -> int:
    if bool(args.config) == bool(args.preset):
        raise UsageError("give exactly one of --config or --preset")
    cfg = load_config(args.config) if args.config else load_preset(args.preset)
    if args.realizations is not None:
        cfg.realizations = args.realizations
    if args.seed is not None:
        cfg.seed = args.seed
    if args.scheme:
        cfg.schemes = tuple(args.scheme)
    cfg.__post_init__()
    t0 = time.perf_counter()
    summaries = run_experiment(cfg, workers=args.workers,
                               progress=lambda v: log.info("%s: point %s done (%.0f s)", cfg.name, v,
                                                           time.perf_counter() - t0))
    if args.out:
        csv_path, side = write_outputs(cfg, summaries, args.out)
        print(f"wrote {csv_path} and {side}")
    else:
        sys.stdout.write(to_csv(summaries))
    return EXIT_OK


def cmd_validate(args) -> int:
    scn = load_scenario(args.scenario)
    result = None
    if args.result:
        result = SchemeResult.from_dict(json.loads(Path(args.result).read_text()))
    elif args.scheme:
        result = run_scheme(scn, args.scheme, np.random.default_rng(args.seed))
    rep = validate_scenario(scn, result)
    print(rep.table())
    if args.out:
        Path(args.out).write_text(json.dumps(rep.to_dict(), indent=2) + "\n")
    return EXIT_OK if rep.ok else EXIT_INVALID


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="d2dmec", description="Latency-minimizing task offloading to D2D helpers.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="draw a random scenario and save it as .scn.json")
    g.add_argument("--config", help="JSON file with generator fields (or an experiment config)")
    g.add_argument("--K", type=int, help="number of helpers")
    g.add_argument("--L", type=int, help="number of tasks")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="output path (default scenario_K*_L*_s*.scn.json)")
    g.set_defaults(func=cmd_generate)

    s = sub.add_parser("solve", help="run one scheme on a scenario file")
    s.add_argument("scenario", help="path to a .scn.json file")
    s.add_argument("--scheme", choices=SCHEMES, default="joint")
    s.add_argument("--seed", type=int, default=0, help="seed for the random scheme")
    s.add_argument("--out", help="result path (default <scenario>.<scheme>.result.json)")
    s.set_defaults(func=cmd_solve)

    e = sub.add_parser("experiment", help="sweep a parameter over many realizations and write CSV")
    e.add_argument("--config", help="experiment config JSON")
    e.add_argument("--preset", help="bundled config: " + ", ".join(preset_names()))
    e.add_argument("--realizations", type=int, help="override the realization count")
    e.add_argument("--seed", type=int, help="override the seed")
    e.add_argument("--scheme", action="append", choices=SCHEMES, help="restrict to this scheme (repeatable)")
    e.add_argument("--workers", type=int, default=1, help="threads for realizations")
    e.add_argument("--out", help="CSV path; a .json sidecar is written next to it (default: CSV to stdout)")
    e.set_defaults(func=cmd_experiment)

    v = sub.add_parser("validate", help="run the self-checks on a scenario")
    v.add_argument("scenario", help="path to a .scn.json file")
    v.add_argument("--result", help="check this .result.json instead of a fresh joint solve")
    v.add_argument("--scheme", choices=SCHEMES, help="check this scheme's result")
    v.add_argument("--seed", type=int, default=0, help="seed for the random scheme")
    v.add_argument("--out", help="also write the report as JSON")
    v.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (EllipsoidBreakdown, SimplexBreakdown) as exc:
        print(f"d2dmec: solver breakdown: {exc}", file=sys.stderr)
        return EXIT_BREAKDOWN
    except (UsageError, ScenarioFormatError, ValueError, KeyError, OSError, json.JSONDecodeError) as exc:
        print(f"d2dmec: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
