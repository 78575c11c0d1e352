"""Command-line front end.

Subcommands
-----------
model     build a chain and partition from a TOML/JSON model spec
check     run a condition checker, optionally over a sweep of sizes
converge  compare the label process and the state law with the limit chain

Exit codes: 0 pass, 1 usage or invalid input, 2 condition fail, 3 warn,
4 internal error.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import json
import os
import sys
import traceback
from importlib import metadata

import numpy as np

from . import errors
from .chain import Chain, stationary
from .metastability import (
    CONDITION_IDS,
    Partition,
    check,
    estimate_limit_chain,
    fdd_compare,
    state_convergence,
    sweep,
)
from .models import ModelSpec, SpecBuilder, build_model

EXIT_PASS, EXIT_USAGE, EXIT_FAIL, EXIT_WARN, EXIT_INTERNAL = 0, 1, 2, 3, 4

_INPUT_ERRORS = (errors.SpecParseError, errors.ParameterOutOfRange,
                 errors.StateSpaceTooLarge, errors.PartitionError, FileNotFoundError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:  # running from a source tree
        return "0+unknown"


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _manifest(command: str, params: dict, inputs: list, notes=()) -> dict:
    return {
        "command": command,
        "parameters": params,
        "version": _version(),
        "input_hashes": {str(p): _sha256(p) for p in inputs if p},
        "notes": list(notes),
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }


def _write_json(doc, path):
    text = json.dumps(doc, indent=2, sort_keys=False)
    if path in (None, "-"):
        print(text)
    else:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _float_list(text: str) -> list:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad number list {text!r}") from exc


def _parse_sweep(text: str):
    if "=" not in text:
        raise UsageError("--sweep expects NAME=v1,v2,...")
    name, vals = text.split("=", 1)
    if name.strip() != "N":
        raise UsageError("only N sweeps are supported")
    try:
        return [int(v) for v in vals.split(",") if v.strip()]
    except ValueError as exc:
        raise UsageError(f"bad sweep values {vals!r}") from exc


def _is_chain_file(path) -> bool:
    if not str(path).endswith(".json"):
        return False
    with open(path) as fh:
        doc = json.load(fh)
    return "states" in doc and "rates" in doc


def _load_instance(args):
    """Return (chain, partition, spec_or_None, inputs)."""
    if args.model is None:
        raise UsageError("--model is required")
    if _is_chain_file(args.model):
        if args.partition is None:
            raise UsageError("--partition is required with a chain file")
        chain = Chain.from_json(args.model)
        part = Partition.from_json(args.partition)
        return chain, part, None, [args.model, args.partition]
    spec = ModelSpec.from_file(args.model)
    inst = build_model(spec)
    part = Partition.from_json(args.partition) if args.partition else inst.partition
    return inst.chain, part, spec, [args.model, args.partition]


def _verdict_code(verdict: str) -> int:
    return {"pass": EXIT_PASS, "trend-pass": EXIT_PASS, "fail": EXIT_FAIL}.get(verdict, EXIT_WARN)


# ---------------------------------------------------------------------------
# commands


def cmd_model(args) -> int:
    spec = ModelSpec.from_file(args.spec)
    inst = build_model(spec)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    chain_path = os.path.join(out, "chain.json")
    part_path = os.path.join(out, "partition.json")
    inst.chain.to_json(chain_path)
    inst.partition.to_json(part_path)
    mu = np.exp(inst.log_measure)
    summary = {
        "family": inst.family,
        "states": inst.chain.n,
        "theta": inst.theta,
        "well_masses": [float(mu[w].sum()) for w in inst.partition.wells],
        "delta_mass": float(mu[inst.partition.delta].sum()),
    }
    doc = {"manifest": _manifest("model", spec.to_dict(), [args.spec]), "summary": summary}
    _write_json(doc, os.path.join(out, "manifest.json"))
    print(json.dumps(summary))
    return EXIT_PASS


def _check_params(args) -> dict:
    params = {}
    for name in ("t", "delta", "epsilon", "c0", "threshold"):
        val = getattr(args, name, None)
        if val is not None:
            params[name] = val
    return params


def cmd_check(args) -> int:
    cid = args.check
    if cid not in CONDITION_IDS:
        raise UsageError(f"unknown condition id {cid!r}; choose from {', '.join(CONDITION_IDS)}")
    params = _check_params(args)
    if args.sweep:
        ns = _parse_sweep(args.sweep)
        if args.model is None or _is_chain_file(args.model):
            raise UsageError("--sweep needs a model spec for --model")
        spec = ModelSpec.from_file(args.model)
        report = sweep(SpecBuilder(spec), ns, cid,
                       workers=_workers(), **params)
        inputs = [args.model]
    else:
        chain, part, _, inputs = _load_instance(args)
        report = check(chain, part, cid, **params)
    doc = {"manifest": _manifest("check", dict(params, check=cid, sweep=args.sweep,
                                                full_max=args.full_max), inputs),
           "report": report.to_dict()}
    _write_json(doc, args.out)
    return _verdict_code(report.verdict)


def _workers() -> int:
    from .simulate import worker_count

    return worker_count(os.cpu_count() or 1)


def _curve(chain, part, limit, times, init_well):
    mu = stationary(chain)
    rows, reports = [], []
    for t in times:
        f = fdd_compare(chain, part, limit, [t], init_well, mu=mu)
        s = state_convergence(chain, part, limit, [t], init_well, mu=mu)
        row = {"t": t}
        for y in range(part.n_wells + 1):
            row[f"p{y}"] = f.values["exact"][str(y)]
        for y in range(1, part.n_wells + 1):
            row[f"limit{y}"] = f.values["limit"][str(y)]
        row["fdd_diff"] = f.value
        row["tv"] = s.value
        rows.append(row)
        reports.append({"fdd": f.to_dict(), "state": s.to_dict()})
    return rows, reports


def _write_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) for k, v in r.items()})


def _converge_sweep(args, times, out):
    from .metastability import trend_verdict

    ns = _parse_sweep(args.sweep)
    if args.model is None or _is_chain_file(args.model):
        raise UsageError("--sweep needs a model spec for --model")
    if args.limit:
        raise UsageError("--limit cannot be combined with --sweep")
    spec = ModelSpec.from_file(args.model)
    builder = SpecBuilder(spec)
    points = []
    for n in ns:
        inst = builder(n)
        limit = estimate_limit_chain(inst.chain, inst.partition)
        rows, reports = _curve(inst.chain, inst.partition, limit, times, args.init_well)
        _write_csv(rows, os.path.join(out, f"curve_N{n}.csv"))
        points.append({"N": n, "value": rows[0]["tv"], "reports": reports})
    verdict = trend_verdict([p["value"] for p in points], "decrease")
    params = {"times": times, "init_well": args.init_well, "sweep": args.sweep}
    notes = ["limit chains estimated from mean trace rates at every N"]
    doc = {"manifest": _manifest("converge", params, [args.model], notes),
           "sweep": [{"N": p["N"], "value": p["value"]} for p in points],
           "verdict": verdict, "points": points}
    _write_json(doc, os.path.join(out, "report.json"))
    return _verdict_code(verdict)


def cmd_converge(args) -> int:
    times = _float_list(args.times) if args.times else [1.0]
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    if args.sweep:
        return _converge_sweep(args, times, out)
    chain, part, _, inputs = _load_instance(args)
    notes = []
    if args.limit:
        limit = Chain.from_json(args.limit)
        inputs.append(args.limit)
    else:
        limit = estimate_limit_chain(chain, part)
        notes.append("no limit chain given: estimated from mean trace rates")
    rows, reports = _curve(chain, part, limit, times, args.init_well)
    mc = None
    if args.paths:
        from .simulate import empirical_fdd, sample_states

        eta = reports[0]["fdd"]["params"]["init"]
        st = sample_states(chain, eta, times, args.paths, args.seed, _workers())
        mc = {}
        for j, t in enumerate(times):
            est = empirical_fdd(st[:, [j]], part, [t])
            mc[str(t)] = {str(k[0]): e.to_dict() for k, e in est.items()}
    _write_csv(rows, os.path.join(out, "curve.csv"))
    params = {"times": times, "init_well": args.init_well, "seed": args.seed,
              "paths": args.paths}
    doc = {"manifest": _manifest("converge", params, inputs, notes),
           "reports": reports, "monte_carlo": mc, "limit_chain": limit.to_dict()}
    _write_json(doc, os.path.join(out, "report.json"))
    return EXIT_PASS


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="metastab", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    m = sub.add_parser("model", help="build a model from a spec file")
    m.add_argument("spec", help="TOML or JSON model spec")
    m.add_argument("--out", help="output directory (default: current)")
    m.set_defaults(func=cmd_model)

    def common(sp_):
        sp_.add_argument("--model", help="model spec (TOML/JSON) or chain JSON")
        sp_.add_argument("--partition", help="partition JSON (required with a chain file)")
        sp_.add_argument("--out", help="output path")

    c = sub.add_parser("check", help="run a condition checker")
    common(c)
    c.add_argument("--check", required=True, help=f"one of {', '.join(CONDITION_IDS)}")
    c.add_argument("--sweep", help="N=10,20,40 (needs a model spec)")
    c.add_argument("--t", type=float)
    c.add_argument("--delta", type=float)
    c.add_argument("--epsilon", type=float)
    c.add_argument("--c0", type=float)
    c.add_argument("--threshold", type=float)
    c.add_argument("--full-max", action="store_true",
                   help="exhaustive maximum over starting states (always on)")
    c.set_defaults(func=cmd_check)

    v = sub.add_parser("converge", help="convergence curves against the limit chain")
    common(v)
    v.add_argument("--limit", help="limit chain JSON (estimated when omitted)")
    v.add_argument("--sweep", help="N=10,20,40: one CSV per N (needs a model spec)")
    v.add_argument("--times", help="comma-separated times (default 1)")
    v.add_argument("--init-well", type=int, default=1)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--paths", type=int, default=0, help="Monte Carlo paths (0 = none)")
    v.set_defaults(func=cmd_converge)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("a subcommand is required")
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _INPUT_ERRORS as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - report everything else as internal
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        if os.environ.get("METASTAB_DEBUG"):
            traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
