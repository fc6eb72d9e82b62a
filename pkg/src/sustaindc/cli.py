"""Command-line front end.

Every subcommand writes its primary output to ``--out`` (stdout when omitted)
and any secondary output next to it with a suffix, e.g. ``run.csv`` and
``run.summary.json``.  Exit codes: 0 success, 2 invalid input or
configuration, 3 data errors (gaps, short or misaligned data).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import carbon, estimator, forecast, frac, ftlsim, pimfunc, powersim, traces

EXIT_OK, EXIT_INPUT, EXIT_DATA = 0, 2, 3

DATA_ERRORS = (
    traces.TraceGapError,
    traces.TraceOrderError,
    forecast.ForecastSizeError,
    forecast.TrainingError,
    estimator.CoverageError,
    carbon.AlignmentError,
)
INPUT_ERRORS = (ValueError, KeyError, OSError, json.JSONDecodeError)


class UsageError(Exception):
    pass


# -- helpers ----------------------------------------------------------------


def _read(path) -> str:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"no such file: {path}")
    return p.read_text(encoding="utf-8")


def _read_json(path):
    try:
        return json.loads(_read(path))
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from None


def _emit(text: str, out: str | None):
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def _sibling(out: str | None, suffix: str) -> Path | None:
    """``run.csv`` + ``.summary.json`` -> ``run.summary.json``."""
    if out is None:
        return None
    p = Path(out)
    return p.with_name(p.stem + suffix)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _csv_table(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(str(r[h]) for h in header) for r in rows]
    return "\n".join(lines) + "\n"


# -- subcommands --------------------------------------------------------------


def cmd_frac(args):
    if not frac.M_MIN <= args.m <= frac.M_MAX:
        raise UsageError(f"--m must lie in [{frac.M_MIN}, {frac.M_MAX}], got {args.m}")
    rows = frac.frac_table(args.m, args.alpha_max)
    header = ["m", "alpha", "bits", "utilization", "capacity_bytes", "endurance_multiplier"]
    for r in rows:
        r["utilization"] = repr(r["utilization"])
        r["endurance_multiplier"] = repr(r["endurance_multiplier"])
    _emit(_csv_table(header, rows), args.out)


def _workload_ops(value: str) -> float:
    if value in pimfunc.WORKLOADS:
        return float(pimfunc.workload_descriptor(value).total_flops)
    try:
        return float(value)
    except ValueError:
        raise UsageError(f"--workload must be a number of ops or one of {pimfunc.WORKLOADS}") from None


def cmd_simulate(args):
    supply = traces.load_trace(_read(args.trace))
    battery = powersim.Battery(**_read_json(args.battery)) if args.battery else powersim.Battery()
    ops = _workload_ops(args.workload)
    summaries = []
    for i, path in enumerate(args.device):
        dev = powersim.DeviceModel.from_dict(_read_json(path))
        sc = powersim.Scenario(supply, dev, battery, ops, args.dt, args.seed, args.supply_scale)
        res = powersim.run(sc)
        summaries.append({"device_file": Path(path).name, **res.summary()})
        if len(args.device) == 1:
            _emit(res.timeline_csv(), args.out)
        elif args.out is not None:
            _sibling(args.out, f".{i}.{dev.volatility}.csv").write_text(res.timeline_csv(), encoding="utf-8")
    doc = summaries[0] if len(summaries) == 1 else {"runs": summaries}
    target = _sibling(args.out, ".summary.json")
    if target is None:
        sys.stderr.write(_dump(doc))
    else:
        target.write_text(_dump(doc), encoding="utf-8")


def _dataset(args) -> forecast.ForecastDataset:
    ren = traces.load_trace(_read(args.trace))
    dem = traces.load_trace(_read(args.demand), kind="demand")
    return forecast.ForecastDataset.from_traces(ren, dem)


def cmd_forecast(args):
    ds = _dataset(args)
    if args.train:
        cfg = forecast.TrainConfig(
            learning_rate=args.learning_rate, epochs=args.epochs, seed=args.seed, hidden_size=args.hidden
        )
        model = forecast.train(ds, config=cfg)
        Path(args.model).write_text(forecast.model_to_json(model), encoding="utf-8")
        val = forecast.evaluate(model, forecast.chronological_split(ds, cfg.split).val)
        print(f"validation P50 pinball: model {val.model_p50:.6g}  persistence {val.persistence_p50:.6g}")
        log = ["epoch,train_loss,val_loss"] + [f"{e},{tr!r},{va!r}" for e, tr, va in model.train_log]
        _emit("\n".join(log) + "\n", args.out)
        return
    model = forecast.model_from_json(_read(args.model))
    window = model.spec.history_window
    if args.issued_at is None:
        end = len(ds)
    else:
        hits = [i for i, t in enumerate(ds.timestamps) if int(t) == args.issued_at]
        if not hits:
            raise forecast.ForecastSizeError(f"--issued-at {args.issued_at} is not a timestamp of the traces")
        end = hits[0] + 1
    if end < window:
        raise forecast.ForecastSizeError(f"need {window} bins of history before the issue time, have {end}")
    fc = forecast.predict(model, ds.slice(end - window, end))
    _emit(forecast.forecasts_to_csv([fc]), args.out)


def _geometry(text: str) -> ftlsim.Geometry:
    try:
        parts = [int(x) for x in text.lower().split("x")]
    except ValueError:
        raise UsageError(f"--geometry wants BLOCKSxPAGES[xCELLS], got {text!r}") from None
    if len(parts) not in (2, 3):
        raise UsageError(f"--geometry wants BLOCKSxPAGES[xCELLS], got {text!r}")
    return ftlsim.Geometry(*parts)


def _pair(text: str, name: str) -> tuple[int, int]:
    try:
        lo, hi = (int(x) for x in text.split(","))
    except ValueError:
        raise UsageError(f"{name} wants LO,HI, got {text!r}") from None
    return lo, hi


def cmd_ftl(args):
    cfg = ftlsim.config_from_json(_read(args.config)) if args.config else ftlsim.config_from_json("")
    geometry = _geometry(args.geometry) if args.geometry else cfg["geometry"]
    wear = _pair(args.wear, "--wear") if args.wear else cfg["wear"]
    policy = cfg["policy"]
    if args.policy:
        policy = ftlsim.DegradePolicy(args.policy, policy.rber_threshold, policy.m_sequence, policy.capacity_floor)
    wl = cfg["workload"]
    wl = ftlsim.Workload(
        args.pattern or wl.pattern,
        args.write_size or wl.write_size,
        wl.zipf_theta,
        args.max_host_bytes if args.max_host_bytes is not None else wl.max_host_bytes,
    )
    seed = args.seed if args.seed is not None else cfg["seed"]
    k = args.pe_cycles_per_erase or cfg["pe_cycles_per_erase"]
    chip = ftlsim.init_chip(geometry, wear, seed, policy=policy, pe_cycles_per_erase=k)
    rep = ftlsim.run_lifetime(chip, wl)
    _emit(rep.timeline_csv(), args.out)
    doc = rep.to_dict()
    doc["config"] = {
        "geometry": [geometry.blocks_per_chip, geometry.pages_per_block, geometry.cells_per_page],
        "wear": list(wear),
        "seed": seed,
        "pe_cycles_per_erase": k,
        "pattern": wl.pattern,
        "write_size": wl.write_size,
    }
    doc["plateaus"] = len(rep.plateaus())
    target = _sibling(args.out, ".report.json")
    if target is None:
        sys.stderr.write(_dump(doc))
    else:
        target.write_text(_dump(doc), encoding="utf-8")


def _policy(args) -> carbon.BillingPolicy:
    if args.policy.endswith(".json"):
        return carbon.policy_from_dict(_read_json(args.policy))
    if args.policy == "flat":
        return carbon.FlatRate(args.price)
    if args.policy == "carbon-aware":
        return carbon.CarbonAware(args.price)
    if args.policy == "recycled-discount":
        return carbon.RecycledDiscount(carbon.FlatRate(args.price), args.discount)
    raise UsageError(f"unknown --policy {args.policy!r}")


def cmd_estimate(args):
    if args.task in pimfunc.WORKLOADS:
        graph = pimfunc.workload_descriptor(args.task).to_task_graph(args.expected_latency)
    else:
        graph = estimator.TaskGraph.from_json(_read(args.task))
    devices = estimator.load_devices(_read(args.devices)) if args.devices else estimator.reference_devices()
    model = pair = None
    if args.model:
        if not args.traces or args.start is None:
            raise UsageError("--model needs --traces DEMAND RENEWABLE and --start")
        model = forecast.model_from_json(_read(args.model))
        pair = (
            traces.load_trace(_read(args.traces[0]), kind="demand"),
            traces.load_trace(_read(args.traces[1])),
        )
    quote = estimator.ese_quote(graph, devices, args.start, pair, model, _policy(args))
    _emit(quote.to_json() + "\n", args.out)


def cmd_pareto(args):
    grid_doc = _read_json(args.grid)
    try:
        grid = powersim.SweepGrid(
            tuple(float(x) for x in grid_doc.get("renewable_scales", ())),
            tuple(float(x) for x in grid_doc.get("battery_capacities", ())),
            tuple(grid_doc.get("classes", powersim.CLASSES)),
        )
        shared = dict(grid_doc["device"])
    except KeyError as exc:
        raise UsageError(f"grid file lacks {exc}") from None
    if args.trace or "trace" in grid_doc:
        path = args.trace or Path(args.grid).parent / grid_doc["trace"]
        supply = traces.load_trace(_read(path))
    else:
        supply = traces.on_off_trace(int(grid_doc.get("n_bins", 240)), 60, 1.0, seed=args.seed)
    allp, front = powersim.pareto_sweep(
        supply,
        shared,
        grid,
        float(grid_doc.get("workload_ops", 1e12)),
        float(grid_doc.get("embodied_per_joule", 0.05)),
    )
    _emit(powersim.frontier_csv(front), args.out)
    target = _sibling(args.out, ".all.csv")
    if target is not None:
        target.write_text(powersim.frontier_csv(allp), encoding="utf-8")


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sustaindc", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_, description=help_)
        sp.add_argument("--out", help="primary output path (stdout when omitted)")
        sp.add_argument("--seed", type=int, default=None if name == "ftl" else 42, help="random seed (default 42)")
        sp.set_defaults(func=fn)
        return sp

    sp = add("frac", cmd_frac, "fractional-cell table: bits, utilization, page capacity, endurance per group size")
    sp.add_argument("--m", type=int, required=True, help="states per cell, 2..8")
    sp.add_argument("--alpha-max", type=int, default=8, help="largest group size (default 8)")

    sp = add("simulate", cmd_simulate, "run an accelerator on a renewable supply trace")
    sp.add_argument("--trace", required=True, help="supply trace CSV (MW)")
    sp.add_argument("--device", required=True, nargs="+", help="device JSON file(s)")
    sp.add_argument("--workload", default="1e12", help="ops to complete, or a built-in workload name")
    sp.add_argument("--battery", help="battery JSON file {capacity, level, ...}")
    sp.add_argument("--dt", type=float, help="simulation step in seconds (default: trace resolution)")
    sp.add_argument("--supply-scale", type=float, default=1e6, help="watts per trace unit (default 1e6)")

    sp = add("forecast", cmd_forecast, "train a quantile forecaster or issue a forecast")
    mode = sp.add_mutually_exclusive_group(required=True)
    mode.add_argument("--train", action="store_true", help="fit a model and write it to --model")
    mode.add_argument("--predict", action="store_true", help="load --model and forecast from the traces' end")
    sp.add_argument("--trace", required=True, help="renewable generation trace CSV")
    sp.add_argument("--demand", required=True, help="data center demand trace CSV")
    sp.add_argument("--model", required=True, help="model JSON (written by --train, read by --predict)")
    sp.add_argument("--epochs", type=int, default=200)
    sp.add_argument("--hidden", type=int, default=16, help="recurrent hidden size")
    sp.add_argument("--learning-rate", type=float, default=1e-2)
    sp.add_argument("--issued-at", type=int, help="forecast issue timestamp (default: last bin)")

    sp = add("ftl", cmd_ftl, "replay host writes on a recycled flash chip until it dies")
    sp.add_argument("--config", help="config JSON {geometry, wear, policy, workload, seed, pe_cycles_per_erase}")
    sp.add_argument("--geometry", help="BLOCKSxPAGES[xCELLS] (default 256x64x10923)")
    sp.add_argument("--wear", help="initial erase-count range LO,HI (default 2000,4000)")
    sp.add_argument("--policy", choices=ftlsim.POLICIES, help="degradation policy (default frac)")
    sp.add_argument("--pattern", choices=("uniform", "zipf"))
    sp.add_argument("--write-size", type=int, help="bytes per host write, a multiple of 256")
    sp.add_argument("--max-host-bytes", type=float, help="stop after this many host bytes")
    sp.add_argument("--pe-cycles-per-erase", type=int, help="P/E cycles represented by one simulated erase")

    sp = add("estimate", cmd_estimate, "partition a task, estimate latency and energy, and quote a charge")
    sp.add_argument("--task", required=True, help=f"task graph JSON or one of {', '.join(pimfunc.WORKLOADS)}")
    sp.add_argument("--expected-latency", type=float, default=1.0, help="QoS target for built-in workloads (s)")
    sp.add_argument("--devices", help="device catalog JSON (default: built-in CPU/GPU/PIM)")
    sp.add_argument("--start", type=int, help="task start timestamp (needed with --model)")
    sp.add_argument("--traces", nargs=2, metavar=("DEMAND", "RENEWABLE"), help="trace CSVs for the forecast")
    sp.add_argument("--model", help="forecast model JSON")
    sp.add_argument("--policy", default="flat", help="flat | carbon-aware | recycled-discount | policy JSON file")
    sp.add_argument("--price", type=float, default=1.0, help="credits per joule")
    sp.add_argument("--discount", type=float, default=0.0, help="recycled-discount fraction")

    sp = add("pareto", cmd_pareto, "sweep renewable scale, battery size and device class; keep the frontier")
    sp.add_argument("--grid", required=True, help="grid JSON {renewable_scales, battery_capacities, classes, device, ...}")
    sp.add_argument("--trace", help="supply trace CSV (default: grid's trace or a seeded on/off trace)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except DATA_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (UsageError, *INPUT_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
