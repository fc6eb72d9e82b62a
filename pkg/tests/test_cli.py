import dataclasses
import json
import subprocess
import sys

import numpy as np
import pytest

from sustaindc import cli, estimator, powersim, traces

SHARED = dict(
    peak_power=1e6,
    threshold_power=3e5,
    peak_throughput=1e9,
    checkpoint_interval=300.0,
    checkpoint_cost=3e7,
    resume_penalty=60.0,
)


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def files(tmp_path):
    def write(name, text):
        p = tmp_path / name
        p.write_text(text)
        return p

    fam = powersim.DeviceModel.family(**SHARED)
    out = {v: write(f"{v}.json", json.dumps(powersim.device_to_dict(d))) for v, d in fam.items()}
    out["const"] = write("const.csv", traces.serialize(traces.EnergyTrace(60 * np.arange(40), [1.0] * 40, 60)))
    square = traces.EnergyTrace(60 * np.arange(60), ([1.0] * 5 + [0.0] * 5) * 6, 60)
    out["square"] = write("square.csv", traces.serialize(square))
    out["gappy"] = write("gappy.csv", "timestamp,value\n0,1.0\n60,1.0\n300,1.0\n")
    r = traces.synthetic_wind(400, seed=1)
    d = traces.synthetic_wind(400, seed=2, mean_mw=120, amplitude_mw=20, noise_mw=3)
    out["wind"] = write("wind.csv", traces.serialize(r))
    out["demand"] = write("demand.csv", traces.serialize(d))
    out["short_wind"] = write("short_wind.csv", traces.serialize(r.window(0, 300 * 10)))
    out["short_demand"] = write("short_demand.csv", traces.serialize(d.window(0, 300 * 10)))
    grid = {"renewable_scales": [0.5, 1.0, 2.0], "battery_capacities": [0.0, 1e8], "device": {**SHARED, "tbe": 1e9}}
    out["grid"] = write("grid.json", json.dumps(grid))
    out["empty_grid"] = write("empty.json", json.dumps({**grid, "renewable_scales": []}))
    out["dir"] = tmp_path
    return out


def test_frac_rows(files, capsys):
    assert run("frac", "--m", 3, "--alpha-max", 7) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "m,alpha,bits,utilization,capacity_bytes,endurance_multiplier"
    row7 = lines[-1].split(",")
    assert row7[1] == "7" and row7[2] == "11"
    assert run("frac", "--m", 2, "--alpha-max", 1) == 0
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 2 and float(lines[1].split(",")[3]) == 1.0


def test_frac_bad_m(capsys):
    assert run("frac", "--m", 9) == 2
    assert "--m" in capsys.readouterr().err


def test_simulate_constant_zero_rollbacks(files):
    out = files["dir"] / "vc.csv"
    assert run("simulate", "--trace", files["const"], "--device", files["VolatileCheckpointed"], "--out", out) == 0
    summary = json.loads((files["dir"] / "vc.summary.json").read_text())
    assert summary["rollback_count"] == 0
    assert out.read_text().startswith("t,ops_completed,power_used_w,battery_j,event\n")


def test_simulate_square_wave_order(files):
    devs = [files[v] for v in powersim.CLASSES]
    out = files["dir"] / "sq.csv"
    assert run("simulate", "--trace", files["square"], "--device", *devs, "--workload", "1e13", "--out", out) == 0
    runs = json.loads((files["dir"] / "sq.summary.json").read_text())["runs"]
    prog = [r["final_progress"] for r in runs]
    assert [r["volatility"] for r in runs] == list(powersim.CLASSES)
    assert prog[0] >= prog[1] >= prog[2]


def test_simulate_errors(files):
    dev = files["VolatileCheckpointed"]
    assert run("simulate", "--trace", files["dir"] / "missing.csv", "--device", dev) == 2
    assert run("simulate", "--trace", files["gappy"], "--device", dev) == 3
    bad = files["dir"] / "bad.json"
    bad.write_text(json.dumps({"volatility": "Quantum", "peak_power": 1, "threshold_power": 0, "peak_throughput": 1}))
    assert run("simulate", "--trace", files["const"], "--device", bad) == 2


def test_forecast_train_deterministic_and_predict(files, capsys):
    common = ["forecast", "--trace", files["wind"], "--demand", files["demand"], "--epochs", 3]
    a, b = files["dir"] / "a.json", files["dir"] / "b.json"
    assert run(*common, "--train", "--model", a, "--out", files["dir"] / "a.log") == 0
    assert run(*common, "--train", "--model", b, "--out", files["dir"] / "b.log") == 0
    assert a.read_bytes() == b.read_bytes()
    assert "persistence" in capsys.readouterr().out
    fc = files["dir"] / "fc.csv"
    assert run(*common, "--predict", "--model", a, "--out", fc) == 0
    assert len(fc.read_text().splitlines()) == 1 + 2 * 3 * 7
    short = ["forecast", "--trace", files["short_wind"], "--demand", files["short_demand"]]
    assert run(*short, "--predict", "--model", a) == 3
    assert run(*short, "--train", "--model", files["dir"] / "c.json") == 3


def test_ftl_policies(files):
    d = files["dir"]
    reports = {}
    for pol in ("frac", "fixed-tlc", "mlc-to-slc"):
        assert run("ftl", "--geometry", "32x16", "--policy", pol, "--out", d / f"{pol}.csv") == 0
        reports[pol] = json.loads((d / f"{pol}.report.json").read_text())
    assert reports["frac"]["total_host_bytes_written"] > reports["fixed-tlc"]["total_host_bytes_written"]
    caps = [int(ln.split(",")[1]) for ln in (d / "mlc-to-slc.csv").read_text().splitlines()[1:]]
    halves = [(a, b) for a, b in zip(caps, caps[1:]) if a != b and abs((a - b) - a / 2) <= 2730]
    assert len(halves) == 1


def test_ftl_pristine_tiny(files):
    out = files["dir"] / "p.csv"
    assert run("ftl", "--geometry", "32x16", "--wear", "0,0", "--max-host-bytes", 2**20, "--out", out) == 0
    rep = json.loads((files["dir"] / "p.report.json").read_text())
    assert rep["stats"]["degrade_events"] == 0 and rep["death_cause"] is None


def test_ftl_bad_inputs(files):
    assert run("ftl", "--geometry", "32by16") == 2
    assert run("ftl", "--wear", "9,1", "--geometry", "8x4") == 2
    assert run("ftl", "--write-size", 100, "--geometry", "8x4") == 2


def test_estimate_zero_work(files):
    g = estimator.TaskGraph((estimator.Kernel("a", 0),), 1.0)
    task = files["dir"] / "task.json"
    task.write_text(g.to_json())
    out = files["dir"] / "q.json"
    assert run("estimate", "--task", task, "--out", out) == 0
    assert json.loads(out.read_text())["charge_credits"] == 0


def test_estimate_recycled_discount_full(files):
    devs = estimator.reference_devices()
    catalog = [
        {
            "kind": k,
            "peak_flops": d.peak_flops,
            "mem_bandwidth": d.mem_bandwidth,
            "host_link_bandwidth": d.host_link_bandwidth,
            "unit": {**dataclasses.asdict(d.unit), "recycled": True},
        }
        for k, d in devs.items()
    ]
    cat = files["dir"] / "devices.json"
    cat.write_text(json.dumps(catalog))
    out = files["dir"] / "q.json"
    args = ["estimate", "--task", "alexnet", "--devices", cat, "--policy", "recycled-discount", "--discount", "1.0"]
    assert run(*args, "--out", out) == 0
    q = json.loads(out.read_text())
    assert q["E_emb_J"] > 0
    assert q["charge_credits"] == pytest.approx(q["E_ope_J"], rel=1e-12)


def test_estimate_errors(files):
    assert run("estimate", "--task", files["dir"] / "none.json") == 2
    assert run("estimate", "--task", "ntt32k", "--policy", "auction") == 2
    assert run("estimate", "--task", "ntt32k", "--model", files["grid"]) == 2


def test_pareto_frontier(files):
    out = files["dir"] / "front.csv"
    assert run("pareto", "--grid", files["grid"], "--out", out) == 0
    front = out.read_text().splitlines()
    everything = (files["dir"] / "front.all.csv").read_text().splitlines()
    assert front[0] == everything[0] and len(everything) == 1 + 9 * 2
    assert 1 < len(front) < len(everything)
    assert run("pareto", "--grid", files["empty_grid"]) == 2


def test_help_lists_every_flag(capsys):
    parser = cli.build_parser()
    sub = next(a for a in parser._actions if hasattr(a, "choices") and a.choices)
    for name, sp in sub.choices.items():
        with pytest.raises(SystemExit) as exc:
            cli.main([name, "--help"])
        assert exc.value.code == 0
        text = capsys.readouterr().out
        for action in sp._actions:
            for flag in action.option_strings:
                assert flag in text, (name, flag)


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "sustaindc", "frac", "--m", "4", "--alpha-max", "2"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.count("\n") == 3
    res = subprocess.run([sys.executable, "-m", "sustaindc", "frac"], capture_output=True, text=True)
    assert res.returncode == 2
