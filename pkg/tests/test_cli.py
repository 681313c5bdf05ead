import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from dirichlet_errors import cli
from dirichlet_errors._rng import THREADS_ENV
from dirichlet_errors.report import COLUMNS, SensitivityReport, read_csv

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.fixture(autouse=True)
def _threads_env(monkeypatch):
    monkeypatch.setenv(THREADS_ENV, "1")


def run(argv, capsys):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def write(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


BS_MODEL = {"s0": 100, "sigma": 0.2, "r": 0.05, "T": 1.0}


# every shipped configuration runs -----------------------------------------------

@pytest.mark.parametrize("command,config,extra", [
    ("price", "price_call.json", []),
    ("sens", "sens_softplus.json", ["--paths", "2000"]),
    ("levelvol", "levelvol_rational.json", ["--paths", "100"]),
    ("ibp", "ibp_affine.json", ["--paths", "20000"]),
    ("perturb-check", "perturb_softplus.json", ["--paths", "2000"]),
    ("triangle", "triangle.json", []),
])
def test_shipped_configs_run(command, config, extra, capsys):
    code, out, err = run([command, CONFIGS / config, *extra], capsys)
    assert code == 0, err
    meta, rows = read_csv(out)
    assert meta["command"] == command and rows
    assert len(meta["config_sha256"]) == 64


def test_csv_header_and_metadata(capsys):
    code, out, _ = run(["price", CONFIGS / "price_call.json", "--seed", "7"], capsys)
    lines = out.splitlines()
    assert [l for l in lines if l.startswith("#")][:2] == ["# command=price", "# seed=7"]
    header = next(l for l in lines if not l.startswith("#"))
    assert header == ",".join(COLUMNS)


def test_json_format(capsys):
    code, out, _ = run(["triangle", CONFIGS / "triangle.json", "--format", "json"], capsys)
    doc = json.loads(out)
    assert doc["columns"] == list(COLUMNS)
    gap = [r for r in doc["rows"] if r["quantity"] == "max_relative_gap"][0]["value"]
    assert gap <= 1e-12


def test_seventeen_digits_round_trip():
    rep = SensitivityReport("x", 0, {})
    v = 0.1 + 0.2
    rep.add("q", 0.5, v, gamma_B=np.pi)
    _, rows = read_csv(rep.to_csv())
    assert rows[0]["value"] == v and rows[0]["gamma_B"] == np.pi
    assert rows[0]["bias"] is None


def test_pointwise_linear_payoff_gamma(tmp_path, capsys):
    # f(x) = x at B = 0: Gamma_B[V_t] = S_t^2 sigma^2 t
    cfg = {"model": BS_MODEL, "payoff": {"type": "forward", "K": 0}, "times": [0.5], "B": 0.0,
           "sources": ["B"]}
    code, out, err = run(["sens", write(tmp_path, cfg)], capsys)
    assert code == 0, err
    _, rows = read_csv(out)
    v = [r for r in rows if r["quantity"] == "V"][0]
    S = 100 * np.exp((0.05 - 0.02) * 0.5)
    assert v["gamma_B"] == pytest.approx(S * S * 0.04 * 0.5, rel=1e-12)


# determinism ------------------------------------------------------------------------

@pytest.mark.parametrize("command,config,extra", [
    ("sens", "sens_softplus.json", ["--paths", "5000"]),
    ("levelvol", "levelvol_rational.json", ["--paths", "64"]),
    ("ibp", "ibp_affine.json", ["--paths", "9000"]),
])
def test_output_identical_across_threads(command, config, extra, tmp_path, capsys):
    outs = []
    for th in ("1", "3"):
        o = tmp_path / f"out{th}.csv"
        code, _, err = run([command, CONFIGS / config, *extra, "--threads", th, "--out", o], capsys)
        assert code == 0, err
        outs.append(o.read_bytes())
    assert outs[0] == outs[1]


def test_seed_changes_output(capsys):
    a = run(["sens", CONFIGS / "sens_softplus.json", "--paths", "500", "--seed", "1"], capsys)[1]
    b = run(["sens", CONFIGS / "sens_softplus.json", "--paths", "500", "--seed", "2"], capsys)[1]
    assert a != b


def test_plot_written_and_deterministic(tmp_path, capsys):
    pngs = []
    for th in ("1", "2"):
        o = tmp_path / f"r{th}.csv"
        code, _, err = run(["sens", CONFIGS / "sens_softplus.json", "--paths", "500", "--threads", th,
                            "--out", o, "--plot"], capsys)
        assert code == 0, err
        png = o.with_suffix(".png")
        assert png.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
        pngs.append(png.read_bytes())
    assert pngs[0] == pngs[1]


# error handling and exit codes ---------------------------------------------------------

def test_missing_field_names_it(tmp_path, capsys):
    cfg = {"model": {"s0": 100, "r": 0.0, "T": 1.0}, "payoff": {"type": "call", "K": 100}, "times": [0.0]}
    code, _, err = run(["price", write(tmp_path, cfg)], capsys)
    assert code == 2 and "'sigma'" in err


def test_unknown_key_rejected(tmp_path, capsys):
    cfg = {"model": BS_MODEL, "payoff": {"type": "call", "K": 100}, "times": [0.0], "colour": 1}
    code, _, err = run(["price", write(tmp_path, cfg)], capsys)
    assert code == 2 and "colour" in err


def test_malformed_json_reports_location(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"model": \n  [1, }')
    code, _, err = run(["price", p], capsys)
    assert code == 2 and "line 2" in err


def test_flag_not_applicable(capsys):
    code, _, err = run(["price", CONFIGS / "price_call.json", "--theta", "0.1"], capsys)
    assert code == 2 and "--theta" in err


def test_plot_needs_out(capsys):
    code, _, err = run(["price", CONFIGS / "price_call.json", "--plot"], capsys)
    assert code == 2


def test_disabled_source_is_capability_error(tmp_path, capsys):
    cfg = {"model": {**BS_MODEL, "switches": {"r": False}}, "payoff": {"type": "forward"},
           "times": [0.5], "B": 0.0, "sources": ["B", "r"]}
    code, _, err = run(["sens", write(tmp_path, cfg)], capsys)
    assert code == 3 and "r" in err


def test_bias_needs_ou_kernel_is_capability_error(tmp_path, capsys):
    cfg = {"model": BS_MODEL, "payoff": {"type": "forward"}, "times": [0.5], "B": 0.0,
           "kernel": {"type": "fractional", "q": 0.3, "truncation": 1000}}
    code, out, err = run(["sens", write(tmp_path, cfg)], capsys)
    # a non-OU kernel still reports the Gamma columns, with the bias left blank
    assert code == 0, err
    _, rows = read_csv(out)
    assert rows[0]["bias"] is None and rows[0]["gamma_B"] > 0


def test_budget_overrun_is_numeric_error(tmp_path, capsys):
    cfg = json.loads((CONFIGS / "levelvol_rational.json").read_text())
    cfg["cost_ceiling"] = 1e3
    code, _, err = run(["levelvol", write(tmp_path, cfg)], capsys)
    assert code == 4 and "ceiling" in err


def test_nonsmooth_hedge_rows_skipped(tmp_path, capsys):
    cfg = {"model": BS_MODEL, "payoff": {"type": "call", "K": 100}, "times": [0.5], "B": 0.1}
    code, out, _ = run(["sens", write(tmp_path, cfg)], capsys)
    _, rows = read_csv(out)
    assert code == 0 and {r["quantity"] for r in rows} == {"S", "V"}


def test_bad_threads(capsys):
    assert run(["price", CONFIGS / "price_call.json", "--threads", "0"], capsys)[0] == 2


def test_console_script_installed():
    assert shutil.which("dirichlet-errors") is not None
