import csv
import json
from pathlib import Path

import pytest
from click.testing import CliRunner

from seqmv import __version__
from seqmv.cli import main
from seqmv.config import TEMPLATE, config_hash, parse_config, parse_config_text
from seqmv.experiments import DEGENERATE, REGISTRY, ExperimentError, ExperimentSpec, Outcome, _Entry, run_experiment
from seqmv.model import ConfigError

NAMES = ["rate-incremental", "rate-empirical", "global-entropy", "tail-chaos", "iid-benchmark",
         "weighted-threshold", "weighted-rate", "fluctuation", "pde-validate", "bench-marginal"]

SMALL = """
[time]
t_end = 0.5
n_steps = 20

[kernel]
kind = "{kind}"
a = 1.0

[rng]
seed = 17

[experiment]
i_list = [2, 4, 8, 16]
N = 16
"""


def _write(tmp_path, text, name="c.toml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_template_parses():
    cfg, raw = parse_config_text(TEMPLATE)
    assert cfg.time.n_steps == 200 and cfg.kernel.kind == "cosine_diff" and "time" in raw


def test_shipped_configs_parse(configs_dir):
    files = sorted(Path(configs_dir).glob("*.toml"))
    assert len(files) == 10
    for f in files:
        assert parse_config(f).time.t_end > 0


@pytest.mark.parametrize("text, match", [
    ('[time]\nt_end = 1.0\nn_steps = 10\n[kernel]\nkind = "nonsense"\n', r"'nonsense' is not valid; choose one of \["),
    ("[kernel]\nkind = \"zero\"\n", "time.t_end required"),
    ("[time]\nt_end = 1.0\nn_steps = 10\ncolour = 3\n", "colour"),
    ("[time]\nt_end = 1.0\nn_steps = 10\n[weather]\n", "weather"),
    ("[time\n", "line 1"),
    ("[time]\nt_end = -1.0\nn_steps = 10\n", "t_end"),
])
def test_config_errors(text, match):
    with pytest.raises(ConfigError, match=match):
        parse_config_text(text, "x.toml")


def test_config_error_names_the_file(tmp_path):
    p = _write(tmp_path, "[time\n")
    with pytest.raises(ConfigError, match="c.toml"):
        parse_config(p)


def test_config_hash():
    _, raw = parse_config_text(TEMPLATE)
    assert config_hash(raw, 1) == config_hash(dict(reversed(list(raw.items()))), 1)
    assert config_hash(raw, 1) != config_hash(raw, 2)
    assert len(config_hash(raw)) == 64


def test_list_command():
    res = CliRunner().invoke(main, ["list"])
    assert res.exit_code == 0
    assert [line.split()[0] for line in res.output.splitlines()] == sorted(NAMES)
    assert sorted(REGISTRY) == sorted(NAMES)


def test_version():
    res = CliRunner().invoke(main, ["--version"])
    assert res.exit_code == 0 and __version__ in res.output


def test_zero_kernel_rate_is_degenerate(tmp_path):
    cfg = _write(tmp_path, SMALL.format(kind="zero"))
    out = tmp_path / "out"
    res = CliRunner().invoke(main, ["rate-incremental", "--config", str(cfg), "--out", str(out), "--replicas", "4"])
    assert res.exit_code == 0, res.output
    assert "SKIP  slope_in_range" in res.output
    summary = json.loads((out / "summary.json").read_text())
    assert summary["summary"]["fit"] == {"skipped": DEGENERATE}
    assert summary["passed"] is True
    with open(out / "results.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 4 and all(float(r["value"]) == 0.0 for r in rows)


def test_rerun_is_bit_identical(tmp_path):
    cfg = _write(tmp_path, SMALL.format(kind="cosine_diff"))
    runner = CliRunner()
    outs = []
    for j, extra in enumerate(([], ["--threads", "1"], [])):
        out = tmp_path / f"o{j}"
        res = runner.invoke(main, ["rate-incremental", "--config", str(cfg), "--out", str(out), "--replicas", "50",
                                   *extra])
        assert res.exit_code in (0, 1), res.output
        outs.append((out / "results.csv").read_bytes())
    assert outs[0] == outs[1] == outs[2]
    other = tmp_path / "seeded"
    runner.invoke(main, ["rate-incremental", "--config", str(cfg), "--out", str(other), "--replicas", "50",
                         "--seed", "18"])
    assert (other / "results.csv").read_bytes() != outs[0]
    s = json.loads((other / "summary.json").read_text())
    assert s["seed"] == 18


def test_manifest_contents(tmp_path):
    cfg = _write(tmp_path, SMALL.format(kind="tanh_attract"))
    out = tmp_path / "b"
    res = CliRunner().invoke(main, ["bench-marginal", "--config", str(cfg), "--out", str(out)])
    assert res.exit_code == 0, res.output
    s = json.loads((out / "summary.json").read_text())
    assert set(s) >= {"experiment", "config_hash", "seed", "version", "wall_clock_s", "summary", "verdicts", "passed"}
    assert s["experiment"] == "bench-marginal" and s["version"] == __version__ and s["seed"] == 17
    b = s["summary"]
    assert b["extend_kernel_evals"] == 16 * 20
    assert b["resimulate_kernel_evals"] == 20 * 16 * 17 // 2
    assert b["ratio"] == pytest.approx(17 / 2)
    assert all(s["verdicts"].values())


def test_plotdata_files(tmp_path):
    cfg = _write(tmp_path, SMALL.format(kind="cosine_diff"))
    out = tmp_path / "p"
    CliRunner().invoke(main, ["rate-incremental", "--config", str(cfg), "--out", str(out), "--replicas", "20"])
    lines = (out / "plotdata" / "R_i_vs_i_minus_1.csv").read_text().splitlines()
    assert lines[0] == "x,y" and [float(x.split(",")[0]) for x in lines[1:]] == [1.0, 3.0, 7.0, 15.0]


def test_exit_code_for_bad_config(tmp_path):
    cfg = _write(tmp_path, "[time]\nt_end = 1.0\nn_steps = 10\n[kernel]\nkind = \"nonsense\"\n")
    res = CliRunner().invoke(main, ["rate-incremental", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert res.exit_code == 2 and "choose one of" in res.output


def test_exit_code_for_experiment_errors(tmp_path):
    cfg = _write(tmp_path, SMALL.format(kind="cosine_diff"))
    res = CliRunner().invoke(main, ["fluctuation", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert res.exit_code == 2 and "fluctuation" in res.output and "cosine_y" in res.output


def test_exit_code_for_failed_verdict(tmp_path, monkeypatch):
    def fake(cfg, n):
        o = Outcome()
        o.verdicts = {"always_false": False, "skipped": None}
        return o

    monkeypatch.setitem(REGISTRY, "tail-chaos", _Entry(fake, "stub"))
    cfg = _write(tmp_path, SMALL.format(kind="zero"))
    res = CliRunner().invoke(main, ["tail-chaos", "--config", str(cfg), "--out", str(tmp_path / "o")])
    assert res.exit_code == 1
    assert "FAIL  always_false" in res.output and "SKIP  skipped" in res.output
    assert json.loads((tmp_path / "o" / "summary.json").read_text())["passed"] is False


def test_spec_checks(tmp_path):
    cfg, _ = parse_config_text(SMALL.format(kind="zero"))
    with pytest.raises(ValueError):
        ExperimentSpec("not-an-experiment", cfg, tmp_path)
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(ExperimentError, match="not writable"):
        run_experiment(ExperimentSpec("bench-marginal", cfg, blocker / "sub"))


def test_replica_override_is_validated(tmp_path):
    cfg = _write(tmp_path, SMALL.format(kind="zero"))
    res = CliRunner().invoke(main, ["rate-incremental", "--config", str(cfg), "--out", str(tmp_path / "o"),
                                    "--replicas", "1"])
    assert res.exit_code == 2
