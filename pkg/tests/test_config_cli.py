import csv
import io
import json
from importlib import resources

import pytest

from mimocdma import cli
from mimocdma import config as cf
from mimocdma.errors import ConfigError

SMALL = """\
version: 1
scenario:
  scheme: STS
  n_rx: 2
  antennas: 2
  beta: 1.0
  snr_db: 10.0
  true_prior: {kind: gaussian}
  channel_samples: 400
sweep:
  beta: {start: 0.5, stop: 1.0, step: 0.25}
"""

SIM = SMALL + """\
simulation:
  K: 8
  L: 8
  trials: 400
  detector: lmmse
"""


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


def run(argv):
    buf = io.StringIO()
    return cli.main(argv, buf), buf.getvalue()


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_unknown_key_names_key_and_line(tmp_path, capsys):
    text = SMALL.replace("  beta: 1.0\n", "  beta: 1.0\n  betta: 2.0\n")
    with pytest.raises(ConfigError) as exc:
        cf.parse(text)
    assert exc.value.key == "scenario.betta"
    assert exc.value.line == 7
    code, _ = run(["solve", "--config", write(tmp_path, text), "--out", str(tmp_path)])
    assert code == 1
    err = capsys.readouterr().err
    assert "betta" in err and "line 7" in err


def test_bad_value_and_missing_block():
    with pytest.raises(ConfigError) as exc:
        cf.parse(SMALL.replace("scheme: STS", "scheme: XYZ"))
    assert exc.value.key == "scenario.scheme" and exc.value.line == 3
    with pytest.raises(ConfigError):
        cf.parse("version: 1\n")
    with pytest.raises(ConfigError):
        cf.parse("version: 1\nscenario: [1, 2\n")


def test_discrete_prior_and_grid():
    cfg = cf.parse(SMALL.replace("{kind: gaussian}", "{kind: discrete, points: [[1, 0], [-1, 0]], power: 4}"))
    prior = cf.build_prior(cfg["scenario"]["true_prior"], 1.0)
    assert prior.P == pytest.approx(4.0)
    assert cf.grid({"start": 0.5, "stop": 1.0, "step": 0.25}) == [0.5, 0.75, 1.0]
    assert cf.grid([]) == []
    assert cf.power_from_snr(10.0, 2.0) == pytest.approx(20.0)


def test_hash_stable_and_seed_sensitive():
    a, b = cf.parse(SMALL), cf.parse(SMALL)
    assert a.hash() == b.hash()
    assert a.with_seed(7).hash() != a.hash()


def test_bundled_configs_parse():
    names = [p.name for p in resources.files("mimocdma").joinpath("configs").iterdir() if p.name.endswith(".cfg")]
    assert len(names) >= 3
    for n in names:
        cf.parse(resources.files("mimocdma").joinpath("configs", n).read_text(), n)


def test_zero_load_gives_zero_capacity(tmp_path):
    path = write(tmp_path, SMALL.replace("beta: 1.0", "beta: 0.0"))
    code, _ = run(["solve", "--config", path, "--out", str(tmp_path)])
    assert code == 0
    rows = [r for r in read_csv(tmp_path / "solve.csv") if r["status"] == "ok"]
    assert rows and all(float(r["c_sep"]) == 0.0 and float(r["c_joint"]) == 0.0 for r in rows)


def test_empty_grid_gives_header_only(tmp_path):
    path = write(tmp_path, SMALL.replace("{start: 0.5, stop: 1.0, step: 0.25}", "[]"))
    code, _ = run(["sweep", "--config", path, "--out", str(tmp_path)])
    assert code == 0
    lines = (tmp_path / "sweep.csv").read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("config_hash")


def test_sweep_deterministic_with_hash(tmp_path):
    path = write(tmp_path, SMALL)
    outs = []
    for d in ("a", "b"):
        code, _ = run(["sweep", "--config", path, "--out", str(tmp_path / d)])
        assert code == 0
        outs.append((tmp_path / d / "sweep.csv").read_bytes())
    assert outs[0] == outs[1]
    rows = read_csv(tmp_path / "a" / "sweep.csv")
    h = cf.load(path).hash()
    assert {r["config_hash"] for r in rows} == {h}
    assert sorted({float(r["beta"]) for r in rows}) == [0.5, 0.75, 1.0]
    assert (tmp_path / "a" / "plot_sweep.py").exists()


def test_json_format(tmp_path):
    path = write(tmp_path, SMALL)
    code, _ = run(["solve", "--config", path, "--out", str(tmp_path), "--format", "json"])
    assert code == 0
    rows = json.loads((tmp_path / "solve.json").read_text())
    assert rows[0]["status"] == "ok" and isinstance(rows[0]["selected"], bool)


def test_simulate_writes_moments(tmp_path):
    path = write(tmp_path, SIM)
    code, _ = run(["simulate", "--config", path, "--out", str(tmp_path)])
    assert code == 0
    rows = read_csv(tmp_path / "moments.csv")
    assert len(rows) == 28


def test_validate_pass_and_wrong_noise_fails(tmp_path):
    good = write(tmp_path, SIM, "good.cfg")
    code, text = run(["validate", "--config", good, "--out", str(tmp_path / "g")])
    assert code == 0, text
    assert "FAIL" not in text
    bad = write(tmp_path, SIM.replace("  detector: lmmse\n", "  detector: lmmse\n  trials: 4000\n")
                .replace("  trials: 400\n", "") + "validate:\n  lmmse_check: false\n  prediction: {n0: 4.0}\n",
                "bad.cfg")
    code, text = run(["validate", "--config", bad, "--out", str(tmp_path / "b")])
    assert code == 3
    assert "FAIL" in text


def test_simulate_needs_block(tmp_path):
    code, _ = run(["simulate", "--config", write(tmp_path, SMALL), "--out", str(tmp_path)])
    assert code == 1
