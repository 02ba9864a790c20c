import json
import math

import pytest

from renormlab.cli import experiments
from renormlab.cli.config import ConfigError, config_hash, load_config, parse_text, validate
from renormlab.cli.experiments import Outcome, parse_observable
from renormlab.cli.main import main
from renormlab.cli.manifest import read_manifest, read_rows, verify
from renormlab.environment import EnvironmentSpec
from renormlab.stats import pooled

SCALES = """
[scales]
d = {d}
beta = 0.5
a = 1.0
L0 = 5
c0 = 0.05
N = {N}
"""

ENV = """
[environment]
d = {d}
eta0 = {eta0}
"""

BODIES = {
    "audit": "[samples]\nn_samples = 100\nn_points = 8\n",
    "alpha": "[experiment]\nlevel = 0\n[samples]\nn_env = 2\nn_paths = 50\n[paths]\ndt = 0.25\n",
    "controls": (
        "[experiment]\nlevel = 0\n[solver]\nh = 1.25\n[samples]\nn_env = 1\n"
        "[controls]\nn_fields = 1\nalpha = 1.0\ncutoff_radius = 5.0\n"
    ),
    "pi": '[experiment]\nlevel = 0\n[solver]\nh = 1.25\n[samples]\nn_env = 2\n[observables]\nlist = ["const:1", "site_drift:0"]\n',
    "cauchy": '[experiment]\nlevel = 0\n[solver]\nh = 2.5\n[samples]\nn_env = 2\n[observables]\nlist = ["const:1"]\n',
    "compare": "[experiment]\nlevel = 0\n[solver]\nh = 1.25\n[samples]\nn_env = 1\n[compare]\nk = 1\nalpha = 1.0\n",
    "homogenize": (
        '[solver]\nh = 0.5\ntail_tol = 1e-6\n[samples]\nn_env = 3\n[observables]\nlist = ["site_drift:0"]\n'
        "[homogenize]\neps = [1.0, 0.5]\nprobes = [[0.0, 1.0]]\nn_boot = 50\n"
    ),
    "time-average": '[observables]\nlist = ["const:0.5"]\n[time_average]\nT = 2.0\nn_out = 5\n[paths]\ndt = 0.01\n[samples]\nn_paths = 2\n',
}

NEEDS_SCALES = {"alpha", "controls", "pi", "cauchy", "compare", "homogenize"}


def config_text(kind, seed=1, d=1, eta0=0.1, out=None):
    head = f'[experiment]\nkind = "{kind}"\nseed = {seed}\n'
    if out is not None:
        head += f'output = "{out}"\n'
    body = BODIES[kind]
    # merge a second [experiment] table from the body into the header
    if body.startswith("[experiment]\n"):
        extra, _, body = body[len("[experiment]\n"):].partition("[")
        head += extra
        body = "[" + body
    text = head + ENV.format(d=d, eta0=eta0) + body
    if kind in NEEDS_SCALES:
        text += SCALES.format(d=d, N=1 if kind in ("cauchy", "compare") else 0)
    return text


def write_config(tmp_path, kind, name=None, **kw):
    p = tmp_path / (name or f"{kind}.toml")
    p.write_text(config_text(kind, **kw), encoding="utf-8")
    return p


@pytest.mark.parametrize("kind", sorted(BODIES))
def test_every_kind_runs_and_writes_manifest(tmp_path, kind, capsys):
    cfg = write_config(tmp_path, kind)
    out = tmp_path / "out"
    assert main([kind, str(cfg), "--out", str(out)]) == 0
    man, base = read_manifest(out)
    assert verify(man, base) == []
    assert man.kind == kind and man.seed == 1
    assert man.config_hash == config_hash(man.config)
    assert {f.name for f in man.files} == {p.name for p in out.glob("*.csv")}
    for entry in man.files:
        rows = read_rows(out / entry.name)
        assert len(rows) == entry.rows
        assert all(r["config_hash"] == man.config_hash for r in rows)
    assert all(man.assertions.values())
    assert "results.csv" in capsys.readouterr().out


def test_rerun_from_manifest_is_bit_identical(tmp_path):
    cfg = write_config(tmp_path, "pi")
    first, second = tmp_path / "a", tmp_path / "b"
    assert main(["pi", str(cfg), "--out", str(first)]) == 0
    assert main(["run", str(first / "manifest.json"), "--out", str(second)]) == 0
    for p in first.glob("*.csv"):
        assert (second / p.name).read_bytes() == p.read_bytes()


def test_constant_pi_row_is_exact(tmp_path):
    cfg = write_config(tmp_path, "pi")
    assert main(["pi", str(cfg), "--out", str(tmp_path / "o")]) == 0
    rows = read_rows(tmp_path / "o" / "results.csv")
    const = [r for r in rows if r["quantity"] == "pi" and r["label"] == "const:1"]
    assert float(const[0]["value"]) == 1.0


def test_missing_seed_names_field(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text(config_text("audit").replace("seed = 1\n", ""), encoding="utf-8")
    assert main(["audit", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "experiment.seed" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_parse_error_reports_location(tmp_path, capsys):
    p = tmp_path / "bad.toml"
    p.write_text('[experiment]\nkind = "audit"\nseed = \n', encoding="utf-8")
    assert main(["audit", str(p)]) == 2
    assert "line 3" in capsys.readouterr().err
    with pytest.raises(ConfigError, match="line 1"):
        parse_text('{"a": }', "x.json")


def test_type_and_kind_checks(tmp_path):
    data = parse_text(config_text("audit"))
    data["samples"]["n_samples"] = "many"
    with pytest.raises(ConfigError, match="samples.n_samples"):
        validate(data)
    data = parse_text(config_text("audit"))
    data["experiment"]["kind"] = "nope"
    with pytest.raises(ConfigError, match="not one of"):
        validate(data)
    data = parse_text(config_text("homogenize"))
    data["homogenize"]["eps"] = [0.5, 1.0]
    with pytest.raises(ConfigError, match="decreasing"):
        validate(data)
    cfg = write_config(tmp_path, "audit")
    assert main(["alpha", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_defaults_are_echoed(tmp_path):
    cfg = load_config(write_config(tmp_path, "audit"))
    assert cfg.data["environment"]["nu"] == 2.0
    assert cfg.data["experiment"]["budget"] == 1e11


def test_dry_run_and_budget(tmp_path, capsys):
    cfg = write_config(tmp_path, "alpha")
    out = tmp_path / "o"
    assert main(["alpha", str(cfg), "--out", str(out), "--dry-run"]) == 0
    assert "path_steps" in capsys.readouterr().out
    assert not out.exists()
    assert main(["alpha", str(cfg), "--out", str(out), "--budget", "10"]) == 2
    assert "exceeds" in capsys.readouterr().err
    assert not out.exists()


def test_output_directory_required(tmp_path, capsys):
    cfg = write_config(tmp_path, "audit")
    assert main(["audit", str(cfg)]) == 2
    assert "experiment.output" in capsys.readouterr().err
    cfg = write_config(tmp_path, "audit", name="with_out.toml", out=str(tmp_path / "o"))
    assert main(["run", str(cfg)]) == 0


def test_failed_assertion_exits_one(tmp_path, monkeypatch):
    def failing(cfg, workers):
        return Outcome(tables={"results": [{"quantity": "x", "level": 0, "label": "", "value": 1.0}]},
                       assertions={"always": False})

    monkeypatch.setitem(experiments.RUNNERS, "audit", failing)
    cfg = write_config(tmp_path, "audit")
    assert main(["audit", str(cfg), "--out", str(tmp_path / "o")]) == 1
    man, _ = read_manifest(tmp_path / "o")
    assert man.assertions == {"always": False}


def test_usage_errors():
    assert main([]) == 2
    assert main(["bogus"]) == 2


def test_observable_parsing():
    spec = EnvironmentSpec(d=2, eta0=0.1)
    assert parse_observable("const:2", spec).bound == 2.0
    assert parse_observable("site_drift:1:3", spec).name == "site_drift1"
    assert parse_observable("window:0.5", spec).radius == 0.5
    with pytest.raises(ConfigError):
        parse_observable("nope:1", spec)
    with pytest.raises(ConfigError):
        parse_observable("drift", spec)


def _run_alpha(tmp_path, seed):
    cfg = write_config(tmp_path, "alpha", name=f"alpha{seed}.toml", seed=seed)
    out = tmp_path / f"seed{seed}"
    assert main(["alpha", str(cfg), "--out", str(out)]) == 0
    return out


def test_report_single_and_pooled(tmp_path, capsys):
    a, b = _run_alpha(tmp_path, 1), _run_alpha(tmp_path, 2)
    rep = tmp_path / "rep"
    assert main(["report", str(a), "--out", str(rep)]) == 0
    single = read_rows(rep / "summary.csv")
    src = read_rows(a / "results.csv")[0]
    assert len(single) == 1 and single[0]["value"] == src["value"] and single[0]["stderr"] == src["stderr"]
    assert main(["report", str(a), str(b), "--out", str(rep)]) == 0
    both = read_rows(rep / "summary.csv")
    assert len(both) == 1
    ra, rb = read_rows(a / "results.csv")[0], read_rows(b / "results.csv")[0]
    m, se, n = pooled([float(ra["value"]), float(rb["value"])], [float(ra["stderr"]), float(rb["stderr"])], [2, 2])
    assert float(both[0]["value"]) == m and float(both[0]["stderr"]) == se and int(both[0]["count"]) == n
    assert math.isclose(se, math.hypot(float(ra["stderr"]), float(rb["stderr"])) / 2)
    assert "alpha" in (rep / "summary.txt").read_text()


def test_report_detects_corruption(tmp_path, capsys):
    a = _run_alpha(tmp_path, 1)
    p = a / "results.csv"
    p.write_text(p.read_text() + "tampered\n")
    assert main(["report", str(a)]) == 1
    assert "results.csv: hash mismatch" in capsys.readouterr().err
    man = json.loads((a / "manifest.json").read_text())
    man["config"]["experiment"]["seed"] = 99
    (a / "manifest.json").write_text(json.dumps(man))
    assert main(["report", str(a)]) == 1
    assert "config hash mismatch" in capsys.readouterr().err
