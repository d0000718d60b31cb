import json

import pytest

from anisofrac import cli
from anisofrac.core import load_grid_function, read_header
from anisofrac.experiments import high_order_deflation, inequality_audit

SQUARE_GRID = {"domain": [[0, 1], [0, 1]], "intervals": 8}


def write(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg))
    return str(path)


def energy_cfg(**over):
    cfg = {
        "grid": SQUARE_GRID,
        "params": {"s": [1, 0.6], "p": 2},
        "problem": {"kind": "energy", "function": {"kind": "tent", "center": 0.5, "width": 0.4}},
    }
    cfg.update(over)
    return cfg


def test_defaults_are_filled():
    cfg = cli.parse_config(energy_cfg())
    assert cfg.data["quadrature"] == {"near_cut": 1.0, "ratio": 1.05, "nodes_per_interval": 3, "tail_cut": None}
    assert cfg.data["output"] == {"directory": "output", "precision": 12, "format": "csv"}
    assert cfg.data["seed"] == 0
    assert cfg.data["solver"]["step_rule"] == "bb"
    assert cfg.params.s == (1.0, 0.6) and cfg.params.p == (2.0, 2.0)
    assert cfg.data["problem"]["function"]["width"] == [0.4, 0.4]


@pytest.mark.parametrize(
    "mutate,message",
    [
        (lambda c: c["params"].update(s=[1, 1.5]), r"params.s[1] outside (0,1]"),
        (lambda c: c["params"].update(p=[2, 1]), r"params.p[1] outside (1,inf)"),
        (lambda c: c.update(extra=1), "config.extra is not a recognized field"),
        (lambda c: c["problem"].update(source={}), "problem.source is not a recognized field"),
        (lambda c: c["problem"]["function"].update(kind="gauss"), "problem.function.kind"),
        (lambda c: c["problem"]["function"].update(radius=1), "problem.function.radius"),
        (lambda c: c["problem"]["function"].update(center=[0.9, 0.5]), "problem.function: support"),
        (lambda c: c["grid"].update(intervals=1), "grid.intervals[0] must be >= 2"),
        (lambda c: c.pop("grid"), "grid is required"),
        (lambda c: c["quadrature"].update(near_cut=2), "quadrature.near_cut outside"),
        (lambda c: c["output"].update(format="h5"), "output.format"),
        (lambda c: c["problem"].update(kind="plot"), "problem.kind must be one of"),
    ],
)
def test_validation_names_the_field(mutate, message):
    cfg = energy_cfg(quadrature={}, output={})
    cfg["grid"] = dict(SQUARE_GRID)
    mutate(cfg)
    with pytest.raises(cli.ConfigError) as err:
        cli.parse_config(cfg)
    assert message in str(err.value)


def gs_cfg(q, s=(1, 0.6)):
    return {
        "grid": SQUARE_GRID,
        "params": {"s": list(s), "p": 2},
        "problem": {"kind": "ground_state", "nonlinearity": {"q": q}},
    }


def test_subcriticality_is_enforced():
    with pytest.raises(cli.ConfigError, match="subcriticality"):
        cli.parse_config(gs_cfg(2))
    with pytest.raises(cli.ConfigError, match="p\\* = 8"):
        cli.parse_config(gs_cfg(9))
    cli.parse_config(gs_cfg(4))


def test_sweep_spec():
    cfg = gs_cfg(4)
    cfg["params"] = {"sweep": {"s0": [1, 0.6], "vary": 0, "k": [1, 3]}, "p": 2}
    parsed = cli.parse_config(cfg)
    assert [m.s[0] for m in parsed.sweep] == [0.5, 0.75, 0.875]
    cfg["params"]["sweep"] = {"s0": [1, 0.6], "values": [0.9, 0.5]}
    with pytest.raises(cli.ConfigError, match="monotonically"):
        cli.parse_config(cfg)
    cfg["params"]["sweep"] = {"s0": [0.9, 0.6], "k": [1, 3]}
    with pytest.raises(cli.ConfigError, match=r"params.sweep.s0\[0\] must be 1"):
        cli.parse_config(cfg)


def test_s_lists_must_move_toward_the_limit():
    cfg = {"grid": {"domain": [[-4, 4]], "intervals": 64},
           "problem": {"kind": "bbm", "function": {"kind": "tent"}, "s_list": [0.9, 0.5]}}
    with pytest.raises(cli.ConfigError, match="strictly increasing"):
        cli.parse_config(cfg)
    cfg["problem"]["kind"] = "ms"
    cli.parse_config(cfg)


def test_hash_ignores_output_directory():
    a = energy_cfg(output={"directory": "a"})
    b = energy_cfg(output={"directory": "b"})
    assert cli.parse_config(a).sha256 == cli.parse_config(b).sha256
    c = energy_cfg(output={"directory": "a", "precision": 8})
    assert cli.parse_config(a).sha256 != cli.parse_config(c).sha256


def test_validate_and_exit_codes(tmp_path, capsys):
    assert cli.main(["validate", write(tmp_path, energy_cfg())]) == 0
    out = json.loads(capsys.readouterr().out)
    assert len(out["config_sha256"]) == 64
    bad = energy_cfg()
    bad["params"]["s"] = [1, 1.5]
    assert cli.main(["validate", write(tmp_path, bad)]) == 2
    assert "params.s[1] outside (0,1]" in capsys.readouterr().err
    assert cli.main(["validate", str(tmp_path / "missing.json")]) == 3
    (tmp_path / "broken.json").write_text("{")
    assert cli.main(["validate", str(tmp_path / "broken.json")]) == 2


def test_run_bbm_and_verify(tmp_path):
    cfg = {"grid": {"domain": [[-4, 4]], "intervals": 256},
           "problem": {"kind": "bbm", "function": {"kind": "tent"}, "s_list": [0.5, 0.9, 0.99, 0.999]}}
    out = tmp_path / "out"
    assert cli.main(["--output-dir", str(out), "run", write(tmp_path, cfg)]) == 0
    text = (out / "bbm.csv").read_text().splitlines()
    assert text[1] == "param,value,reference,abs_err,rel_err,near,mid,tail,flags"
    rel = [float(line.split(",")[4]) for line in text[2:]]
    assert rel[1] >= rel[2] >= rel[3]
    side = json.loads((out / "run.json").read_text())
    assert side["status"] == "ok" and side["monotone_tail"]
    assert side["config_sha256"] in text[0]
    assert {"numpy", "scipy", "anisofrac"} <= set(side["versions"])
    assert cli.main(["verify", str(out)]) == 0
    (out / "bbm.csv").write_text("\n".join(text[:-1]) + "\n")
    assert cli.main(["verify", str(out)]) == 1


def test_dirichlet_zero_source(tmp_path):
    cfg = {"grid": SQUARE_GRID, "params": {"s": [1, 0.6], "p": 2},
           "problem": {"kind": "dirichlet", "source": {"kind": "zero"}},
           "output": {"directory": str(tmp_path / "z")}}
    assert cli.main(["run", write(tmp_path, cfg)]) == 0
    u = load_grid_function(tmp_path / "z" / "solution.csv")
    assert u.max_abs() == 0.0
    sha = json.loads((tmp_path / "z" / "run.json").read_text())["config_sha256"]
    assert read_header(tmp_path / "z" / "solution.csv")["config_sha256"] == sha
    assert cli.main(["verify", str(tmp_path / "z")]) == 0


def test_nonconvergence_exits_one(tmp_path):
    cfg = {"grid": SQUARE_GRID, "params": {"s": [1, 0.6], "p": 2},
           "problem": {"kind": "dirichlet", "source": {"kind": "bump", "center": [0.5, 0.5], "width": 0.8}},
           "solver": {"max_iter": 1}}
    out = tmp_path / "o"
    assert cli.main(["--output-dir", str(out), "run", write(tmp_path, cfg)]) == 1
    side = json.loads((out / "run.json").read_text())
    assert side["status"] == "failed" and "did not converge" in side["failures"][0]


def test_audit_determinism_and_threads(tmp_path):
    cfg = {"seed": 42, "problem": {"kind": "audit", "trials": 2, "p_values": [2]}}
    path = write(tmp_path, cfg)
    assert cli.main(["--output-dir", str(tmp_path / "a"), "run", path]) == 0
    assert cli.main(["--threads", "3", "--output-dir", str(tmp_path / "b"), "run", path]) == 0
    assert (tmp_path / "a" / "audit.csv").read_bytes() == (tmp_path / "b" / "audit.csv").read_bytes()


def test_audit_failure_is_replayable(tmp_path, monkeypatch):
    def corrupted(*args, **kw):
        return inequality_audit(*args, energy_hook=high_order_deflation(), **kw)

    monkeypatch.setattr(cli, "inequality_audit", corrupted)
    out = tmp_path / "bad"
    cfg = {"seed": 42, "problem": {"kind": "audit", "trials": 1, "p_values": [2]}}
    assert cli.main(["--output-dir", str(out), "run", write(tmp_path, cfg)]) == 1
    side = json.loads((out / "run.json").read_text())
    assert side["status"] == "failed"
    violations = json.loads((out / "violations" / "violations.json").read_text())
    assert violations and violations[0]["check"] == "order_comparison"
    assert (out / "violations" / "trial_0000.csv").exists()
    assert cli.main(["verify", str(out)]) == 0


def test_io_error_exit(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert cli.main(["--output-dir", str(blocker / "sub"), "run", write(tmp_path, energy_cfg())]) == 3


def test_repeat_runs_are_byte_identical(tmp_path):
    cfg = gs_cfg(4)
    cfg["params"] = {"sweep": {"s0": [1, 0.6], "vary": 0, "k": [1, 3]}, "p": 2}
    path = write(tmp_path, cfg)
    for name in ("x", "y"):
        assert cli.main(["--output-dir", str(tmp_path / name), "run", path]) == 0
    assert (tmp_path / "x" / "ground_state.csv").read_bytes() == (tmp_path / "y" / "ground_state.csv").read_bytes()
    side = json.loads((tmp_path / "x" / "run.json").read_text())
    assert side["checks"]["all_converged"]
    assert any("precompactness" in n for n in side["notes"])


def test_threads_flag_must_be_positive(tmp_path):
    assert cli.main(["--threads", "0", "validate", write(tmp_path, energy_cfg())]) == 2


def test_energy_run_outputs(tmp_path):
    out = tmp_path / "e"
    assert cli.main(["--output-dir", str(out), "run", write(tmp_path, energy_cfg())]) == 0
    rows = (out / "energy.csv").read_text().splitlines()[2:]
    assert len(rows) == 2
    side = json.loads((out / "run.json").read_text())
    per = [float(r.split(",")[1]) for r in rows]
    assert side["total"] == pytest.approx(per[0] / 2 + per[1] / 2, rel=1e-11)
