import csv
import json
from pathlib import Path

import pytest
from pydantic import ValidationError

from vqmargin import cli
from vqmargin.config import ExperimentConfig, SCHEMA_VERSION, build_distribution, load_config
from vqmargin.experiments import CONVERGENCE_COLUMNS, MINIMAX_COLUMNS, TIMING_COLUMNS

ROOT = Path(__file__).resolve().parents[1]
ADV = {"family": "adversarial", "k": 3, "d": 2, "M": 1.0, "delta": 1 / 3, "sigma": [1, -1]}


def _write(tmp_path, payload, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(payload))
    return p


def _conv(tmp_path, **kw):
    cfg = {"command": "convergence", "distribution": ADV, "k": 3, "n_grid": [32, 64, 128],
           "reps": 3, "restarts": 3, "n_mc": 2000, "master_seed": 11, "out_dir": str(tmp_path / "o")}
    cfg.update(kw)
    return cfg


@pytest.mark.parametrize("path", sorted((ROOT / "configs").glob("*.json")), ids=lambda p: p.name)
def test_shipped_configs_validate(path):
    cfg = load_config(path)
    if cfg.distribution is not None and not getattr(cfg.distribution, "retuned", False):
        build_distribution(cfg.distribution)


def test_unknown_field_rejected():
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate({**_conv(Path(".")), "repz": 3})
    bad = dict(_conv(Path(".")))
    bad["distribution"] = {**ADV, "colour": "red"}
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate(bad)


@pytest.mark.parametrize("grid", [[64, 32], [32, 32], [0, 10], [5]])
def test_n_grid_validation(grid):
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate(_conv(Path("."), n_grid=grid))


@pytest.mark.parametrize("seed", [-1, 2 ** 64])
def test_master_seed_range(seed):
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate(_conv(Path("."), master_seed=seed))
    ExperimentConfig.model_validate(_conv(Path("."), master_seed=2 ** 64 - 1))


def test_adversarial_spec_tuning_exclusive():
    with pytest.raises(ValidationError):
        ExperimentConfig.model_validate(_conv(Path("."), distribution={**ADV, "n": 100}))


def test_config_is_frozen():
    cfg = ExperimentConfig.model_validate(_conv(Path(".")))
    with pytest.raises(ValidationError):
        cfg.reps = 5


def test_convergence_outputs_golden(tmp_path, capsys):
    p = _write(tmp_path, _conv(tmp_path))
    assert cli.main(["convergence", "--config", str(p)]) == 0
    out = tmp_path / "o"
    with open(out / "convergence.csv") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == CONVERGENCE_COLUMNS == ("n", "rep", "excess_risk", "excess_risk_se", "erm_method")
    assert len(rows) == 1 + 3 * 3
    with open(out / "timings.csv") as fh:
        assert tuple(next(csv.reader(fh))) == TIMING_COLUMNS
    summary = json.loads((out / "convergence_summary.json").read_text())
    assert summary["schema_version"] == SCHEMA_VERSION
    assert {"config", "fit", "summary"} <= set(summary)
    assert "slope" in capsys.readouterr().out


def test_minimax_outputs_golden(tmp_path):
    cfg = {"command": "minimax-demo", "distribution": {"family": "adversarial", "k": 3, "d": 2, "M": 1.0},
           "k": 3, "n_grid": [64, 128], "reps": 2, "restarts": 2, "n_mc": 1000, "out_dir": str(tmp_path / "m")}
    assert cli.main(["minimax-demo", "--config", str(_write(tmp_path, cfg))]) == 0
    with open(tmp_path / "m" / "minimax.csv") as fh:
        assert tuple(next(csv.reader(fh))) == MINIMAX_COLUMNS
    s = json.loads((tmp_path / "m" / "minimax_summary.json").read_text())
    assert s["schema_version"] == SCHEMA_VERSION


def test_margin_report_outputs(tmp_path):
    cfg = json.loads((ROOT / "configs" / "margin_finite.json").read_text())
    cfg["out_dir"] = str(tmp_path / "mr")
    assert cli.main(["margin-report", "--config", str(_write(tmp_path, cfg))]) == 0
    rep = json.loads((tmp_path / "mr" / "margin_report.json").read_text())
    assert rep["schema_version"] == SCHEMA_VERSION and rep["margin"]["verdict"] == "holds"
    opt = json.loads((tmp_path / "mr" / "optimal.json").read_text())
    assert opt["schema_version"] == SCHEMA_VERSION


def test_erm_outputs(tmp_path):
    cfg = {"command": "erm", "distribution": ADV, "k": 3, "n_grid": [200], "out_dir": str(tmp_path / "e")}
    assert cli.main(["erm", "--config", str(_write(tmp_path, cfg))]) == 0
    rep = json.loads((tmp_path / "e" / "erm.json").read_text())
    assert rep["schema_version"] == SCHEMA_VERSION


def test_exit_code_bad_config(tmp_path, capsys):
    p = _write(tmp_path, {**_conv(tmp_path), "bogus": 1})
    assert cli.main(["convergence", "--config", str(p)]) == 2
    assert "invalid configuration" in capsys.readouterr().err
    assert cli.main(["convergence", "--config", str(tmp_path / "missing.json")]) == 2
    p = _write(tmp_path, _conv(tmp_path), "c2.json")
    assert cli.main(["margin-report", "--config", str(p)]) == 2
    assert cli.main(["convergence", "--config", str(p), "--seed", "-3"]) == 2
    assert cli.main(["convergence", "--config", str(p), "--threads", "0"]) == 2
    mr = {"command": "margin-report", "distribution": ADV, "k": 1, "out_dir": str(tmp_path / "k1")}
    assert cli.main(["margin-report", "--config", str(_write(tmp_path, mr, "k1.json"))]) == 2
    mm_cfg = {"command": "minimax-demo", "distribution": {"family": "uniform_ball", "M": 1.0, "d": 2},
              "k": 3, "n_grid": [10, 20], "out_dir": str(tmp_path / "mm")}
    assert cli.main(["minimax-demo", "--config", str(_write(tmp_path, mm_cfg, "mm.json"))]) == 2


def test_exit_code_certification(tmp_path, capsys):
    qg = {"family": "quasi_gaussian", "means": [[0.5, 0.0], [-0.5, 0.0], [0.0, 0.5]],
          "sigma": 0.02, "weights": [0.3, 0.3, 0.4], "M": 1.0}
    p = _write(tmp_path, _conv(tmp_path, distribution=qg))
    assert cli.main(["convergence", "--config", str(p)]) == 3
    assert "margin-report" in capsys.readouterr().err


def test_verify_single_suite(tmp_path):
    assert cli.main(["verify", "--suite", "hellinger", "--out", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "verify_report.json").read_text())
    assert rep["passed"] and [s["name"] for s in rep["suites"]] == ["hellinger"]
    assert rep["schema_version"] == SCHEMA_VERSION


def test_verify_detects_mutated_tiebreak(tmp_path):
    code = cli.main(["verify", "--suite", "geometry", "--suite", "erm-oracle", "--mutate-tiebreak",
                     "--out", str(tmp_path)])
    assert code != 0
    rep = json.loads((tmp_path / "verify_report.json").read_text())
    assert not any(s["passed"] for s in rep["suites"])


def test_verify_rejects_unknown_suite():
    with pytest.raises(SystemExit):
        cli.main(["verify", "--suite", "nope"])


def test_determinism_across_threads(tmp_path):
    p = _write(tmp_path, _conv(tmp_path))
    outs = []
    for t in (1, 2, 8):
        d = tmp_path / f"t{t}"
        assert cli.main(["convergence", "--config", str(p), "--threads", str(t), "--out", str(d)]) == 0
        outs.append({f: (d / f).read_bytes() for f in ("convergence.csv", "convergence_summary.json")})
    assert outs[0] == outs[1] == outs[2]
    # the seed override changes the result
    d = tmp_path / "other"
    cli.main(["convergence", "--config", str(p), "--seed", "12", "--out", str(d)])
    assert (d / "convergence.csv").read_bytes() != outs[0]["convergence.csv"]
