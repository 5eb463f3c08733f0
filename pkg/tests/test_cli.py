import csv
import json
from pathlib import Path

import jsonschema
import numpy as np
import pytest

from genheck.cli import ModelConfig, build_parser, fit_report, ingest, load_schema, main
from genheck.errors import ParseError, SchemaError
from genheck.estimate import fit
from genheck.simulate import make_scenario

DATA = Path(__file__).parent / "data"
MEPS = DATA / "meps_synthetic.csv"
MEPS_CONFIG = DATA / "meps_ghm.json"
S1 = ["--outcome", "y", "--selection", "u", "--outcome-covariates", "x1,x2",
      "--selection-covariates", "x1,x2,x3", "--dispersion-covariates", "x1", "--correlation-covariates", "x1"]


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


@pytest.fixture(scope="module")
def s1_csv(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "s1.csv"
    assert main(["simulate", "--scenario", "1", "--n", "600", "--seed", "5", "--out", str(path)]) == 0
    return path


def meps_config():
    return ModelConfig.from_dict(json.loads(MEPS_CONFIG.read_text()))


# ---- ingest ----------------------------------------------------------------------

def test_ingest_fixture():
    d = ingest(MEPS, meps_config())
    assert d.n == 200 and d.n - d.n_selected == 36
    assert d.dims == (7, 8, 4, 3)
    assert d.names["kappa"] == ["(Intercept)", "female", "totchr"]
    np.testing.assert_array_equal(d.X[:, 0], 1.0)


def test_ingest_missing_outcome_names_row(tmp_path):
    rows = [[1.0, 1, 0.2]] * 10
    rows[6] = ["", 1, 0.2]
    p = write_csv(tmp_path / "a.csv", ["y", "u", "x"], rows)
    cfg = ModelConfig("y", "u", ["x"], ["x"])
    with pytest.raises(ValueError, match="row 7"):
        ingest(p, cfg)


def test_ingest_missing_marker_where_censored(tmp_path):
    p = write_csv(tmp_path / "b.csv", ["y", "u", "x"], [["NA", 0, 1.0], ["", 0, 2.0], [3.5, 1, 0.5]])
    d = ingest(p, ModelConfig("y", "u", ["x"], ["x"]))
    np.testing.assert_array_equal(d.y, [0.0, 0.0, 3.5])


def test_ingest_errors(tmp_path):
    cfg = ModelConfig("y", "u", ["x"], ["x"])
    p = write_csv(tmp_path / "c.csv", ["y", "u", "x"], [[1.0, 1, "abc"]])
    with pytest.raises(ParseError, match=r"row 1, column 'x'"):
        ingest(p, cfg)
    p = write_csv(tmp_path / "d.csv", ["y", "u"], [[1.0, 1]])
    with pytest.raises(SchemaError, match="x"):
        ingest(p, cfg)
    p = write_csv(tmp_path / "e.csv", ["y", "u", "x"], [[1.0, 2, 1.0]])
    with pytest.raises(ValueError, match="0 or 1"):
        ingest(p, cfg)
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    with pytest.raises(SchemaError):
        ingest(empty, cfg)


def test_config_unknown_key():
    with pytest.raises(SchemaError):
        ModelConfig.from_dict({"outcome": "y", "selection": "u", "formula": "y ~ x"})


def test_explicit_constant_matches_default_intercepts(tmp_path):
    rows = list(csv.reader(open(MEPS)))
    header, body = rows[0], rows[1:]
    p = write_csv(tmp_path / "const.csv", header + ["const"], [r + ["1"] for r in body])
    base = json.loads(MEPS_CONFIG.read_text())
    explicit = {k: (["const"] + v if k.endswith("covariates") else v) for k, v in base.items()}
    explicit["intercepts"] = {e: False for e in ("outcome", "selection", "dispersion", "correlation")}
    f1 = fit(ingest(MEPS, ModelConfig.from_dict(base)))
    f2 = fit(ingest(p, ModelConfig.from_dict(explicit)))
    np.testing.assert_allclose(f1.params, f2.params, atol=1e-10)
    assert f1.loglik == pytest.approx(f2.loglik, abs=1e-10)


# ---- commands --------------------------------------------------------------------

def test_fit_report_schema(tmp_path, capsys):
    out = tmp_path / "fit.json"
    assert main(["fit", str(MEPS), "--config", str(MEPS_CONFIG), "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    jsonschema.validate(report, load_schema())
    assert report["model"] == "generalized" and report["n"] == 200 and report["converged"]
    assert len(report["coefficients"]) == 22
    err = capsys.readouterr().err
    assert err.startswith("# config: ")
    assert "lambexp" in err and str(report["loglik"]) not in err


def test_fit_classic_report(tmp_path):
    out = tmp_path / "classic.json"
    assert main(["fit", str(MEPS), "--config", str(MEPS_CONFIG), "--model", "classic", "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    jsonschema.validate(report, load_schema())
    eqs = [c["equation"] for c in report["coefficients"]]
    assert eqs.count("dispersion") == 1 and eqs.count("correlation") == 1


def test_fit_stdout(capsys):
    assert main(["fit", str(MEPS), "--config", str(MEPS_CONFIG)]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["n_selected"] == 164


def test_exit_code_nonconvergence(tmp_path, capsys):
    out = tmp_path / "nc.json"
    code = main(["fit", str(MEPS), "--config", str(MEPS_CONFIG), "--max-iter", "1", "--out", str(out)])
    assert code == 2
    assert "NonConvergence" in capsys.readouterr().err
    report = json.loads(out.read_text())
    jsonschema.validate(report, load_schema())
    assert report["converged"] is False


def test_exit_code_input_errors(tmp_path, capsys):
    empty = tmp_path / "empty.csv"
    empty.write_text("")
    assert main(["fit", str(empty), "--outcome", "y", "--selection", "u"]) == 1
    assert "SchemaError" in capsys.readouterr().err
    assert main(["fit", str(tmp_path / "missing.csv"), "--outcome", "y", "--selection", "u"]) == 1
    assert main(["fit", str(MEPS), "--outcome", "lambexp"]) == 1


def test_exclusion_warning(s1_csv, capsys):
    args = ["fit", str(s1_csv), "--outcome", "y", "--selection", "u", "--outcome-covariates", "x1,x2",
            "--selection-covariates", "x1,x2", "--dispersion-covariates", "x1", "--correlation-covariates", "x1"]
    main(args + ["--out", str(s1_csv.parent / "w.json")])
    assert "exclusion restriction" in capsys.readouterr().err
    main(["fit", str(s1_csv), *S1, "--out", str(s1_csv.parent / "w2.json")])
    assert "exclusion restriction" not in capsys.readouterr().err


def test_test_command(s1_csv, capsys):
    assert main(["test", str(s1_csv), *S1, "--restrict", "correlation:x1"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["restriction"]["coefficients"] == ["x1"]
    assert [t["kind"] for t in out["tests"]] == ["LR", "Gradient", "Wald"]
    assert all(t["df"] == 1 for t in out["tests"])
    assert main(["test", str(s1_csv), *S1, "--restrict", "correlation:x9"]) == 1


def test_residuals_and_envelope(s1_csv, capsys):
    assert main(["residuals", str(s1_csv), *S1]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "index,u,theoretical_quantile,residual,lower,upper"
    assert main(["envelope", str(s1_csv), *S1, "--n-sim", "19", "--seed", "2"]) == 0
    rows = [r.split(",") for r in capsys.readouterr().out.splitlines()[1:]]
    assert len(rows) == len(lines) - 1
    assert all(float(r[4]) <= float(r[5]) for r in rows)


def test_cook_subsample(s1_csv, capsys):
    assert main(["cook", str(s1_csv), *S1, "--subsample", "15", "--seed", "1"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "index,gcd,threshold,flagged" and len(lines) == 16
    vals = [float(r.split(",")[1]) for r in lines[1:]]
    assert all(v >= 0 for v in vals)


def test_simulate_fit_round_trip(tmp_path):
    path = tmp_path / "big.csv"
    assert main(["simulate", "--scenario", "1", "--n", "5000", "--seed", "12", "--out", str(path)]) == 0
    out = tmp_path / "big.json"
    assert main(["fit", str(path), *S1, "--out", str(out)]) == 0
    coefs = json.loads(out.read_text())["coefficients"]
    est = np.array([c["estimate"] for c in coefs])
    se = np.array([c["std_error"] for c in coefs])
    # report order is beta, gamma, lambda, kappa
    truth = make_scenario(1, 5000).theta_true.flatten()
    assert np.all(np.abs(est - truth) < 4 * se)


def test_mc_threads_byte_identical(tmp_path):
    outs = []
    for t in ("1", "3"):
        p = tmp_path / f"mc{t}.csv"
        main(["mc", "--scenario", "1", "--n", "250", "--reps", "4", "--seed", "9", "--threads", t, "--out", str(p)])
        outs.append(p.read_bytes())
    assert outs[0] == outs[1]


def test_mc_tests_outputs(tmp_path):
    rej = tmp_path / "rej.csv"
    js = tmp_path / "mc.json"
    assert main(["mc", "--n", "250", "--reps", "2", "--null", "--tests", "--rejection-out", str(rej),
                 "--json", str(js), "--out", str(tmp_path / "est.csv")]) == 0
    assert rej.read_text().startswith("test,level,rejection_rate")
    assert json.loads(js.read_text())["n_reps"] == 2


def test_threads_env_default(monkeypatch):
    monkeypatch.setenv("GENHECK_THREADS", "4")
    args = build_parser().parse_args(["mc"])
    assert args.threads == 4


def test_fit_report_nonconverged_has_nulls(small_fit):
    import copy
    f = copy.copy(small_fit)
    f.converged = False
    rep = fit_report(f)
    jsonschema.validate(rep, load_schema())
    assert rep["coefficients"][0]["p"] is None
