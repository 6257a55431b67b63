import csv
import io
import json

import numpy as np
import pytest

from intprior import __version__
from intprior.cli import RunConfig, cmd_oracle, cmd_test, main
from intprior.oracle import DEMO_SPECS, exact_bayes_factor


def _run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _strip_timings(report):
    report = dict(report)
    report.pop("timings")
    return report


def test_report_schema(capsys):
    code, out, err = _run(capsys, "test", "--preset", "breast_cancer", "--chains", "2", "--iters", "300")
    assert code == 0 and err == ""
    rep = json.loads(out)
    assert rep["schema_version"] == 1 and rep["version"] == __version__
    assert rep["config"]["null"] == ["receptor"] and rep["config"]["burnin"] == 30
    assert rep["design"]["columns"][0] == "receptor[1]" and rep["design"]["k0"] == 1
    assert len(rep["per_chain"]) == 2
    for row in rep["per_chain"]:
        assert {"log_bf21", "posterior_prob", "mc_std_error", "seed"} <= set(row)
    assert set(rep["pooled"]) == {"mean", "sd", "n_chains"}
    assert len(rep["timings"]["per_chain_seconds"]) == 2


def test_report_deterministic(tmp_path):
    cfg = dict(preset="breast_cancer", chains=2, iters=300, seed=4)
    a = cmd_test(RunConfig(**cfg))
    b = cmd_test(RunConfig(**cfg))
    assert json.dumps(_strip_timings(a), sort_keys=True) == json.dumps(_strip_timings(b), sort_keys=True)


def test_workers_do_not_change_results():
    cfg = dict(preset="breast_cancer", chains=2, iters=300, seed=4, method="ergodic")
    serial = cmd_test(RunConfig(**cfg))
    parallel = cmd_test(RunConfig(workers=2, **cfg))
    assert serial["per_chain"] == parallel["per_chain"]


def test_custom_csv(tmp_path, capsys):
    path = tmp_path / "table.csv"
    path.write_text("stage,receptor,deaths,total\n1,1,2,12\n2,1,9,22\n3,1,12,14\n1,2,5,55\n2,2,17,74\n3,2,9,15\n")
    code, out, _ = _run(
        capsys, "test", "--data", str(path), "--response", "deaths", "--trials", "total",
        "--factor", "receptor=2", "--factor", "stage=1", "--null", "stage", "--iters", "300", "--method", "bic",
    )
    assert code == 0
    rep = json.loads(out)
    assert rep["design"]["columns"][:2] == ["stage[2]", "stage[3]"]
    assert rep["per_chain"][0]["method"] == "bic"


def test_chains_export(tmp_path, capsys):
    dest = tmp_path / "trace.csv"
    code, out, _ = _run(capsys, "chains", "--preset", "breast_cancer", "--iters", "10", "--out", str(dest))
    assert code == 0
    rows = list(csv.reader(dest.open()))
    assert len(rows) == 11
    summary = json.loads(out)
    assert summary["records"] == 10
    assert set(summary["prior_sd"]) == {"receptor[1]", "stage[2]", "stage[3]", "(Intercept)"}


def test_chains_to_stdout(capsys):
    code, out, err = _run(capsys, "chains", "--preset", "breast_cancer", "--iters", "10")
    assert code == 0
    assert len(out.strip().splitlines()) == 11
    assert json.loads(err)["records"] == 10


def test_prior_medians_near_zero(capsys):
    code, out, _ = _run(capsys, "chains", "--preset", "breast_cancer", "--iters", "5000", "--out", "/dev/null")
    medians = json.loads(out)["prior_median"]
    assert all(abs(v) <= 0.5 for v in medians.values())


def test_oracle_matches_library(capsys):
    code, out, _ = _run(capsys, "oracle", "--demo", "default")
    assert code == 0
    rep = json.loads(out)
    assert rep["log_bf21"] == exact_bayes_factor(DEMO_SPECS["default"])
    assert abs(sum(rep["stationary"]) - 1) < 1e-12


def test_oracle_flags(capsys):
    code, out, _ = _run(capsys, "oracle", "--trials", "20", "20", "--successes", "0", "20",
                        "--n1-bound", "10", "--n2-bounds", "5", "5")
    assert code == 0 and json.loads(out)["log_bf21"] > 0


def test_oracle_balanced_symmetry():
    rep = cmd_oracle(DEMO_SPECS["balanced"])
    w = np.array(rep["stationary"])
    perm = DEMO_SPECS["balanced"].flip_permutation()
    assert np.abs(w[perm] - w).max() < 1e-12


@pytest.mark.parametrize(
    "argv, code",
    [
        (["test", "--preset", "nope"], 2),
        (["test", "--preset", "breast_cancer", "--link", "identity"], 2),
        (["frobnicate"], 2),
        (["test"], 1),
        (["test", "--preset", "breast_cancer", "--null", "height"], 1),
        (["test", "--preset", "breast_cancer", "--chains", "0"], 1),
        (["test", "--data", "/no/such/file.csv", "--response", "y", "--null", "x"], 1),
        (["oracle", "--a", "1", "--b", "1", "--trials", "2", "2", "--successes", "1", "1"], 1),
        (["oracle"], 1),
    ],
)
def test_errors_are_json(capsys, argv, code):
    with pytest.raises(SystemExit) if code == 2 else _no_raise() as info:
        rc = main(argv)
    out, err = capsys.readouterr()
    got = info.value.code if code == 2 else rc
    assert got == code and out == ""
    payload = json.loads(err.strip().splitlines()[-1])
    assert set(payload["error"]) == {"type", "message"}


class _no_raise:
    value = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False
