import csv
import io
import math

import numpy as np
import pytest

from dyingexperts import cli, core, harness


def run_cli(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


# -- exponent fit ----------------------------------------------------------------


def test_fit_exact_sqrt():
    groups = {T: [3.0 * math.sqrt(T)] * 30 for T in (2**10, 2**12, 2**14)}
    fit = harness.fit_exponent(groups)
    assert fit.slope == pytest.approx(0.5, abs=1e-6)
    assert fit.low == pytest.approx(0.5, abs=1e-6) and fit.high == pytest.approx(0.5, abs=1e-6)


def test_fit_linear():
    groups = {T: [0.1 * T] * 30 for T in (100, 1000, 10000)}
    assert harness.fit_exponent(groups).slope == pytest.approx(1.0)


def test_fit_interval_brackets_slope():
    rng = np.random.default_rng(0)
    groups = {T: list(math.sqrt(T) * rng.uniform(0.5, 1.5, 40)) for T in (256, 1024, 4096, 16384)}
    fit = harness.fit_exponent(groups)
    assert fit.low <= fit.slope <= fit.high


def test_fit_non_positive_is_untestable():
    fit = harness.fit_exponent({100: [0.0] * 30, 200: [1.0] * 30, 400: [2.0] * 30})
    assert not fit.testable


def test_fit_needs_three_horizons():
    with pytest.raises(ValueError):
        harness.fit_exponent({100: [1.0], 200: [2.0]})


# -- runs ----------------------------------------------------------------------------


def test_parse_eta():
    assert harness.parse_eta("fixed:0.25").eta == 0.25
    assert harness.parse_eta("anytime").c == 8.0
    assert harness.parse_eta("anytime:2").c == 2.0
    assert harness.parse_eta("adahedge").kind == "adahedge"
    with pytest.raises(ValueError):
        harness.parse_eta("fixed")


@pytest.mark.parametrize("learner", harness.LEARNERS)
def test_every_learner_runs(learner):
    row, rec = harness.run_one(harness.RunSpec(learner, "unknown-lb", K=5, T=120, m=2), seed=3)
    assert row["ranking_regret"] == pytest.approx(row["learner_loss"] - row["best_ordering_loss"])
    assert rec.distributions.shape == (120, 5)


def test_parallel_rows_identical(monkeypatch):
    spec = harness.RunSpec("hpu", "bernoulli", K=4, T=200, m=2)
    serial = harness.run_replicas(spec, range(6))
    monkeypatch.setenv("DYEXP_THREADS", "3")
    assert harness.worker_count() == 3
    assert harness.run_replicas(spec, range(6)) == serial


def test_verify_suites_pass_small():
    for name in harness.SUITES:
        assert harness.run_suite(name, k_max=4, trials=5).passed, name


def test_switch_once_instance():
    inst = harness.switch_once_instance(0, K=8, T=900, m=4)
    _, witness = core.best_ordering_loss(inst.losses, inst.schedule)
    changes = sum(a != b for a, b in zip(witness, witness[1:]))
    assert inst.schedule.m == 4 and changes == 1


# -- command line ------------------------------------------------------------------


def test_cli_run_shape(capsys):
    code, out, _ = run_cli(["run", "--learner", "hpu", "--adversary", "unknown-lb", "--k", "8", "--m", "3",
                            "--t", "2400", "--seeds", "100"], capsys)
    rows = list(csv.DictReader(io.StringIO(out)))
    assert code == 0 and len(rows) == 100
    assert tuple(rows[0]) == harness.RUN_COLUMNS
    assert [int(r["seed"]) for r in rows] == list(range(100))


def test_cli_run_is_deterministic(capsys):
    argv = ["run", "--learner", "flipflop", "--adversary", "gap", "--k", "4", "--t", "300", "--seeds", "3", "--seed", "11"]
    a = run_cli(argv, capsys)[1]
    b = run_cli(argv, capsys)[1]
    assert a == b


def test_cli_floats_round_trip(capsys):
    out = run_cli(["run", "--learner", "hpu", "--adversary", "bernoulli", "--k", "3", "--t", "50"], capsys)[1]
    row = next(csv.DictReader(io.StringIO(out)))
    assert "%.17g" % float(row["learner_loss"]) == row["learner_loss"]


def test_cli_unknown_names_exit_one(capsys):
    code, _, err = run_cli(["run", "--learner", "bogus", "--adversary", "bernoulli"], capsys)
    assert code == 1 and "hpu" in err
    code, _, err = run_cli(["run", "--learner", "hpu", "--adversary", "bogus"], capsys)
    assert code == 1 and "unknown-lb" in err


def test_cli_usage_error_exit_one(capsys):
    with pytest.raises(SystemExit) as exc:
        cli.main(["run", "--learner"])
    assert exc.value.code == 1
    code, _, _ = run_cli(["run", "--learner", "hpu", "--adversary", "known-lb", "--m", "3"], capsys)
    assert code == 1


def test_cli_verify_thm7(capsys):
    code, out, _ = run_cli(["verify", "--suite", "thm7", "--k-max", "6", "--trials", "50", "--tol", "1e-9"], capsys)
    assert code == 0 and out.strip().endswith("result=PASS")


def test_cli_verify_failure_exit_two(capsys, monkeypatch):
    def broken(*args, **kwargs):
        rep = harness.SuiteReport("thm7")
        rep.add(False, "forced")
        return rep

    monkeypatch.setattr(harness, "run_suite", broken)
    code, out, _ = run_cli(["verify", "--suite", "thm7"], capsys)
    assert code == 2 and "FAIL" in out


def test_cli_sweep_and_fit(capsys, tmp_path):
    path = tmp_path / "sweep.csv"
    code, _, _ = run_cli(["sweep", "--param", "t", "--values", "1024,4096,16384", "--learner", "hpu",
                          "--adversary", "unknown-lb", "--k", "8", "--m", "3", "--seeds", "30", "--out", str(path)],
                         capsys)
    assert code == 0
    rows = list(csv.DictReader(open(path)))
    assert tuple(rows[0]) == harness.SWEEP_COLUMNS and len(rows) == 90
    fit = harness.fit_exponent(harness.group_rows(rows))
    assert 0.4 <= fit.slope <= 0.6
    code, out, _ = run_cli(["fit", str(path)], capsys)
    assert code == 0 and out.startswith("slope=")


def test_cli_dump_instance_and_replay(capsys, tmp_path):
    inst = tmp_path / "inst.txt"
    trace = tmp_path / "trace.csv"
    code, out, _ = run_cli(["run", "--learner", "adahedge", "--adversary", "unknown-lb", "--k", "4", "--m", "2",
                            "--t", "60", "--seed", "5", "--dump-instance", str(inst), "--trace", str(trace)], capsys)
    assert code == 0
    assert next(csv.reader(open(trace)))[:3] == ["round", "learner_loss", "cumulative_loss"]
    assert "gap" in open(trace).readline()
    code, out2, _ = run_cli(["run", "--learner", "adahedge", "--adversary", "file", "--instance", str(inst)], capsys)
    a = next(csv.DictReader(io.StringIO(out)))
    b = next(csv.DictReader(io.StringIO(out2)))
    assert a["ranking_regret"] == b["ranking_regret"]
