import math
import random

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vecoffload.config import ScenarioConfig, dump_config
from vecoffload.harness import cli, experiments
from vecoffload.harness.experiments import ExperimentPlan, run_plan
from vecoffload.harness.metrics import aggregate, read_csv, steady_metrics, write_csv
from vecoffload.marl.trainer import TrainerConfig

DESK = ScenarioConfig(num_cvs=2, num_rsus=2)


def test_steady_metrics_constant_log():
    m = steady_metrics([3.5] * 80)
    assert (m.steady, m.cv, m.convergence_episode) == (3.5, 0.0, 1)


def test_steady_metrics_ramp():
    ramp = np.linspace(0.0, 1.0, 100)
    m = steady_metrics(ramp)
    # mean of (50..99) / 99
    assert math.isclose(m.steady, 149 / 198, rel_tol=1e-9)
    assert round(m.steady, 4) == 0.7525
    target = 0.95 * 149 / 198
    assert m.convergence_episode == int(np.argmax(ramp >= target)) + 1 == 72


def two_pass_cv(values):
    tail = list(values)[-50:]
    mean = sum(tail) / len(tail)
    var = sum((v - mean) ** 2 for v in tail) / len(tail)
    return math.sqrt(var) / abs(mean)


@given(st.lists(st.floats(-1e3, -1.0), min_size=50, max_size=120))
def test_cv_matches_two_pass_reference(values):
    assert math.isclose(steady_metrics(values).cv, two_pass_cv(values), rel_tol=1e-9, abs_tol=1e-12)


def test_steady_metrics_needs_full_window():
    with pytest.raises(ValueError):
        steady_metrics([1.0] * 49)


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=10), st.randoms())
def test_aggregation_is_permutation_invariant(values, rnd):
    shuffled = values[:]
    rnd.shuffle(shuffled)
    assert aggregate(values) == aggregate(shuffled)


def _is_number(text):
    try:
        float(text)
        return True
    except ValueError:
        return False


cells = st.one_of(
    st.integers(-10**12, 10**12),
    st.floats(allow_nan=False, allow_infinity=False),
    st.text(alphabet="abcxyz_/=-", min_size=1, max_size=8).filter(lambda s: not _is_number(s)),
)


@given(st.lists(st.fixed_dictionaries({"a": cells, "b": cells, "c": cells}), max_size=10))
def test_csv_round_trip(tmp_path_factory, rows):
    path = tmp_path_factory.mktemp("csv") / "x.csv"
    write_csv(path, ("a", "b", "c"), rows)
    back = read_csv(path)
    assert back == rows
    assert all(type(x[k]) is type(y[k]) for x, y in zip(back, rows) for k in "abc")


def plan(tmp_path, **kw):
    base = dict(mode="simulate", out_dir=tmp_path / "run", policy="random", episodes=2, cfg=DESK)
    base.update(kw)
    return ExperimentPlan(**base)


def test_sweep_num_cvs_all_local_cost_increases(tmp_path):
    p = plan(tmp_path, mode="sweep", policy="all_local", sweep_axis="num_cvs", sweep_values=("2", "3"))
    rows = read_csv(run_plan(p) / "summary.csv")
    assert [r["value"] for r in rows] == [2, 3]
    assert rows[0]["cost_mean"] < rows[1]["cost_mean"]
    plot = read_csv(tmp_path / "run" / "plots" / "cost_vs_num_cvs.csv")
    assert [r["x"] for r in plot] == [2.0, 3.0]


def test_fixed_seed_gives_identical_bytes(tmp_path):
    outs = [run_plan(plan(tmp_path, out_dir=tmp_path / name, traces=True)) for name in ("a", "b")]
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.csv"))
    assert len(files) >= 7
    for rel in files:
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes()


def test_manifest_resume_skips_completed_cells(tmp_path, monkeypatch):
    calls = []
    real = experiments.run_cell

    def counting(p, value, seed):
        calls.append((value, seed))
        return real(p, value, seed)

    monkeypatch.setattr(experiments, "run_cell", counting)
    run_plan(plan(tmp_path, seeds=2))
    assert calls == [(None, 0), (None, 1)]
    run_plan(plan(tmp_path, seeds=3))
    assert calls[2:] == [(None, 2)]
    run_plan(plan(tmp_path, seeds=3))
    assert len(calls) == 3
    assert read_csv(tmp_path / "run" / "summary.csv")[0]["seeds"] == 3


def test_dt_toggle_is_local_for_fixed_policies(tmp_path):
    p = plan(tmp_path, mode="sweep", sweep_axis="dt_enabled", sweep_values=("on", "off"), traces=True,
             cfg=DESK.replace(rsu_cpu_hz=4e9, twin_reserve_hz=2e9))
    out = run_plan(p)
    on = read_csv(out / "cells" / "dt_enabled=on" / "seed=0" / "episode_trace.csv")
    off = read_csv(out / "cells" / "dt_enabled=off" / "seed=0" / "episode_trace.csv")
    changed = {k for a, b in zip(on, off) for k in a if a[k] != b[k]}
    assert changed == {"obs_hash"}


def test_dt_toggle_changes_learning_trajectories(tmp_path):
    p = plan(tmp_path, mode="sweep", policy="mappo", sweep_axis="dt_enabled", sweep_values=("on", "off"),
             episodes=3, trainer=TrainerConfig(hidden=(8, 8), epochs=1, episodes_per_update=1),
             cfg=DESK.replace(rsu_cpu_hz=4e9, twin_reserve_hz=2e9))
    out = run_plan(p)
    on = read_csv(out / "cells" / "dt_enabled=on" / "seed=0" / "training_log.csv")
    off = read_csv(out / "cells" / "dt_enabled=off" / "seed=0" / "training_log.csv")
    assert on != off


def test_plan_validation(tmp_path):
    with pytest.raises(ValueError):
        plan(tmp_path, policy="oracle")
    with pytest.raises(ValueError):
        plan(tmp_path, mode="sweep", sweep_axis="num_cvs", sweep_values=("9",))
    with pytest.raises(ValueError):
        plan(tmp_path, mode="sweep", sweep_axis="alpha", sweep_values=("1",))
    assert plan(tmp_path, mode="train").policy == "mappo"


def _cli(tmp_path, *args):
    cfg_path = tmp_path / "desk.yaml"
    dump_config(DESK, cfg_path)
    return cli.main([*args, "--config", str(cfg_path), "--out", str(tmp_path / "out")])


def test_cli_train_then_evaluate(tmp_path, capsys):
    assert _cli(tmp_path, "train", "--episodes", "2", "--run-name", "t", "--episodes-per-update", "1") == 0
    ckpt = tmp_path / "out" / "t" / "cells" / "base" / "seed=0" / "policy.npz"
    assert ckpt.exists()
    assert _cli(tmp_path, "evaluate", "--policy", f"trained:{ckpt}", "--episodes", "2", "--run-name", "e") == 0
    rows = read_csv(tmp_path / "out" / "e" / "cells" / "base" / "seed=0" / "metrics.csv")
    assert len(rows) == 2
    assert str(tmp_path / "out" / "e") in capsys.readouterr().out


def test_cli_simulate_writes_traces(tmp_path):
    assert _cli(tmp_path, "simulate", "--policy", "greedy_grid", "--episodes", "1", "--run-name", "s") == 0
    cell = tmp_path / "out" / "s" / "cells" / "base" / "seed=0"
    assert len(read_csv(cell / "episode_trace.csv")) == 30 * DESK.num_cvs
    assert len(read_csv(cell / "slot_objective.csv")) == 30


def test_cli_failures(tmp_path, monkeypatch):
    bad = tmp_path / "bad.yaml"
    bad.write_text("num_cars: 3\n")
    assert cli.main(["simulate", "--config", str(bad), "--out", str(tmp_path)]) == cli.FAILURE
    assert _cli(tmp_path, "simulate", "--policy", "oracle", "--episodes", "1") == cli.FAILURE

    def broken(outcome, cfg):
        raise experiments.InvariantViolation("forced")

    monkeypatch.setattr(experiments, "check_slot", broken)
    assert _cli(tmp_path, "simulate", "--episodes", "1", "--policy", "random") == cli.INVARIANT
