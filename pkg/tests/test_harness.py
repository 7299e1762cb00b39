import csv
import warnings

import numpy as np
import pytest

from qmle import harness
from qmle.cli import main
from qmle.harness import (DESK, METRICS_HEADER, PRESETS, Arm, RunConfig, UsageError, _MetricsWriter, aggregate,
                          align, bimodal_modes, dqn_feasible, make_run_config, mean_stderr, read_config_file,
                          run, run_cell)


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _write_cell(directory, agent, seed, steps, returns):
    with _MetricsWriter(directory / f"{agent}_seed{seed}.csv", "test", agent, seed) as w:
        for s, r in zip(steps, returns):
            w.row(s, r)


def test_header_is_exact(tmp_path):
    _write_cell(tmp_path, "a", 0, [0], [1.0])
    assert (tmp_path / "a_seed0.csv").read_text().splitlines()[0] == (
        "preset,agent,seed,env_step,episodic_return,td_loss,mle_loss_delta,"
        "mle_loss_categorical,greedy_q_estimate,wall_ms")
    assert len(METRICS_HEADER) == 10


def test_env_step_must_increase(tmp_path):
    with _MetricsWriter(tmp_path / "x.csv", "p", "a", 0) as w:
        w.row(0, 1.0)
        with pytest.raises(ValueError):
            w.row(0, 2.0)


def test_rows_are_flushed_as_written(tmp_path):
    with _MetricsWriter(tmp_path / "x.csv", "p", "a", 0) as w:
        w.row(0, 1.0)
        assert len(_rows(tmp_path / "x.csv")) == 2


# ------------------------------------------------------------ aggregation


def test_identical_seeds_have_zero_stderr(tmp_path):
    for seed in range(3):
        _write_cell(tmp_path, "a", seed, [0, 10, 20], [1.0, 2.0, 3.0])
    summary = aggregate(tmp_path, final_window=1)
    assert summary["a"]["mean"] == 3.0 and summary["a"]["stderr"] == 0.0
    rows = _rows(tmp_path / "a.agg")
    assert [float(r[2]) for r in rows[1:]] == [0.0, 0.0, 0.0]


def test_two_constant_seeds(tmp_path):
    _write_cell(tmp_path, "a", 0, [0, 10], [1.0, 1.0])
    _write_cell(tmp_path, "a", 1, [0, 10], [3.0, 3.0])
    s = aggregate(tmp_path)["a"]
    assert s["mean"] == 2.0
    assert s["stderr"] == pytest.approx(1.0)  # sd 1.414 (ddof=1) over sqrt(2)


def test_ragged_grids_warn_and_carry_last_value():
    curves = [{"step": np.array([0, 10, 20]), "ret": np.array([1.0, 2.0, 3.0])},
              {"step": np.array([0, 20]), "ret": np.array([5.0, 7.0])}]
    with pytest.warns(UserWarning, match="ragged"):
        grid, table = align(curves)
    assert grid.tolist() == [0, 10, 20]
    assert table[1].tolist() == [5.0, 5.0, 7.0]


def test_aligned_grids_do_not_warn():
    curves = [{"step": np.array([0, 10]), "ret": np.array([1.0, 2.0])}] * 2
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        align(curves)


def test_mean_stderr_matches_numpy(rng):
    table = rng.normal(size=(7, 5))
    mean, se = mean_stderr(table)
    np.testing.assert_allclose(mean, table.mean(axis=0))
    np.testing.assert_allclose(se, table.std(axis=0, ddof=1) / np.sqrt(7))


def test_aggregate_empty_directory_is_usage_error(tmp_path):
    with pytest.raises(UsageError):
        aggregate(tmp_path)


# ------------------------------------------------------------ configuration


def test_unknown_preset_exits_with_usage_error(tmp_path, capsys):
    assert main(["run", "no-such-preset", "--out", str(tmp_path)]) == 2
    assert "unknown preset" in capsys.readouterr().err


@pytest.mark.parametrize("setting", ["no_such_field=1", "m_target=abc", "m_target"])
def test_bad_overrides_exit_with_usage_error(tmp_path, setting):
    assert main(["run", "marl-climb", "--steps", "10", "--set", setting, "--out", str(tmp_path)]) == 2


def test_run_config_validation(tmp_path):
    with pytest.raises(UsageError):
        RunConfig("marl-climb", (), 10, 5, tmp_path)
    with pytest.raises(UsageError):
        RunConfig("marl-climb", (0,), 0, 5, tmp_path)


def test_config_file_sections(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nseeds = 1,2\nsteps = 50\nagent.lr_q = 0.01\n[agent]\nm_target = 7\n")
    cfg = read_config_file(path)
    assert cfg["seeds"] == "1,2" and cfg["steps"] == "50"
    assert cfg["overrides"] == {"lr_q": "0.01", "m_target": "7"}
    path.write_text("[bogus]\nx = 1\n")
    with pytest.raises(UsageError):
        read_config_file(path)


def test_cli_overrides_config_file(tmp_path):
    path = tmp_path / "run.ini"
    path.write_text("[run]\nseeds = 3\nsteps = 40\neval_interval = 20\n")
    assert main(["run", "fig1-tabular", "--config", str(path), "--steps", "30", "--out", str(tmp_path)]) == 0
    rows = _rows(tmp_path / "fig1-tabular" / "true-pg_seed3.csv")
    assert int(rows[-1][3]) == 30


def test_out_defaults_to_environment(monkeypatch, tmp_path):
    monkeypatch.setenv("QMLE_OUT", str(tmp_path))
    assert make_run_config("marl-climb").out_dir == tmp_path


def test_every_preset_builds():
    for preset in PRESETS.values():
        assert preset.seeds
        if preset.arms:
            assert preset.arms(DESK)


def test_list_presets(capsys):
    assert main(["list-presets"]) == 0
    out = capsys.readouterr().out
    for name in PRESETS:
        assert name in out


# ------------------------------------------------------------ runs


def test_reruns_are_byte_identical(tmp_path):
    for sub in ("a", "b"):
        assert main(["run", "marl-climb", "--seeds", "0", "--steps", "300", "--eval-interval", "100",
                     "--eval-episodes", "2", "--set", "start_size=50", "--set", "batch_size=16",
                     "--out", str(tmp_path / sub)]) == 0
    for name in ("qmle_seed0.csv", "vdn_seed0.csv"):
        a = (tmp_path / "a" / "marl-climb" / name).read_bytes()
        assert a == (tmp_path / "b" / "marl-climb" / name).read_bytes()
    rows = _rows(tmp_path / "a" / "marl-climb" / "qmle_seed0.csv")
    assert [int(r[3]) for r in rows[1:]] == [0, 100, 200, 300]
    assert all(r[9] == "0" for r in rows[1:])
    assert float(rows[-1][5]) > 0  # td_loss present, so updates ran


def test_timing_flag_records_wall_clock(tmp_path):
    cfg = make_run_config("marl-climb", seeds=[0], steps=50, eval_interval=50, out=tmp_path,
                          eval_episodes=1, timing=True)
    run(cfg)
    rows = _rows(tmp_path / "marl-climb" / "vdn_seed0.csv")
    assert int(rows[-1][9]) > 0


def test_curriculum_switch_is_logged(tmp_path, caplog):
    arm = next(a for a in PRESETS["curriculum"].arms(DESK) if a.switch_step)
    arm = Arm(arm.label, arm.env_id, arm.config, arm.build, arm.prepare, 100, arm.on_switch)
    cfg = RunConfig("curriculum", (0,), 200, 100, tmp_path, eval_episodes=1)
    with caplog.at_level("INFO", logger=harness.__name__):
        summary = run_cell(cfg, arm, 0, tmp_path)
    assert summary["switch_step"] >= 100
    assert "switched" in caplog.text


def test_endpoints_table(tmp_path):
    cfg = make_run_config("fig2-dpg-vs-qmle", seeds=[0], steps=20, eval_interval=20, out=tmp_path,
                          eval_episodes=1)
    results = run(cfg)
    rows = _rows(tmp_path / "fig2-dpg-vs-qmle" / "endpoints.csv")
    assert rows[0] == ["agent", "seed", "endpoint", "dist_global_mode", "dist_local_mode"]
    assert len(rows) == 1 + len(results) == 10
    glob, local = bimodal_modes()
    for r in rows[1:]:
        e = np.array([float(x) for x in r[2].split()])
        assert float(r[3]) == pytest.approx(np.linalg.norm(e - glob))
        assert float(r[4]) == pytest.approx(np.linalg.norm(e - local))


def test_bimodal_modes_are_stationary():
    surface = harness.BimodalSurface.default(2)
    for mode in bimodal_modes(surface):
        assert np.linalg.norm(surface.grad(mode)) < 1e-6
    glob, local = bimodal_modes(surface)
    assert surface.value(glob) > surface.value(local)


def test_dqn_feasibility_boundary():
    assert dqn_feasible(12) and not dqn_feasible(13)
