"""Named experiment presets, a seeded cell runner, CSV learning curves and aggregation.

Each preset expands to (arm, seed) cells. A cell owns its environment, its
agent and its RNG streams, and writes one CSV of evaluation points. Greedy
returns are averaged over ``eval_episodes`` episodes per evaluation point.
"""
from __future__ import annotations

import configparser
import csv
import logging
import math
import os
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .agent import AgentConfig, QMLEAgent
from .baselines import (DPGAgent, DQNAgent, InfeasibleActionSpaceError, MultiAgentQMLE, VDNAgent,
                        check_enumerable, continuous_bandit_true_pg, gaussian_objective,
                        qmle_global_variant, qmle_local_variant, run_true_pg, uniform_only_variant)
from .envs import BimodalSurface, make_env

log = logging.getLogger(__name__)

METRICS_HEADER = ("preset", "agent", "seed", "env_step", "episodic_return", "td_loss",
                  "mle_loss_delta", "mle_loss_categorical", "greedy_q_estimate", "wall_ms")

# desk-scale network and replay settings shared by every learning preset
DESK = AgentConfig(
    m_target=32, m_greedy=100, batch_size=32, start_size=500, replay_period=2, target_period=500,
    capacity=100_000, lr_q=1e-3, lr_argmax=1e-3, obs_width=32, act_width=32, predictor_hidden=32,
)

STRATEGIES = ("epsilon", "gaussian", "uniform")
LOCAL_START = (-0.3, -0.3)


class UsageError(ValueError):
    pass


@dataclass
class Arm:
    """One agent configuration inside a preset."""

    label: str
    env_id: str
    config: AgentConfig
    build: Callable  # (obs_dim, space, config, rng) -> agent
    prepare: Callable | None = None  # agent -> None, applied after construction
    switch_step: int | None = None
    on_switch: Callable | None = None  # agent -> None
    endpoint: bool = False


@dataclass
class Preset:
    name: str
    description: str
    steps: int
    eval_interval: int
    seeds: tuple[int, ...]
    arms: Callable[[AgentConfig], list[Arm]] | None = None
    analytic: Callable | None = None  # (RunConfig, out_dir) -> None for gradient-only presets


@dataclass
class RunConfig:
    preset: str
    seeds: tuple[int, ...]
    steps: int
    eval_interval: int
    out_dir: Path
    eval_episodes: int = 10
    overrides: dict[str, str] = field(default_factory=dict)
    timing: bool = False
    jobs: int = 1

    def __post_init__(self):
        if not self.seeds:
            raise UsageError("seed list must be non-empty")
        if self.steps < 1 or self.eval_interval < 1 or self.eval_episodes < 1:
            raise UsageError("steps, eval interval and eval episodes must be positive")
        # validates every key and value against the AgentConfig schema
        DESK.with_overrides(self.overrides)


# ------------------------------------------------------------ agent builders


def _qmle(obs_dim, space, config, rng):
    return QMLEAgent(obs_dim, space, config, rng)


def _dpg(obs_dim, space, config, rng):
    return DPGAgent(obs_dim, space, config, rng)


def _dqn(obs_dim, space, config, rng):
    return DQNAgent(obs_dim, space, config, rng)


def _vdn(obs_dim, space, config, rng):
    return VDNAgent(obs_dim, space, config, rng)


def _marl_qmle(obs_dim, space, config, rng):
    return MultiAgentQMLE(obs_dim, space, config, rng)


def _place_delta(point):
    def prepare(agent):
        if isinstance(agent, DPGAgent):
            agent.place_actor(np.asarray(point))
            return
        idx = next(i for i, p in enumerate(agent.predictors) if p.family == "delta")
        agent.predictors[idx].place(agent.pred_stores[idx], np.asarray(point))
        agent.pred_targets[idx].load_from(agent.pred_stores[idx])
    return prepare


def endpoint_of(agent) -> np.ndarray:
    """Terminal delta parameter: the action the actor or delta predictor outputs."""
    obs = np.ones((1, 1))
    if isinstance(agent, DPGAgent):
        return agent.policy(obs)[0]
    return agent.delta_head(obs)[0]


# ------------------------------------------------------------ presets


def _fig2_arms(base: AgentConfig) -> list[Arm]:
    bandit = base.replace(predictors=("delta",), ratios=(0.0, 1.0), m_target=32, m_greedy=32,
                          replay_period=1, target_period=10, capacity=20_000)
    arms = []
    for strategy in STRATEGIES:
        cfg = bandit.replace(exploration=strategy)
        prep = _place_delta(LOCAL_START)
        arms.append(Arm(f"dpg-{strategy}", "bimodal2d", cfg, _dpg, prep, endpoint=True))
        arms.append(Arm(f"qmle-local-{strategy}", "bimodal2d", qmle_local_variant(cfg), _qmle, prep,
                        endpoint=True))
        arms.append(Arm(f"qmle-global-{strategy}", "bimodal2d", qmle_global_variant(cfg), _qmle, prep,
                        endpoint=True))
    return arms


def _budget_arms(base: AgentConfig) -> list[Arm]:
    # floor rounding leaves the default ratios with no predictor samples at m=2, so both
    # budgets split evenly between uniform draws and the delta predictor
    cfg = base.replace(predictors=("delta",), ratios=(0.5, 0.5))
    return [Arm(f"qmle-m{m}", "synth:d=6", cfg.replace(m_target=m, m_greedy=m), _qmle) for m in (2, 1000)]


def _amortization_arms(base: AgentConfig) -> list[Arm]:
    small = base.replace(m_target=2, m_greedy=2)
    delta = small.replace(predictors=("delta",), ratios=(0.5, 0.5))
    arms = []
    for d in (4, 6):
        arms.append(Arm(f"qmle-delta-d{d}", f"synth:d={d}", delta, _qmle))
        arms.append(Arm(f"uniform-only-d{d}", f"synth:d={d}", uniform_only_variant(small), _qmle))
    return arms


def _actionin_arms(base: AgentConfig) -> list[Arm]:
    cfg = base.replace(predictors=("categorical",), ratios=(0.9, 0.1))
    return [Arm("qmle", "synth:d=2:disc=3", cfg, _qmle), Arm("dqn", "synth:d=2:disc=3", cfg, _dqn)]


def _marl_arms(base: AgentConfig) -> list[Arm]:
    cfg = base.replace(predictors=("delta",), ratios=(0.5, 0.5), m_target=64, m_greedy=64,
                       replay_period=1, target_period=200, capacity=20_000, delta_sigma=0.05,
                       exploration="uniform")
    return [Arm("qmle", "climb", cfg, _marl_qmle), Arm("vdn", "climb", cfg, _vdn)]


CURRICULUM_SWITCH = 6_000
CONTINUOUS_RATIOS = (0.45, 0.5, 0.05)


def _curriculum_arms(base: AgentConfig) -> list[Arm]:
    discrete = base.replace(ratios=(0.9, 0.0, 0.1))
    continuous = base.replace(ratios=CONTINUOUS_RATIOS)

    def to_continuous(agent):
        agent.set_sampling(agent.space.continuous(), CONTINUOUS_RATIOS)

    return [
        Arm("discrete-only", "synth:d=6:disc=3", discrete, _qmle),
        Arm("continuous-only", "synth:d=6", continuous, _qmle),
        Arm("discrete-to-continuous", "synth:d=6", discrete, _qmle, prepare=_restrict_to_grid,
            switch_step=CURRICULUM_SWITCH, on_switch=to_continuous),
    ]


def _restrict_to_grid(agent):
    agent.set_sampling(agent.space.discretized(3))


TABULAR_REWARDS = tuple(round(0.1 * k, 1) for k in range(1, 11))


def _eval_steps(run: RunConfig) -> list[int]:
    """Every eval-interval multiple, plus the final step."""
    steps = list(range(0, run.steps + 1, run.eval_interval))
    return steps if steps[-1] == run.steps else steps + [run.steps]


def _fig1_tabular(run: RunConfig, out: Path) -> None:
    rewards = np.array(TABULAR_REWARDS)
    for seed in run.seeds:
        # exact gradients: the seed only labels the cell
        probs = run_true_pg(rewards, lr=1.0, steps=run.steps)
        path = out / f"true-pg_seed{seed}.csv"
        with _MetricsWriter(path, run.preset, "true-pg", seed) as w:
            for step in _eval_steps(run):
                w.row(step, float(probs[step] @ rewards))
        np.savetxt(out / f"true-pg_seed{seed}_probs.csv", probs[_eval_steps(run)], delimiter=",",
                   header=",".join(f"arm{k}" for k in range(len(rewards))), comments="", fmt="%.17g")


FIG1_CONTINUOUS_SIGMA = 0.1


def _fig1_continuous(run: RunConfig, out: Path) -> None:
    surface = BimodalSurface.default(1)
    for seed in run.seeds:
        for family in ("delta", "gaussian"):
            traj = continuous_bandit_true_pg(surface, family, init=LOCAL_START[0], lr=0.01, steps=run.steps,
                                             sigma=FIG1_CONTINUOUS_SIGMA)
            with _MetricsWriter(out / f"{family}-pg_seed{seed}.csv", run.preset, f"{family}-pg", seed) as w:
                for step in _eval_steps(run):
                    mu = traj[step]
                    if family == "delta":
                        value = float(surface.value(np.array([mu])))
                    else:
                        value = gaussian_objective(mu, FIG1_CONTINUOUS_SIGMA, surface.value)
                    w.row(step, value)


PRESETS: dict[str, Preset] = {p.name: p for p in [
    Preset("fig1-tabular", "exact softmax policy gradient on a 10-arm bandit", 5000, 50, (0,),
           analytic=_fig1_tabular),
    Preset("fig1-continuous", "exact delta and Gaussian policy gradient on a 1-d bimodal reward", 2000, 20,
           (0,), analytic=_fig1_continuous),
    Preset("fig2-dpg-vs-qmle", "DPG vs local/global QMLE on the 2-d bimodal bandit, three explorations",
           3000, 500, (0, 1, 2, 3, 4), _fig2_arms),
    Preset("abl-budget", "QMLE with sampling budgets 2 and 1000 on synthetic control d=6", 10000, 1000,
           tuple(range(10)), _budget_arms),
    Preset("abl-amortization", "delta predictor vs uniform-only sampling at m=2, d in {4, 6}", 12000, 1000,
           tuple(range(10)), _amortization_arms),
    Preset("abl-actionin", "action-in QMLE vs action-out DQN on a 9-action control task", 2000, 10,
           tuple(range(10)), _actionin_arms),
    Preset("marl-climb", "joint QMLE vs VDN on the continuous climbing game", 3000, 500,
           tuple(range(10)), _marl_arms),
    Preset("curriculum", "discrete-only, continuous-only and discrete-to-continuous on d=6", 12000, 1000,
           tuple(range(10)), _curriculum_arms),
]}


# ------------------------------------------------------------ running


def _fmt(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "nan" if math.isnan(x) else repr(x)


class _MetricsWriter:
    def __init__(self, path: Path, preset: str, agent: str, seed: int):
        self.path, self.preset, self.agent, self.seed = path, preset, agent, seed
        self.last_step = -1

    def __enter__(self):
        self.fh = open(self.path, "w", newline="")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(METRICS_HEADER)
        self.fh.flush()
        return self

    def row(self, env_step: int, ret: float, td=float("nan"), mle_delta=float("nan"),
            mle_cat=float("nan"), q=float("nan"), wall_ms: int = 0) -> None:
        if env_step <= self.last_step:
            raise ValueError("env_step must increase strictly within a cell")
        self.last_step = env_step
        self.writer.writerow([self.preset, self.agent, self.seed, env_step, _fmt(ret), _fmt(td),
                              _fmt(mle_delta), _fmt(mle_cat), _fmt(q), _fmt(wall_ms)])
        self.fh.flush()

    def __exit__(self, *exc):
        self.fh.close()


def _evaluate(agent, env, seed: int, index: int, episodes: int) -> tuple[float, float]:
    """Mean greedy return and mean Q estimate of the first greedy action."""
    rng = np.random.default_rng([seed, 2, index])
    returns, qs = [], []
    for _ in range(episodes):
        obs = env.reset(rng)
        total, first = 0.0, True
        for _ in range(agent.config.time_limit):
            a = agent.act(obs, rng, explore=False)
            if first:
                qs.append(agent.last_q)
                first = False
            obs, r, term, trunc, _ = env.step(a)
            total += r
            if term or trunc:
                break
        returns.append(total)
    return float(np.mean(returns)), float(np.mean(qs))


def run_cell(run: RunConfig, arm: Arm, seed: int, out: Path) -> dict:
    """Train one (arm, seed) cell, writing its CSV incrementally; returns a summary dict."""
    env = make_env(arm.env_id)
    eval_env = make_env(arm.env_id)  # training episodes stay open across evaluations
    config = arm.config.with_overrides(run.overrides)
    init_rng = np.random.default_rng([seed, 0])
    train_rng = np.random.default_rng([seed, 1])
    agent = arm.build(env.spec.obs_dim, env.action_space, config, init_rng)
    if arm.prepare:
        arm.prepare(agent)
    start = time.perf_counter()
    switched = arm.switch_step is None
    summary = {"agent": arm.label, "seed": seed}
    with _MetricsWriter(out / f"{arm.label}_seed{seed}.csv", run.preset, arm.label, seed) as w:
        next_eval, index = 0, 0
        while True:
            done = agent.env_steps >= run.steps
            if agent.env_steps >= next_eval or (done and w.last_step < agent.env_steps):
                ret, q = _evaluate(agent, eval_env, seed, index, run.eval_episodes)
                s = agent.stats.summary()
                agent.stats = type(agent.stats)()
                wall = int((time.perf_counter() - start) * 1000) if run.timing else 0
                w.row(agent.env_steps, ret, s["td_loss"], s.get("mle_loss_delta", float("nan")),
                      s.get("mle_loss_categorical", float("nan")), q, wall)
                summary["final_return"] = ret
                index += 1
                next_eval = (agent.env_steps // run.eval_interval + 1) * run.eval_interval
            if done:
                break
            if not switched and agent.env_steps >= arm.switch_step:
                arm.on_switch(agent)
                summary["switch_step"] = agent.env_steps
                log.info("%s seed %d: switched at step %d", arm.label, seed, agent.env_steps)
                switched = True
            stop = min(next_eval, run.steps)
            if not switched:
                stop = min(stop, max(arm.switch_step, agent.env_steps + 1))
            agent.train_steps(env, train_rng, stop - agent.env_steps)
    if arm.endpoint:
        summary["endpoint"] = endpoint_of(agent)
    agent.save(out / f"{arm.label}_seed{seed}.ckpt.npz")
    return summary


def _cell_job(args):
    run, arm_index, seed, out = args
    arm = PRESETS[run.preset].arms(DESK)[arm_index]
    return run_cell(run, arm, seed, out)


def make_run_config(preset: str, seeds=None, steps=None, eval_interval=None, out=None,
                    overrides=None, **kw) -> RunConfig:
    if preset not in PRESETS:
        raise UsageError(f"unknown preset {preset!r}; choose from {', '.join(PRESETS)}")
    p = PRESETS[preset]
    root = Path(out) if out is not None else Path(os.environ.get("QMLE_OUT", "runs"))
    return RunConfig(preset, tuple(seeds) if seeds else p.seeds, steps or p.steps,
                     eval_interval or p.eval_interval, root, overrides=dict(overrides or {}), **kw)


def run(run_config: RunConfig) -> list[dict]:
    """Execute every cell of a preset. Raises ``RuntimeError`` if any cell failed."""
    preset = PRESETS[run_config.preset]
    out = run_config.out_dir / preset.name
    out.mkdir(parents=True, exist_ok=True)
    if preset.analytic:
        preset.analytic(run_config, out)
        return []
    arms = preset.arms(DESK)
    jobs = [(run_config, i, seed, out) for i in range(len(arms)) for seed in run_config.seeds]
    results, failures = [], []
    if run_config.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(run_config.jobs) as pool:
            futures = [pool.submit(_cell_job, j) for j in jobs]
            for job, fut in zip(jobs, futures):
                try:
                    results.append(fut.result())
                except Exception as exc:  # one bad cell must not lose the others
                    failures.append((arms[job[1]].label, job[2], exc))
    else:
        for job in jobs:
            try:
                results.append(_cell_job(job))
            except Exception as exc:
                log.exception("cell %s seed %d failed", arms[job[1]].label, job[2])
                failures.append((arms[job[1]].label, job[2], exc))
    if any("endpoint" in r for r in results):
        write_endpoints(out / "endpoints.csv", results)
    if failures:
        raise RuntimeError(f"{len(failures)} cell(s) failed: " +
                           "; ".join(f"{a} seed {s}: {e}" for a, s, e in failures))
    return results


def write_endpoints(path: Path, results: list[dict]) -> None:
    modes = bimodal_modes()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent", "seed", "endpoint", "dist_global_mode", "dist_local_mode"])
        for r in sorted(results, key=lambda r: (r["agent"], r["seed"])):
            e = r["endpoint"]
            w.writerow([r["agent"], r["seed"], " ".join(_fmt(x) for x in e),
                        _fmt(np.linalg.norm(e - modes[0])), _fmt(np.linalg.norm(e - modes[1]))])


def bimodal_modes(surface: BimodalSurface | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Global and local maximizers of the bimodal surface, by gradient ascent from each bump centre."""
    surface = surface or BimodalSurface.default(2)
    modes = []
    for start in (surface.global_center, surface.local_center):
        a = start.copy()
        for _ in range(2000):
            a = a + 1e-3 * surface.grad(a)
        modes.append(a)
    return modes[0], modes[1]


def dqn_feasible(dims: int, bins: int = 3) -> bool:
    from .distributions import ActionSpace
    try:
        check_enumerable(ActionSpace.box(dims, bins=bins))
        return True
    except InfeasibleActionSpaceError:
        return False


# ------------------------------------------------------------ config files


def read_config_file(path) -> dict:
    """Flat key=value file with sections. ``[agent]`` keys (or ``agent.<field>``) become overrides;
    ``[run]`` accepts seeds, steps, eval_interval, eval_episodes, out."""
    parser = configparser.ConfigParser()
    parser.optionxform = str
    with open(path) as fh:
        parser.read_string(fh.read())
    result = {"overrides": {}}
    for section in parser.sections():
        for key, value in parser[section].items():
            if section == "agent":
                result["overrides"][key] = value
            elif section == "run":
                if key.startswith("agent."):
                    result["overrides"][key[len("agent."):]] = value
                else:
                    result[key] = value
            else:
                raise UsageError(f"unknown config section [{section}]")
    return result


# ------------------------------------------------------------ aggregation


def _read_cells(directory: Path) -> dict[str, list[dict]]:
    cells: dict[str, list[dict]] = {}
    for path in sorted(directory.glob("*.csv")):
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != METRICS_HEADER:
                continue
            rows = list(reader)
        if rows:
            cells.setdefault(rows[0]["agent"], []).append(
                {"seed": int(rows[0]["seed"]),
                 "step": np.array([int(r["env_step"]) for r in rows]),
                 "ret": np.array([float(r["episodic_return"]) for r in rows])})
    return cells


def align(curves: list[dict]) -> tuple[np.ndarray, np.ndarray]:
    """Put seed curves on the union step grid, carrying each seed's last value forward."""
    grid = np.unique(np.concatenate([c["step"] for c in curves]))
    if any(len(c["step"]) != len(grid) or not np.array_equal(c["step"], grid) for c in curves):
        warnings.warn("ragged step grids across seeds; aligning by last-value carry", stacklevel=2)
    table = np.empty((len(curves), len(grid)))
    for i, c in enumerate(curves):
        pos = np.searchsorted(c["step"], grid, side="right") - 1
        table[i] = np.where(pos >= 0, c["ret"][np.maximum(pos, 0)], np.nan)
    return grid, table


def mean_stderr(table: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Across-seed mean and standard error (ddof=1); stderr is nan for one seed."""
    mean = np.nanmean(table, axis=0)
    n = np.sum(~np.isnan(table), axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        sd = np.nanstd(table, axis=0, ddof=1) if table.shape[0] > 1 else np.full(mean.shape, np.nan)
        return mean, sd / np.sqrt(n)


def aggregate(directory, final_window: int = 3) -> dict[str, dict]:
    """Write ``<agent>.agg.csv`` curves and ``summary.csv`` (mean of the last ``final_window`` points)."""
    directory = Path(directory)
    cells = _read_cells(directory)
    if not cells:
        raise UsageError(f"no metrics CSVs in {directory}")
    summary = {}
    for agent, curves in sorted(cells.items()):
        if len(curves) < 2:
            warnings.warn(f"{agent}: fewer than 2 seeds, stderr undefined", stacklevel=2)
        grid, table = align(curves)
        mean, se = mean_stderr(table)
        with open(directory / f"{agent}.agg", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["env_step", "mean_return", "stderr", "seeds"])
            for s, m, e in zip(grid, mean, se):
                w.writerow([int(s), _fmt(m), _fmt(e), len(curves)])
        finals = table[:, -final_window:].mean(axis=1)
        fm, fse = mean_stderr(finals[:, None])
        summary[agent] = {"mean": float(fm[0]), "stderr": float(fse[0]), "seeds": len(curves),
                          "per_seed": finals}
    with open(directory / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent", "final_mean", "final_stderr", "seeds"])
        for agent, s in summary.items():
            w.writerow([agent, _fmt(s["mean"]), _fmt(s["stderr"]), s["seeds"]])
    return summary
