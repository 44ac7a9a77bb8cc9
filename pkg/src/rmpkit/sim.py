"""Planar reaching environment for a velocity-limited n-link arm.

Scenes place a goal and circular obstacles around the arm subject to
clearance constraints; episodes integrate the acceleration policy with
semi-implicit Euler at a fixed step, accumulate a clipped shaped reward,
and terminate on horizon or on contact of any control point with an
obstacle.  Geometry for rewards and termination is computed in plain
numpy, independent of the policy's differentiable task maps.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np

from rmpkit import leaf_rmps as lr
from rmpkit import taskmaps as tm
from rmpkit.policies import (ConfigState, naive_policy_memory_safe,
                             record_policy)
from rmpkit.rmptree import planar_arm_rmp_tree, rmpflow_policy
from rmpkit.taskmaps import ObstacleSet, RobotModel, fk_positions

__all__ = [
    "EnvConfig", "RewardParams", "Scene", "EpisodeResult",
    "sample_scene", "reward", "step", "build_reaching_stack", "make_policy",
    "run_episode", "run_batch", "summarize",
    "load_config", "configure", "write_episode_csv", "write_summary_csv",
    "DEFAULT_ROBOT",
]

DEFAULT_ROBOT = RobotModel()

POLICY_ALGORITHMS = ("rmp2", "naive", "naive_memory_safe", "rmpflow")


@dataclass(frozen=True)
class EnvConfig:
    """Scene-sampling and rollout parameters for one environment setup."""

    env_id: int = 1
    num_obstacles: int = 1
    goal_sector: tuple = (-np.pi / 4, np.pi / 4)
    goal_radii: tuple = (0.275, 0.475)
    obstacle_annulus: tuple = (0.4, 0.9)
    obstacle_radius_range: tuple = (0.05, 0.1)
    min_clearance: float = 0.1
    dt: float = 0.0125
    horizon: int = 600
    seed: int = 0
    init_q_range: float = 0.1
    init_qd_range: float = 0.005
    max_sample_attempts: int = 10000

    def __post_init__(self):
        if self.dt <= 0 or self.horizon <= 0:
            raise ValueError("dt and horizon must be positive")
        for lo, hi in (self.goal_radii, self.obstacle_annulus,
                       self.obstacle_radius_range):
            if not 0 < lo < hi:
                raise ValueError("radius ranges must be ordered and positive")

    @classmethod
    def for_env(cls, env_id: int, seed: int = 0, **overrides) -> "EnvConfig":
        if env_id == 1:
            base = cls(env_id=1, num_obstacles=1, seed=seed)
        elif env_id == 2:
            base = cls(env_id=2, num_obstacles=3, seed=seed)
        elif env_id == 3:
            base = cls(env_id=3, num_obstacles=3, seed=seed,
                       goal_sector=(np.pi / 2, 3 * np.pi / 2),
                       goal_radii=(0.125, 0.625))
        else:
            raise ValueError(f"unknown environment id {env_id}")
        return replace(base, **overrides) if overrides else base


@dataclass(frozen=True)
class RewardParams:
    sigma: float = 0.1
    delta: float = 0.05
    effort_weight: float = 1e-5
    clip_min: float = -5.0

    def __post_init__(self):
        if self.sigma <= 0 or self.delta <= 0:
            raise ValueError("length scales must be positive")


@dataclass(frozen=True)
class Scene:
    q0: np.ndarray
    qd0: np.ndarray
    goal: np.ndarray
    obstacles: ObstacleSet


@dataclass
class EpisodeResult:
    """Per-step record of one rollout."""

    states: list
    actions: list
    rewards: list
    min_clearances: list
    terminated_by: str
    total_reward: float
    final_goal_distance: float

    @property
    def steps(self) -> int:
        return len(self.actions)


def _clearances(robot: RobotModel, q, obstacles: ObstacleSet):
    """(control points x obstacles) signed surface distances."""
    _, cps = fk_positions(robot, q)
    if len(obstacles) == 0:
        return np.full((cps.shape[0], 0), np.inf)
    gaps = np.linalg.norm(cps[:, None, :] - obstacles.centers[None, :, :],
                          axis=2)
    return gaps - obstacles.radii[None, :]


def sample_scene(cfg: EnvConfig, robot: RobotModel,
                 rng: np.random.Generator) -> Scene:
    """Rejection-sample a start state, goal, and obstacle set.

    Draws are rejected until the goal and the robot's initial control
    points each keep ``cfg.min_clearance`` of surface distance to every
    obstacle; the attempt budget guards against infeasible configs.
    """
    n = robot.num_links
    for _ in range(cfg.max_sample_attempts):
        q0 = rng.uniform(-cfg.init_q_range, cfg.init_q_range, n)
        qd0 = rng.uniform(-cfg.init_qd_range, cfg.init_qd_range, n)
        angle = rng.uniform(*cfg.goal_sector)
        radius = rng.uniform(*cfg.goal_radii)
        goal = radius * np.array([np.cos(angle), np.sin(angle)])
        dist = rng.uniform(*cfg.obstacle_annulus, cfg.num_obstacles)
        theta = rng.uniform(0.0, 2 * np.pi, cfg.num_obstacles)
        centers = dist[:, None] * np.stack([np.cos(theta), np.sin(theta)],
                                           axis=1)
        radii = rng.uniform(*cfg.obstacle_radius_range, cfg.num_obstacles)
        obstacles = ObstacleSet(centers, radii)
        if cfg.num_obstacles:
            goal_gap = (np.linalg.norm(centers - goal, axis=1) - radii).min()
            robot_gap = _clearances(robot, q0, obstacles).min()
            if min(goal_gap, robot_gap) < cfg.min_clearance:
                continue
        return Scene(q0, qd0, goal, obstacles)
    raise RuntimeError(
        f"no feasible scene in {cfg.max_sample_attempts} attempts")


def reward(x_ee, goal, obstacle_distances, effort: float,
           params: RewardParams = RewardParams()) -> float:
    """Shaped step reward, clipped below.

    Gaussian goal term minus a hinge penalty per obstacle closer than
    ``delta`` minus a quadratic effort cost; the clip bounds the result
    to [clip_min, 1].
    """
    x_ee = np.asarray(x_ee, dtype=float)
    goal = np.asarray(goal, dtype=float)
    gap = x_ee - goal
    r = float(np.exp(-(gap @ gap) / (2.0 * params.sigma ** 2)))
    for d in np.atleast_1d(np.asarray(obstacle_distances, dtype=float)):
        r -= max(0.0, 1.0 - d / params.delta)
    r -= params.effort_weight * float(effort)
    return max(r, params.clip_min)


def step(state: ConfigState, qdd, robot: RobotModel,
         dt: float) -> ConfigState:
    """Semi-implicit Euler with a hard per-joint velocity clamp."""
    qdd = np.asarray(qdd, dtype=float)
    if not np.all(np.isfinite(qdd)):
        raise ValueError("non-finite acceleration command")
    limit = robot.joint_velocity_limit
    qd_next = np.clip(state.qd + qdd * dt, -limit, limit)
    return ConfigState(state.q + qd_next * dt, qd_next)


DEFAULT_GAINS = {
    "attractor_alpha": 10.0, "attractor_beta": 2.0, "attractor_sigma_w": 0.1,
    "collision_k_c": 1e-3, "collision_eps": 0.02, "collision_d_act": 0.2,
    "collision_gamma": 1.0,
    "damping_beta_d": 1.0, "damping_w_d": 1e-2,
    "vlimit_k_v": 10.0, "vlimit_sigma_v": 0.05,
}


def build_reaching_stack(robot: RobotModel, scene: Scene, gains=None):
    """Task graph plus hand-designed leaf bindings for one scene.

    The stack is a goal attractor on the end effector, a collision
    policy on every control-point clearance, joint damping on the
    identity leaf, and a per-joint velocity limiter.
    """
    g = dict(DEFAULT_GAINS)
    if gains:
        unknown = set(gains) - set(g)
        if unknown:
            raise ValueError(f"unknown gain overrides: {sorted(unknown)}")
        g.update(gains)
    graph = tm.with_configuration_leaves(
        tm.distance_leaves(tm.planar_fk_leaves(robot), scene.obstacles))
    bindings = [("ee", lr.goal_attractor(
        scene.goal, alpha=g["attractor_alpha"], beta=g["attractor_beta"],
        sigma_w=g["attractor_sigma_w"]))]
    collision = lr.collision_avoidance_1d(
        k_c=g["collision_k_c"], eps=g["collision_eps"],
        d_act=g["collision_d_act"], gamma=g["collision_gamma"])
    for spec in graph.leaves:
        if spec.name.startswith("dist_"):
            bindings.append((spec.name, collision))
    bindings.append(("joints", lr.joint_damping(
        beta_d=g["damping_beta_d"], w_d=g["damping_w_d"])))
    vlimit = lr.joint_velocity_limit(
        robot.joint_velocity_limit, k_v=g["vlimit_k_v"],
        sigma_v=g["vlimit_sigma_v"])
    for i in range(robot.num_links):
        bindings.append((f"joint_{i}", vlimit))
    return graph, bindings


def make_policy(robot: RobotModel, scene: Scene, algorithm: str = "rmp2",
                gains=None):
    """Per-scene acceleration policy ConfigState -> qdd.

    The gradient-oracle and direct algorithms are recorded once and
    replayed per step; the message-passing and memory-safe variants run
    dynamically.
    """
    graph, bindings = build_reaching_stack(robot, scene, gains)
    state0 = ConfigState(scene.q0, scene.qd0)
    if algorithm in ("rmp2", "naive"):
        return record_policy(graph, bindings, algorithm, state0)
    if algorithm == "naive_memory_safe":
        return lambda st: naive_policy_memory_safe(graph, bindings, st)
    if algorithm == "rmpflow":
        tree = planar_arm_rmp_tree(robot, scene.obstacles, bindings)
        return lambda st: rmpflow_policy(tree, st)
    raise ValueError(f"unknown policy algorithm '{algorithm}'")


def run_episode(cfg: EnvConfig, robot: RobotModel, scene: Scene, policy,
                reward_params: RewardParams = RewardParams()) -> EpisodeResult:
    """Roll the policy for the horizon or until a control point touches
    an obstacle; rewards are evaluated at the post-step state."""
    state = ConfigState(scene.q0, scene.qd0)
    states = [state]
    actions, rewards, min_clearances = [], [], []
    terminated_by = "horizon"
    for t in range(cfg.horizon):
        try:
            qdd = np.asarray(policy(state), dtype=float)
        except Exception as err:
            raise RuntimeError(
                f"policy failed at step {t} of episode: {err}") from err
        state = step(state, qdd, robot, cfg.dt)
        gaps = _clearances(robot, state.q, scene.obstacles)
        per_obstacle = (gaps.min(axis=0) if len(scene.obstacles)
                        else np.array([]))
        ee = fk_positions(robot, state.q)[0][-1]
        r = reward(ee, scene.goal, per_obstacle, qdd @ qdd, reward_params)
        states.append(state)
        actions.append(qdd)
        rewards.append(r)
        min_clearances.append(float(gaps.min()) if gaps.size else np.inf)
        if gaps.size and gaps.min() <= 0.0:
            terminated_by = "collision"
            break
    ee = fk_positions(robot, states[-1].q)[0][-1]
    return EpisodeResult(states, actions, rewards, min_clearances,
                         terminated_by, float(np.sum(rewards)),
                         float(np.linalg.norm(ee - scene.goal)))


def run_batch(cfg: EnvConfig, episodes: int, robot: RobotModel = DEFAULT_ROBOT,
              algorithm: str = "rmp2", gains=None,
              reward_params: RewardParams = RewardParams(),
              log_dir: str | None = None):
    """Roll independent episodes from per-episode seed streams.

    Returns (summary dict, list of EpisodeResult).  Seeding is derived
    from cfg.seed, so identical configs reproduce identical batches.
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(episodes)
    results = []
    for ep, seq in enumerate(seeds):
        rng = np.random.default_rng(seq)
        scene = sample_scene(cfg, robot, rng)
        policy = make_policy(robot, scene, algorithm, gains)
        result = run_episode(cfg, robot, scene, policy, reward_params)
        results.append(result)
        if log_dir is not None:
            write_episode_csv(result,
                              os.path.join(log_dir, f"episode_{ep:03d}.csv"))
    summary = summarize(results)
    if log_dir is not None:
        write_summary_csv(summary, os.path.join(log_dir, "summary.csv"))
    return summary, results


def summarize(results: list) -> dict:
    final = np.array([r.final_goal_distance for r in results])
    return {
        "episodes": len(results),
        "mean_total_reward": float(np.mean([r.total_reward for r in results])),
        "collision_free_pct": 100.0 * np.mean(
            [r.terminated_by != "collision" for r in results]),
        "reached_005_pct": 100.0 * float(np.mean(final < 0.05)),
        "reached_010_pct": 100.0 * float(np.mean(final < 0.10)),
        "mean_final_distance": float(final.mean()),
        "min_clearance": float(min(min(r.min_clearances, default=np.inf)
                                   for r in results)),
    }


def write_episode_csv(result: EpisodeResult, path: str):
    """Per-step log: step,q...,qd...,action...,reward,min_clearance."""
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    dim = result.states[0].dim
    header = (["step"]
              + [f"q{i}" for i in range(dim)]
              + [f"qd{i}" for i in range(dim)]
              + [f"action{i}" for i in range(dim)]
              + ["reward", "min_clearance"])
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(result.steps):
            st = result.states[t]
            writer.writerow(
                [t] + list(st.q) + list(st.qd) + list(result.actions[t])
                + [result.rewards[t], result.min_clearances[t]])


def write_summary_csv(summary: dict, path: str):
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(summary))
        writer.writerow([summary[k] for k in summary])


# ---------------------------------------------------------------------------
# flat key-value scenario files

_CONFIG_KEYS = {
    "env_id": int, "seed": int, "num_obstacles": int, "horizon": int,
    "dt": float, "min_clearance": float,
    "goal_sector_lo": float, "goal_sector_hi": float,
    "goal_radius_lo": float, "goal_radius_hi": float,
    "obstacle_annulus_lo": float, "obstacle_annulus_hi": float,
    "obstacle_radius_lo": float, "obstacle_radius_hi": float,
    "reward_sigma": float, "reward_delta": float,
    "reward_effort_weight": float, "reward_clip_min": float,
    "num_links": int, "link_length": float, "control_points_per_link": int,
    "velocity_limit": float,
}


def load_config(path: str) -> dict:
    """Parse a flat ``key = value`` scenario file ('#' starts a comment).

    Recognized keys: environment geometry and episode parameters
    (see _CONFIG_KEYS) plus the RMP gain overrides of DEFAULT_GAINS.
    """
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            if key in _CONFIG_KEYS:
                out[key] = _CONFIG_KEYS[key](value)
            elif key in DEFAULT_GAINS:
                out[key] = float(value)
            else:
                raise ValueError(f"{path}:{lineno}: unknown key '{key}'")
    return out


def configure(overrides: dict):
    """Build (EnvConfig, RewardParams, gains, RobotModel) from flat keys."""
    o = dict(overrides)
    env_kwargs = {}
    for key, attr in (("num_obstacles", "num_obstacles"), ("dt", "dt"),
                      ("horizon", "horizon"),
                      ("min_clearance", "min_clearance")):
        if key in o:
            env_kwargs[attr] = o.pop(key)
    for key, attr in (("goal_sector", ("goal_sector_lo", "goal_sector_hi")),
                      ("goal_radii", ("goal_radius_lo", "goal_radius_hi")),
                      ("obstacle_annulus",
                       ("obstacle_annulus_lo", "obstacle_annulus_hi")),
                      ("obstacle_radius_range",
                       ("obstacle_radius_lo", "obstacle_radius_hi"))):
        lo_key, hi_key = attr
        if lo_key in o or hi_key in o:
            base = EnvConfig.for_env(int(o.get("env_id", 1)))
            lo, hi = getattr(base, key)
            env_kwargs[key] = (o.pop(lo_key, lo), o.pop(hi_key, hi))
    cfg = EnvConfig.for_env(int(o.pop("env_id", 1)),
                            seed=int(o.pop("seed", 0)), **env_kwargs)

    reward_params = RewardParams(
        sigma=o.pop("reward_sigma", 0.1),
        delta=o.pop("reward_delta", 0.05),
        effort_weight=o.pop("reward_effort_weight", 1e-5),
        clip_min=o.pop("reward_clip_min", -5.0))

    num_links = int(o.pop("num_links", DEFAULT_ROBOT.num_links))
    robot = RobotModel(
        num_links=num_links,
        link_lengths=(float(o.pop("link_length", 0.25)),) * num_links,
        joint_velocity_limit=float(o.pop("velocity_limit", 1.0)),
        control_points_per_link=int(o.pop("control_points_per_link", 3)))

    gains = {k: o.pop(k) for k in list(o) if k in DEFAULT_GAINS}
    if o:
        raise ValueError(f"unknown configuration keys: {sorted(o)}")
    return cfg, reward_params, gains, robot
