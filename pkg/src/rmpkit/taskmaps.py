"""Differentiable task maps: planar n-link kinematics with control points
and obstacle clearances, and the synthetic chain graph used for runtime
scaling experiments.

A :class:`TaskGraph` produces all of its leaf variables in one joint
evaluation so interior nodes (link endpoints, chain spine) are shared;
evaluating every leaf therefore records O(node_count) tape ops.  Graphs
are immutable after construction and may be shared across threads; each
evaluation needs a caller-supplied tape.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from rmpkit import autodiff as ad
from rmpkit.autodiff import Tape, Var

__all__ = [
    "LeafSpec", "TaskGraph", "RobotModel", "ObstacleSet",
    "planar_fk_leaves", "distance_leaves", "with_configuration_leaves",
    "chain_benchmark_graph", "chain_weights", "fk_positions",
]


@dataclass(frozen=True)
class LeafSpec:
    name: str
    dim: int


class TaskGraph:
    """DAG of differentiable maps from root coordinates to leaf coordinates."""

    def __init__(self, root_dim: int, leaves: list[LeafSpec], apply_fn,
                 node_count: int, branching: int):
        self.root_dim = root_dim
        self.leaves = list(leaves)
        self.node_count = node_count
        self.branching = branching
        self._apply = apply_fn
        self._index = {spec.name: i for i, spec in enumerate(self.leaves)}
        if len(self._index) != len(self.leaves):
            raise ValueError("duplicate leaf names")

    @property
    def leaf_count(self) -> int:
        return len(self.leaves)

    def leaf_index(self, name: str) -> int:
        return self._index[name]

    def evaluate(self, q: Var) -> list[Var]:
        """Evaluate every leaf map at the root variable ``q``."""
        if q.shape != (self.root_dim,):
            raise ValueError(
                f"root shape {q.shape} != ({self.root_dim},)")
        out = self._apply(q)
        for spec, var in zip(self.leaves, out):
            if var.shape != (spec.dim,):
                raise ValueError(
                    f"leaf '{spec.name}' produced shape {var.shape}, "
                    f"declared dim {spec.dim}")
        return out

    def leaf_evaluator(self, name: str):
        """Single-leaf view; still evaluates the shared graph underneath."""
        idx = self.leaf_index(name)

        def evaluate(q: Var) -> Var:
            return self.evaluate(q)[idx]

        return evaluate


@dataclass(frozen=True)
class RobotModel:
    """Planar serial arm with revolute joints and point control points."""

    num_links: int = 3
    link_lengths: tuple = (0.25, 0.25, 0.25)
    joint_velocity_limit: float = 1.0
    control_points_per_link: int = 3

    def __post_init__(self):
        if len(self.link_lengths) != self.num_links:
            raise ValueError("one length per link required")
        if any(l <= 0 for l in self.link_lengths):
            raise ValueError("link lengths must be positive")
        if self.joint_velocity_limit <= 0:
            raise ValueError("velocity limit must be positive")
        if self.control_points_per_link < 1:
            raise ValueError("need at least one control point per link")


@dataclass(frozen=True)
class ObstacleSet:
    """Circular obstacles: centers (k, 2) and radii (k,)."""

    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    radii: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        object.__setattr__(self, "centers",
                           np.asarray(self.centers, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "radii",
                           np.asarray(self.radii, dtype=float).reshape(-1))
        if self.centers.shape[0] != self.radii.shape[0]:
            raise ValueError("one radius per center required")
        if np.any(self.radii <= 0):
            raise ValueError("radii must be positive")

    def __len__(self) -> int:
        return self.radii.shape[0]


def control_point_fractions(robot: RobotModel) -> np.ndarray:
    """Uniform interpolation fractions per link: 1/c, 2/c, ..., 1."""
    c = robot.control_points_per_link
    return np.arange(1, c + 1) / c


def planar_fk_leaves(robot: RobotModel) -> TaskGraph:
    """Forward-kinematics task graph for a planar arm.

    Root coordinate q holds the joint angles.  Link-i endpoints follow
    p_i = p_{i-1} + l_i [cos(sum q_{<=i}), sin(sum q_{<=i})] from the
    origin.  Each control point (uniform interpolation between adjacent
    endpoints) is a 2-D leaf named ``cp_<link>_<j>``; the last endpoint
    is the distinguished leaf ``ee``.
    """
    n = robot.num_links
    fractions = control_point_fractions(robot)
    leaves = []
    for i in range(1, n + 1):
        for j in range(1, robot.control_points_per_link + 1):
            leaves.append(LeafSpec(f"cp_{i}_{j}", 2))
    leaves.append(LeafSpec("ee", 2))

    def apply_fn(q: Var) -> list[Var]:
        tape = q.tape
        origin = tape.input(np.zeros(2))
        cps = []
        p_prev = origin
        theta = None
        for i in range(1, n + 1):
            qi = ad.toscalar(ad.vslice(q, i - 1, i))
            theta = qi if theta is None else ad.add(theta, qi)
            heading = ad.concat([ad.cos(theta), ad.sin(theta)])
            p = ad.add(p_prev, ad.scale(robot.link_lengths[i - 1], heading))
            step = ad.sub(p, p_prev)
            for frac in fractions:
                if frac == 1.0:
                    cps.append(p)
                else:
                    cps.append(ad.add(p_prev, ad.scale(frac, step)))
            p_prev = p
        return cps + [p_prev]

    node_count = 1 + n * (1 + robot.control_points_per_link)
    return TaskGraph(n, leaves, apply_fn, node_count,
                     branching=robot.control_points_per_link + 1)


def distance_leaves(fk_graph: TaskGraph, obstacles: ObstacleSet) -> TaskGraph:
    """Append one 1-D clearance leaf per (control point, obstacle) pair.

    Clearance is the signed distance ||p - c|| - r in meters.  Each
    control-point node feeds every obstacle's leaf, so the result is a
    DAG rather than a tree.
    """
    cp_indices = [i for i, spec in enumerate(fk_graph.leaves)
                  if spec.name.startswith("cp_")]
    if not cp_indices:
        raise ValueError("graph has no control-point leaves")
    leaves = list(fk_graph.leaves)
    for i in cp_indices:
        for k in range(len(obstacles)):
            leaves.append(LeafSpec(f"dist_{fk_graph.leaves[i].name}_{k}", 1))

    centers = obstacles.centers
    radii = obstacles.radii

    def apply_fn(q: Var) -> list[Var]:
        tape = q.tape
        out = fk_graph.evaluate(q)
        dists = []
        for i in cp_indices:
            p = out[i]
            for k in range(len(obstacles)):
                diff = ad.sub(p, tape.input(centers[k]))
                s = ad.sub(ad.sqrt(ad.dot(diff, diff)),
                           tape.input(np.asarray(radii[k])))
                dists.append(ad.tovec(s))
        return out + dists

    node_count = fk_graph.node_count + len(cp_indices) * len(obstacles)
    branching = max(fk_graph.branching, len(obstacles))
    return TaskGraph(fk_graph.root_dim, leaves, apply_fn, node_count, branching)


def with_configuration_leaves(graph: TaskGraph) -> TaskGraph:
    """Append the identity leaf ``joints`` and per-joint leaves ``joint_<i>``."""
    d = graph.root_dim
    leaves = (list(graph.leaves)
              + [LeafSpec("joints", d)]
              + [LeafSpec(f"joint_{i}", 1) for i in range(d)])

    def apply_fn(q: Var) -> list[Var]:
        out = graph.evaluate(q)
        identity = ad.scale(1.0, q)
        per_joint = [ad.vslice(q, i, i + 1) for i in range(d)]
        return out + [identity] + per_joint

    return TaskGraph(d, leaves, apply_fn, graph.node_count + 1 + d,
                     graph.branching)


def chain_weights(length: int, branching: int, dim: int, seed: int):
    """Edge weights for the chain graph, i.i.d. uniform in [-1, 1].

    Draw order is fixed (spine first, then leaf fan-outs per spine node)
    so alternative constructions of the same graph reuse identical maps.
    """
    rng = np.random.default_rng(seed)
    spine = []
    fans = []
    for _ in range(length):
        spine.append((rng.uniform(-1, 1, (dim, dim)), rng.uniform(-1, 1, dim)))
        fans.append([(rng.uniform(-1, 1, (dim, dim)), rng.uniform(-1, 1, dim))
                     for _ in range(branching)])
    return spine, fans


def chain_benchmark_graph(length: int, branching: int, dim: int,
                          seed: int = 0) -> TaskGraph:
    """Directed chain of ``length`` spine nodes, each feeding ``branching``
    leaf nodes; every edge map is one dense tanh layer y = tanh(W x + c).

    The graph has 1 + (branching + 1) * length nodes, branching * length
    of which are leaves.
    """
    if length < 1 or branching < 1 or dim < 1:
        raise ValueError("length, branching and dim must be >= 1")
    spine, fans = chain_weights(length, branching, dim, seed)
    leaves = [LeafSpec(f"leaf_{i}_{j}", dim)
              for i in range(length) for j in range(branching)]

    def apply_fn(q: Var) -> list[Var]:
        tape = q.tape
        out = []
        z = q
        for (W, c), fan in zip(spine, fans):
            z = ad.tanh(ad.add(ad.matvec(tape.input(W), z), tape.input(c)))
            for U, b in fan:
                out.append(ad.tanh(ad.add(ad.matvec(tape.input(U), z),
                                          tape.input(b))))
        return out

    node_count = 1 + (branching + 1) * length
    return TaskGraph(dim, leaves, apply_fn, node_count, branching)


def fk_positions(robot: RobotModel, q: np.ndarray):
    """Plain-numpy arm geometry: (endpoints incl. origin, control points).

    Used by the environment for collision checks and rewards; the
    differentiable FK above is the policy-side counterpart.
    """
    q = np.asarray(q, dtype=float)
    angles = np.cumsum(q)
    steps = (np.asarray(robot.link_lengths)[:, None]
             * np.stack([np.cos(angles), np.sin(angles)], axis=1))
    endpoints = np.vstack([np.zeros(2), np.cumsum(steps, axis=0)])
    fractions = control_point_fractions(robot)
    cps = (endpoints[:-1, None, :]
           + fractions[None, :, None] * steps[:, None, :]).reshape(-1, 2)
    return endpoints, cps
