"""Shared test utilities: independent numeric oracles and random graphs.

Oracles here are deliberately written against plain numpy callables, not
against the tape, so they stay independent of the code paths they check.
"""

from __future__ import annotations

import numpy as np

from rmpkit import autodiff as ad


def fd_gradient(f, x, h=1e-6):
    """Central finite-difference gradient of scalar f at x (any shape)."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp = x.copy()
        xm = x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2.0 * h)
    return g


def fd_jacobian(f, x, h=1e-6):
    """Central finite-difference Jacobian of vector-valued f at vector x."""
    x = np.asarray(x, dtype=float)
    cols = []
    for j in range(x.shape[0]):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        cols.append((np.asarray(f(xp)) - np.asarray(f(xm))) / (2.0 * h))
    return np.stack(cols, axis=1)


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12)
    return np.max(np.abs(a - b)) / denom


def leaf_values(graph, q):
    """Evaluate a task graph's leaves to plain arrays at configuration q."""
    tape = ad.Tape()
    return [v.value for v in graph.evaluate(tape.input(q))]


def fd_eq4_policy(graph, bindings, state, h=1e-6, h_dir=1e-4):
    """Closed-form combination evaluated with finite-difference Jacobians.

    Independent oracle for the policy algorithms: leaf Jacobians come
    from central differences of the leaf maps, curvature terms from a
    directional difference of the velocity map along qd, and the result
    is assembled as sum(J^T M J) a = sum(J^T M (a_des - c)) with numpy's
    pseudo-inverse.
    """
    q, qd = state.q, state.qd
    names = [name for name, _ in bindings]
    idx = {name: graph.leaf_index(name) for name in names}

    def leaf(name, at):
        return leaf_values(graph, at)[idx[name]]

    d = q.shape[0]
    M_r = np.zeros((d, d))
    f_r = np.zeros(d)
    for name, rmp in bindings:
        J = fd_jacobian(lambda qq: leaf(name, qq), q, h=h)
        Jp = fd_jacobian(lambda qq: leaf(name, qq), q + h_dir * qd, h=h)
        Jm = fd_jacobian(lambda qq: leaf(name, qq), q - h_dir * qd, h=h)
        c = ((Jp - Jm) / (2 * h_dir)) @ qd
        out = rmp.evaluate_values(leaf(name, q), J @ qd)
        M_r += J.T @ out.M @ J
        f_r += J.T @ (out.M @ (out.a - c))
    M_sym = 0.5 * (M_r + M_r.T)
    return np.linalg.pinv(M_sym, hermitian=True) @ f_r


def random_psd(rng, m, ridge=0.1):
    B = rng.uniform(-1, 1, (m, m))
    return B.T @ B + ridge * np.eye(m)


def constant_rmp(M, a):
    from rmpkit.leaf_rmps import LeafRmp

    M = np.asarray(M, dtype=float)
    a = np.asarray(a, dtype=float)

    def build(x, xd, theta):
        tape = x.tape
        return tape.input(M), tape.input(a)

    return LeafRmp("constant", np.zeros(0), (), build)


def chain_instance(rng):
    """Chain task graph with constant PSD leaf policies and a root ridge."""
    from rmpkit import taskmaps as tm
    from rmpkit.policies import ConfigState

    length = int(rng.integers(1, 5))
    branching = int(rng.integers(1, 4))
    dim = int(rng.integers(2, 5))
    graph = tm.with_configuration_leaves(
        tm.chain_benchmark_graph(length, branching, dim,
                                 seed=int(rng.integers(1 << 30))))
    bindings = []
    for spec in graph.leaves:
        if spec.name.startswith("leaf_"):
            bindings.append((spec.name,
                             constant_rmp(random_psd(rng, spec.dim),
                                          rng.uniform(-1, 1, spec.dim))))
    bindings.append(("joints", constant_rmp(0.05 * np.eye(dim),
                                            np.zeros(dim))))
    state = ConfigState(rng.uniform(-1, 1, dim), rng.uniform(-1, 1, dim))
    return graph, bindings, state


def arm_instance(rng, num_links=None):
    graph, bindings, state = arm_instance_full(rng, num_links)[2:]
    return graph, bindings, state


def arm_instance_full(rng, num_links=None):
    """Planar arm with the full hand-designed stack in a safe random scene.

    Returns (robot, obstacles, graph, bindings, state) so tree-based
    checks can rebuild the identical maps.
    """
    from rmpkit import taskmaps as tm
    from rmpkit import leaf_rmps as lr
    from rmpkit.policies import ConfigState

    n = num_links or int(rng.integers(2, 4))
    robot = tm.RobotModel(num_links=n, link_lengths=(0.25,) * n,
                          control_points_per_link=2)
    q = rng.uniform(-0.6, 0.6, n)
    qd = rng.uniform(-1.0, 1.0, n)
    _, cps = tm.fk_positions(robot, q)
    centers = []
    radii = []
    while len(centers) < 2:
        c = rng.uniform(-1, 1, 2)
        r = rng.uniform(0.05, 0.1)
        if np.min(np.linalg.norm(cps - c, axis=1)) - r > 0.15:
            centers.append(c)
            radii.append(r)
    obstacles = tm.ObstacleSet(np.array(centers), np.array(radii))
    graph = tm.with_configuration_leaves(
        tm.distance_leaves(tm.planar_fk_leaves(robot), obstacles))

    goal = rng.uniform(-0.5, 0.5, 2)
    bindings = [("ee", lr.goal_attractor(goal))]
    vlimit = lr.joint_velocity_limit(limit=robot.joint_velocity_limit)
    collision = lr.collision_avoidance_1d()
    for spec in graph.leaves:
        if spec.name.startswith("dist_"):
            bindings.append((spec.name, collision))
    bindings.append(("joints", lr.joint_damping()))
    for i in range(n):
        bindings.append((f"joint_{i}", vlimit))
    return robot, obstacles, graph, bindings, ConfigState(q, qd)


def dag_instance(rng):
    """Layered DAG task graph: nodes draw from two random earlier nodes."""
    from rmpkit import taskmaps as tm
    from rmpkit.policies import ConfigState

    dim = int(rng.integers(2, 5))
    build, _, _, _ = random_dag_fn(rng, depth=int(rng.integers(2, 5)),
                                   width=4, in_dim=dim,
                                   out_dim=int(rng.integers(1, 5)))
    builders = [build]
    for _ in range(int(rng.integers(1, 3))):
        b, _, _, _ = random_dag_fn(rng, depth=2, width=3, in_dim=dim,
                                   out_dim=int(rng.integers(1, 4)))
        builders.append(b)
    leaves = [tm.LeafSpec(f"out_{i}", 0) for i in range(len(builders))]

    def apply_fn(q):
        return [b(q) for b in builders]

    outs = apply_fn(ad.Tape().input(np.zeros(dim)))
    leaves = [tm.LeafSpec(f"out_{i}", v.shape[0]) for i, v in enumerate(outs)]
    graph = tm.with_configuration_leaves(
        tm.TaskGraph(dim, leaves, apply_fn, node_count=8 * len(builders),
                     branching=2))
    bindings = [(spec.name, constant_rmp(random_psd(rng, spec.dim),
                                         rng.uniform(-1, 1, spec.dim)))
                for spec in leaves]
    bindings.append(("joints", constant_rmp(0.05 * np.eye(dim),
                                            np.zeros(dim))))
    state = ConfigState(rng.uniform(-1, 1, dim), rng.uniform(-1, 1, dim))
    return graph, bindings, state


def random_dag_fn(rng, depth=4, width=3, in_dim=None, out_dim=None):
    """Random smooth DAG as a reusable builder (q: Var) -> Var vector.

    Nodes mix tanh/sin layers and may draw from any two earlier nodes,
    so shared parents (true DAG structure) occur routinely.  Weights are
    fixed at construction; the builder can be replayed on any tape.
    """
    in_dim = in_dim or int(rng.integers(2, 5))
    out_dim = out_dim or int(rng.integers(1, 5))
    layers = []
    dims = [in_dim]
    for _ in range(depth):
        d_out = int(rng.integers(1, width + 1))
        i = int(rng.integers(0, len(dims)))
        j = int(rng.integers(0, len(dims)))
        Wi = rng.uniform(-1, 1, (d_out, dims[i]))
        Wj = rng.uniform(-1, 1, (d_out, dims[j]))
        b = rng.uniform(-1, 1, d_out)
        kind = rng.choice(["tanh", "sin"])
        layers.append((i, j, Wi, Wj, b, kind))
        dims.append(d_out)
    Wo = rng.uniform(-1, 1, (out_dim, dims[-1]))

    def build(q: ad.Var) -> ad.Var:
        tape = q.tape
        vals = [q]
        for i, j, Wi, Wj, b, kind in layers:
            z = ad.add(ad.add(ad.matvec(tape.input(Wi), vals[i]),
                              ad.matvec(tape.input(Wj), vals[j])),
                       tape.input(b))
            vals.append(ad.tanh(z) if kind == "tanh" else ad.sin(z))
        return ad.matvec(q.tape.input(Wo), vals[-1])

    def reference(x):
        x = np.asarray(x, dtype=float)
        vals = [x]
        for i, j, Wi, Wj, b, kind in layers:
            z = Wi @ vals[i] + Wj @ vals[j] + b
            vals.append(np.tanh(z) if kind == "tanh" else np.sin(z))
        return Wo @ vals[-1]

    return build, reference, in_dim, out_dim
