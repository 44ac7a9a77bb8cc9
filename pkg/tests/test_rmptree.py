import numpy as np
import pytest

from rmpkit import autodiff as ad
from rmpkit import taskmaps as tm
from rmpkit import policies as pol
from rmpkit import rmptree as rt
from helpers import arm_instance_full, constant_rmp, rel_err


def identity_edge(x):
    return ad.scale(1.0, x)


def test_pushforward_identity_edge():
    root = rt.RmpTreeNode("root", 2)
    leaf = root.add_child(identity_edge,
                          rt.RmpTreeNode("leaf", 2,
                                         constant_rmp(np.eye(2), np.zeros(2))))
    root.state = (np.array([0.3, -0.4]), np.array([1.0, 2.0]))
    rt.pushforward(root)
    np.testing.assert_allclose(leaf.state[0], [0.3, -0.4])
    np.testing.assert_allclose(leaf.state[1], [1.0, 2.0])


def test_pushforward_linear_edge():
    A = np.array([[1.0, 2.0], [0.0, -1.0], [0.5, 0.5]])
    root = rt.RmpTreeNode("root", 2)
    leaf = root.add_child(lambda x: ad.matvec(x.tape.input(A), x),
                          rt.RmpTreeNode("leaf", 3,
                                         constant_rmp(np.eye(3), np.zeros(3))))
    x, xd = np.array([0.2, 0.7]), np.array([-1.0, 0.5])
    root.state = (x, xd)
    rt.pushforward(root)
    np.testing.assert_allclose(leaf.state[0], A @ x, atol=1e-14)
    np.testing.assert_allclose(leaf.state[1], A @ xd, atol=1e-14)


def test_pushforward_fk_edge_matches_jacobian():
    rng = np.random.default_rng(1)
    edge = rt._arm_root_edge(tm.RobotModel(num_links=2,
                                           link_lengths=(0.25, 0.25)), 1)
    root = rt.RmpTreeNode("root", 2)
    leaf = root.add_child(edge, rt.RmpTreeNode("u1", 6,
                                               constant_rmp(np.eye(6),
                                                            np.zeros(6))))
    for _ in range(5):
        x = rng.uniform(-np.pi, np.pi, 2)
        xd = rng.uniform(-1, 1, 2)
        root.state = (x, xd)
        rt.pushforward(root)
        tape = ad.Tape()
        xv = tape.input(x)
        J = ad.jacobian(edge(xv), xv)
        assert rel_err(leaf.state[1], J @ xd) < 1e-10


def test_pushforward_requires_state():
    root = rt.RmpTreeNode("root", 2)
    root.add_child(identity_edge,
                   rt.RmpTreeNode("leaf", 2, constant_rmp(np.eye(2),
                                                          np.zeros(2))))
    with pytest.raises(ValueError):
        rt.pushforward(root)


def test_pullback_single_identity_child():
    root = rt.RmpTreeNode("root", 2)
    leaf = root.add_child(identity_edge,
                          rt.RmpTreeNode("leaf", 2,
                                         constant_rmp(np.eye(2), np.zeros(2))))
    root.state = (np.zeros(2), np.zeros(2))
    rt.pushforward(root)
    leaf.natural = pol.RmpNatural(np.array([0.5, -1.0]),
                                  np.array([[2.0, 0.0], [0.0, 3.0]]))
    combined = rt.pullback(root)
    np.testing.assert_allclose(combined.f, leaf.natural.f, atol=1e-14)
    np.testing.assert_allclose(combined.M, leaf.natural.M, atol=1e-14)


def test_pullback_scalar_edge():
    # y = 2x with child [f=1, M=1] at rest: parent f = 2, M = 4
    root = rt.RmpTreeNode("root", 1)
    leaf = root.add_child(lambda x: ad.scale(2.0, x),
                          rt.RmpTreeNode("leaf", 1,
                                         constant_rmp([[1.0]], [0.0])))
    root.state = (np.array([0.3]), np.array([0.0]))
    rt.pushforward(root)
    leaf.natural = pol.RmpNatural(np.array([1.0]), np.array([[1.0]]))
    combined = rt.pullback(root)
    np.testing.assert_allclose(combined.f, [2.0], atol=1e-14)
    np.testing.assert_allclose(combined.M, [[4.0]], atol=1e-14)


def test_pullback_two_linear_children_closed_form():
    rng = np.random.default_rng(2)
    A = rng.uniform(-1, 1, (2, 3))
    B = rng.uniform(-1, 1, (1, 3))
    Ma = np.array([[2.0, 0.1], [0.1, 1.0]])
    Mb = np.array([[0.7]])
    aa = rng.uniform(-1, 1, 2)
    ab = rng.uniform(-1, 1, 1)
    root = rt.RmpTreeNode("root", 3)
    la = root.add_child(lambda x: ad.matvec(x.tape.input(A), x),
                        rt.RmpTreeNode("a", 2, constant_rmp(Ma, aa)))
    lb = root.add_child(lambda x: ad.matvec(x.tape.input(B), x),
                        rt.RmpTreeNode("b", 1, constant_rmp(Mb, ab)))
    root.state = (rng.uniform(-1, 1, 3), rng.uniform(-1, 1, 3))
    rt.pushforward(root)
    la.natural = pol.RmpNatural(Ma @ aa, Ma)
    lb.natural = pol.RmpNatural(Mb @ ab, Mb)
    combined = rt.pullback(root)
    # linear edges: no curvature, closed form is exact
    np.testing.assert_allclose(combined.M, A.T @ Ma @ A + B.T @ Mb @ B,
                               atol=1e-12)
    np.testing.assert_allclose(combined.f, A.T @ (Ma @ aa) + B.T @ (Mb @ ab),
                               atol=1e-12)


def test_rmpflow_identity_tree():
    a0 = np.array([1.0, -0.5])
    root = rt.RmpTreeNode("root", 2)
    root.add_child(identity_edge,
                   rt.RmpTreeNode("leaf", 2, constant_rmp(np.eye(2), a0)))
    tree = rt.RmpTree(root)
    accel = rt.rmpflow_policy(tree, pol.ConfigState(np.zeros(2), np.zeros(2)))
    np.testing.assert_allclose(accel, a0, atol=1e-12)


def test_rmpflow_two_scalar_leaves():
    root = rt.RmpTreeNode("root", 1)
    root.add_child(identity_edge,
                   rt.RmpTreeNode("x1", 1, constant_rmp([[1.0]], [1.0])))
    root.add_child(lambda x: ad.scale(2.0, x),
                   rt.RmpTreeNode("x2", 1, constant_rmp([[1.0]], [0.0])))
    tree = rt.RmpTree(root)
    accel = rt.rmpflow_policy(tree, pol.ConfigState(np.array([0.7]),
                                                    np.zeros(1)))
    np.testing.assert_allclose(accel, [0.2], atol=1e-12)


def test_tree_validation():
    root = rt.RmpTreeNode("root", 1)
    root.add_child(identity_edge, rt.RmpTreeNode("leaf", 1))  # no policy
    with pytest.raises(ValueError):
        rt.RmpTree(root)


def test_chain_tree_matches_gradient_route():
    rng = np.random.default_rng(3)
    for _ in range(5):
        length = int(rng.integers(1, 4))
        branching = int(rng.integers(1, 4))
        dim = int(rng.integers(2, 4))
        seed = int(rng.integers(1 << 30))
        graph = tm.chain_benchmark_graph(length, branching, dim, seed)
        bindings = [(spec.name,
                     constant_rmp(np.eye(dim) * rng.uniform(0.5, 2.0),
                                  rng.uniform(-1, 1, dim)))
                    for spec in graph.leaves]
        tree = rt.chain_rmp_tree(length, branching, dim, seed, bindings)
        state = pol.ConfigState(rng.uniform(-1, 1, dim),
                                rng.uniform(-1, 1, dim))
        a_tree = rt.rmpflow_policy(tree, state)
        a_rmp2 = pol.rmp2_policy(graph, bindings, state)
        assert rel_err(a_tree, a_rmp2) < 1e-8


def test_arm_tree_matches_gradient_route():
    rng = np.random.default_rng(4)
    for _ in range(5):
        robot, obstacles, graph, bindings, state = arm_instance_full(rng)
        tree = rt.planar_arm_rmp_tree(robot, obstacles, bindings)
        a_tree = rt.rmpflow_policy(tree, state)
        a_rmp2, nat2 = pol.rmp2_policy(graph, bindings, state,
                                       return_natural=True)
        assert rel_err(a_tree, a_rmp2) < 1e-8


def test_root_metric_equals_composed_jacobian_sum():
    rng = np.random.default_rng(5)
    robot, obstacles, graph, bindings, state = arm_instance_full(rng)
    tree = rt.planar_arm_rmp_tree(robot, obstacles, bindings)
    _, natural = rt.rmpflow_policy(tree, state, return_natural=True)

    tape = ad.Tape()
    q = tape.input(state.q)
    out = graph.evaluate(q)
    want = np.zeros((state.dim, state.dim))
    for name, rmp in bindings:
        x = out[graph.leaf_index(name)]
        J = ad.jacobian(x, q)
        xd = ad.jvp(x, q, state.qd)
        M = rmp.evaluate_values(x.value, xd).M
        want += J.T @ M @ J
    assert rel_err(natural.M, want) < 1e-10
