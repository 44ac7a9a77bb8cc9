"""Tree message passing for combining leaf motion policies.

The tree stores one manifold per node; an edge is a differentiable map
from parent to child coordinates.  A policy evaluation pushes the state
root-to-leaves, evaluates leaf policies, pulls force-form fragments
leaves-to-root through edge Jacobians, and resolves at the root.  This
is the independent oracle for tree-structured task maps; general DAGs
are served by the gradient-oracle route in :mod:`rmpkit.policies`.

Edge Jacobian products use Jacobian-vector products wherever possible;
only the pullback metric term materializes per-edge Jacobians, whose
dimensions are bounded by the node sizes.
"""

from __future__ import annotations

import numpy as np

from rmpkit import autodiff as ad
from rmpkit.autodiff import Tape, Var
from rmpkit.leaf_rmps import LeafRmp
from rmpkit.policies import ConfigState, RmpNatural, resolve
from rmpkit.taskmaps import ObstacleSet, RobotModel, chain_weights, \
    control_point_fractions

__all__ = [
    "RmpTreeNode", "RmpTree", "pushforward", "pullback", "rmpflow_policy",
    "chain_rmp_tree", "planar_arm_rmp_tree",
]


class RmpTreeNode:
    """One manifold in the tree: state, optional leaf policy, child edges."""

    def __init__(self, name: str, dim: int, rmp: LeafRmp | None = None):
        self.name = name
        self.dim = dim
        self.rmp = rmp
        self.children: list[tuple] = []  # (edge map Var -> Var, child node)
        self.state = None                # (x, xd) numpy pair
        self.natural: RmpNatural | None = None

    def add_child(self, edge, node: "RmpTreeNode") -> "RmpTreeNode":
        self.children.append((edge, node))
        return node


class RmpTree:
    """Rooted tree of manifolds with leaf policies at the leaves."""

    def __init__(self, root: RmpTreeNode):
        self.root = root
        for node in self.nodes():
            if node.children and node.rmp is not None:
                raise ValueError(f"interior node '{node.name}' carries a "
                                 "leaf policy")
            if not node.children and node.rmp is None:
                raise ValueError(f"leaf '{node.name}' has no policy")

    def nodes(self) -> list[RmpTreeNode]:
        """Topological order, parents before children."""
        order = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            order.append(node)
            for _, child in node.children:
                stack.append(child)
        return order

    def leaves(self) -> list[RmpTreeNode]:
        return [n for n in self.nodes() if not n.children]


def pushforward(node: RmpTreeNode):
    """Propagate (x, xd) to every child: y = edge(x), yd = J_edge xd."""
    if node.state is None:
        raise ValueError(f"node '{node.name}' has no state set")
    x, xd = node.state
    for edge, child in node.children:
        tape = Tape()
        xv = tape.input(x)
        y = edge(xv)
        if y.shape != (child.dim,):
            raise ValueError(f"edge to '{child.name}' produced {y.shape}, "
                             f"expected ({child.dim},)")
        yd = ad.jvp(y, xv, xd)
        child.state = (y.value, yd)


def pullback(node: RmpTreeNode) -> RmpNatural:
    """Combine the children's force-form fragments at this node.

    f = sum J_e^T (f_child - M_child (Jdot_e xd)), M = sum J_e^T M_child J_e,
    with the edge curvature Jdot_e xd from nested Jacobian-vector products.
    """
    x, xd = node.state
    f = np.zeros(node.dim)
    M = np.zeros((node.dim, node.dim))
    for edge, child in node.children:
        if child.natural is None:
            raise ValueError(f"child '{child.name}' has no combined fragment")
        tape = Tape()
        xv = tape.input(x)
        y = edge(xv)
        J = ad.jacobian(y, xv)
        yd = ad.jvp(y, xv, xd, create_graph=True)
        c = ad.jvp(yd, xv, xd)
        f += J.T @ (child.natural.f - child.natural.M @ c)
        M += J.T @ child.natural.M @ J
    return RmpNatural(f, M)


def rmpflow_policy(tree: RmpTree, state: ConfigState,
                   return_natural: bool = False):
    """Evaluate the tree policy: pushforward, leaf evaluation, pullback,
    and the shared pseudo-inverse resolve at the root."""
    order = tree.nodes()
    tree.root.state = (state.q, state.qd)
    for node in order:
        if node.children:
            pushforward(node)
    for node in reversed(order):
        if node.children:
            node.natural = pullback(node)
        else:
            out = node.rmp.evaluate_values(*node.state)
            node.natural = RmpNatural(out.M @ out.a, out.M)
    natural = tree.root.natural
    sym = RmpNatural(natural.f, 0.5 * (natural.M + natural.M.T))
    accel = resolve(sym.M, sym.f)
    return (accel, sym) if return_natural else accel


# ---------------------------------------------------------------------------
# builders mirroring the task-graph constructions

def _dense_tanh_edge(W, c):
    W = np.asarray(W, dtype=float)
    c = np.asarray(c, dtype=float)

    def edge(x: Var) -> Var:
        tape = x.tape
        return ad.tanh(ad.add(ad.matvec(tape.input(W), x), tape.input(c)))

    return edge


def chain_rmp_tree(length: int, branching: int, dim: int, seed: int,
                   bindings) -> RmpTree:
    """Tree with the same maps as ``chain_benchmark_graph(same args)``.

    ``bindings`` pairs leaf names (``leaf_<i>_<j>``) with policies; only
    bound leaves are created.
    """
    spine, fans = chain_weights(length, branching, dim, seed)
    rmp_by_name = dict(bindings)
    root = RmpTreeNode("root", dim)
    parent = root
    for i, ((W, c), fan) in enumerate(zip(spine, fans)):
        node = parent.add_child(_dense_tanh_edge(W, c),
                                RmpTreeNode(f"spine_{i}", dim))
        for j, (U, b) in enumerate(fan):
            name = f"leaf_{i}_{j}"
            if name in rmp_by_name:
                node.add_child(_dense_tanh_edge(U, b),
                               RmpTreeNode(name, dim, rmp_by_name.pop(name)))
        parent = node
    if rmp_by_name:
        raise ValueError(f"unknown leaves bound: {sorted(rmp_by_name)}")
    return RmpTree(root)


def _arm_root_edge(robot: RobotModel, n_rest: int):
    l1 = robot.link_lengths[0]

    def edge(q: Var) -> Var:
        tape = q.tape
        q1 = ad.toscalar(ad.vslice(q, 0, 1))
        p1 = ad.scale(l1, ad.concat([ad.cos(q1), ad.sin(q1)]))
        parts = [tape.input(np.zeros(2)), p1, q1]
        if n_rest:
            parts.append(ad.vslice(q, 1, 1 + n_rest))
        return ad.concat(parts)

    return edge


def _arm_link_edge(length: float, n_rest: int):
    # parent state layout: [p_prev(2), p(2), theta(1), q_rest(...)]

    def edge(x: Var) -> Var:
        p = ad.vslice(x, 2, 4)
        theta = ad.add(ad.toscalar(ad.vslice(x, 4, 5)),
                       ad.toscalar(ad.vslice(x, 5, 6)))
        p_next = ad.add(p, ad.scale(length,
                                    ad.concat([ad.cos(theta), ad.sin(theta)])))
        parts = [p, p_next, theta]
        if n_rest:
            parts.append(ad.vslice(x, 6, 6 + n_rest))
        return ad.concat(parts)

    return edge


def _interp_edge(frac: float):
    def edge(x: Var) -> Var:
        p_prev = ad.vslice(x, 0, 2)
        p = ad.vslice(x, 2, 4)
        if frac == 1.0:
            return ad.scale(1.0, p)
        return ad.add(p_prev, ad.scale(frac, ad.sub(p, p_prev)))

    return edge


def _clearance_edge(center, radius: float):
    center = np.asarray(center, dtype=float)

    def edge(p: Var) -> Var:
        diff = ad.sub(p, p.tape.input(center))
        return ad.tovec(ad.sub(ad.sqrt(ad.dot(diff, diff)),
                               p.tape.input(np.asarray(radius))))

    return edge


def planar_arm_rmp_tree(robot: RobotModel, obstacles: ObstacleSet,
                        bindings) -> RmpTree:
    """Tree carrying the planar-arm maps for the given leaf bindings.

    Spine node i holds [p_{i-1}, p_i, theta_i, remaining joint angles],
    which is what the link and interpolation edges need; this is the
    usual price of forcing the arm's DAG into a tree.  Leaf names match
    the task-graph convention (``ee``, ``dist_cp_<i>_<j>_<k>``,
    ``joints``, ``joint_<i>``).
    """
    n = robot.num_links
    fractions = control_point_fractions(robot)
    rmp_by_name = dict(bindings)
    root = RmpTreeNode("root", n)

    # bound clearance leaves grouped per control point
    per_cp: dict[tuple, list] = {}
    deepest = 0
    for name in list(rmp_by_name):
        if name.startswith("dist_cp_"):
            i, j, k = map(int, name[len("dist_cp_"):].split("_"))
            per_cp.setdefault((i, j), []).append((k, rmp_by_name.pop(name)))
            deepest = max(deepest, i)
    attractor = rmp_by_name.pop("ee", None)
    if attractor is not None:
        deepest = n

    parent = root
    for i in range(1, deepest + 1):
        rest = n - i
        dim = 5 + rest
        edge = (_arm_root_edge(robot, rest) if i == 1
                else _arm_link_edge(robot.link_lengths[i - 1], rest))
        node = parent.add_child(edge, RmpTreeNode(f"link_{i}", dim))
        for j, frac in enumerate(fractions, start=1):
            if (i, j) not in per_cp:
                continue
            cp = node.add_child(_interp_edge(frac),
                                RmpTreeNode(f"cp_{i}_{j}", 2))
            for k, rmp in sorted(per_cp.pop((i, j))):
                cp.add_child(
                    _clearance_edge(obstacles.centers[k], obstacles.radii[k]),
                    RmpTreeNode(f"dist_cp_{i}_{j}_{k}", 1, rmp))
        if i == n and attractor is not None:
            node.add_child(_interp_edge(1.0), RmpTreeNode("ee", 2, attractor))
        parent = node
    if per_cp:
        raise ValueError(f"unresolved clearance bindings: {sorted(per_cp)}")

    if "joints" in rmp_by_name:
        root.add_child(lambda q: ad.scale(1.0, q),
                       RmpTreeNode("joints", n, rmp_by_name.pop("joints")))
    for i in range(n):
        name = f"joint_{i}"
        if name in rmp_by_name:
            root.add_child(lambda q, i=i: ad.vslice(q, i, i + 1),
                           RmpTreeNode(name, 1, rmp_by_name.pop(name)))
    if rmp_by_name:
        raise ValueError(f"unknown leaves bound: {sorted(rmp_by_name)}")
    return RmpTree(root)
