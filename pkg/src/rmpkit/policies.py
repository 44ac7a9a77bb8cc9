"""Combination of leaf motion policies into a configuration-space
acceleration policy.

Two routes are implemented over the same task-graph and leaf-RMP
contracts:

* :func:`rmp2_policy` queries only gradient/jvp oracles.  Leaf
  velocities and curvature terms come from nested Jacobian-vector
  products; the root force and metric come from reverse sweeps over two
  mirrored images of the root variable, so no leaf Jacobian is ever
  materialized.  Cost is a constant multiple of one graph evaluation.

* :func:`naive_policy` materializes every root-to-leaf Jacobian row by
  row and assembles the root force and metric directly.  It is the
  correctness oracle and the slow baseline: the Jacobians cost one
  sweep per leaf dimension per leaf.  :func:`naive_policy_memory_safe`
  produces identical output but takes the curvature terms from
  Jacobian-vector products on the task map, which keeps its tape
  footprint linear.

Both resolve the root force through the same truncated spectral
pseudo-inverse.  :func:`parameter_gradient` differentiates any scalar
function of the policy output with respect to all leaf-RMP gains.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rmpkit import autodiff as ad
from rmpkit.autodiff import Tape, Var
from rmpkit.leaf_rmps import LeafRmp
from rmpkit.taskmaps import TaskGraph

__all__ = [
    "ConfigState", "RmpNatural", "resolve",
    "rmp2_policy", "naive_policy", "naive_policy_memory_safe",
    "parameter_gradient", "RecordedPolicy", "record_policy",
]

PINV_RELATIVE_CUTOFF = 1e-10


@dataclass(frozen=True)
class ConfigState:
    """Configuration-space position and velocity."""

    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        object.__setattr__(self, "qd", np.asarray(self.qd, dtype=float))
        if self.q.shape != self.qd.shape or self.q.ndim != 1:
            raise ValueError("q and qd must be vectors of equal length")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qd))):
            raise ValueError("non-finite state")

    @property
    def dim(self) -> int:
        return self.q.shape[0]


@dataclass
class RmpNatural:
    """Force-form fragment [f, M] with f = M a."""

    f: np.ndarray
    M: np.ndarray


def resolve(M: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Minimum-norm solve a = M^+ f via symmetric eigendecomposition.

    M is symmetrized first; eigenvalues below ``PINV_RELATIVE_CUTOFF``
    times the largest are truncated.
    """
    sym = 0.5 * (M + M.T)
    evals, evecs = np.linalg.eigh(sym)
    top = evals.max() if evals.size else 0.0
    if top <= 0.0:
        return np.zeros(f.shape)
    keep = evals > PINV_RELATIVE_CUTOFF * top
    inv = np.zeros_like(evals)
    inv[keep] = 1.0 / evals[keep]
    return evecs @ (inv * (evecs.T @ f))


def _resolve_bindings(graph: TaskGraph, bindings):
    out = []
    for name, rmp in bindings:
        try:
            idx = graph.leaf_index(name)
        except KeyError:
            raise ValueError(f"leaf '{name}' not in task graph") from None
        out.append((name, idx, graph.leaves[idx].dim, rmp))
    if not out:
        raise ValueError("no leaf policies bound")
    return out


def _segments(active):
    segs = []
    off = 0
    for _, _, dim, _ in active:
        segs.append((off, off + dim))
        off += dim
    return segs


def _check_finite(name, **parts):
    for label, value in parts.items():
        if not np.all(np.isfinite(np.asarray(value))):
            raise ValueError(f"non-finite {label} at leaf '{name}'")


class RecordedPolicy:
    """Record-once, replay-values wrapper around one policy evaluation.

    The full evaluation (task maps, derivative sweeps, leaf policies) is
    recorded on a single tape at construction and compiled to a replay
    function; each call re-runs it with fresh (q, qd) and redoes only
    the final assembly/resolve in numpy.  Graph construction cost is
    therefore excluded from calls.  ``q_nids`` lists every input fed by
    the configuration (the root and its mirrored copies); ``qd_nids``
    every input fed by the velocity.
    """

    def __init__(self, tape: Tape, q_nids, qd_nids, out_nids, assemble):
        self._tape = tape
        self._n_q = len(q_nids)
        self._n_qd = len(qd_nids)
        self._feed_nids = tuple(q_nids) + tuple(qd_nids)
        self._out_nids = tuple(out_nids)
        self._run = tape.compile_callable(self._feed_nids, self._out_nids)
        self._assemble = assemble

    @property
    def tape_length(self) -> int:
        return len(self._tape)

    def use_interpreter(self):
        """Replay through the checked interpreter instead of generated code.

        Slower but uniform in cost per node; timing comparisons across
        tape sizes should put all competitors on the same execution mode.
        """
        self._run = self._tape.compile_callable(self._feed_nids,
                                                self._out_nids,
                                                max_codegen_nodes=0)

    def __call__(self, state: ConfigState, return_natural: bool = False):
        outs = self._run((state.q,) * self._n_q + (state.qd,) * self._n_qd)
        f, M = self._assemble(outs)
        natural = RmpNatural(np.asarray(f), 0.5 * (M + M.T))
        accel = resolve(natural.M, natural.f)
        if return_natural:
            return accel, natural
        return accel


def _leaf_rmp_values(active, xs, xd_slices, c_slices):
    """Evaluate bound leaf policies on detached copies of their states.

    Leaf weights/accelerations and curvature terms enter the root
    least-squares objective as state-dependent constants: gradients of
    the objective must not flow through them, only through the mirrored
    task-map images.
    """
    out = []
    for (name, idx, dim, rmp), x_k, xd_k, c_k in zip(
            active, xs, xd_slices, c_slices):
        M_k, a_k = rmp.evaluate(ad.stop_gradient(x_k),
                                ad.stop_gradient(xd_k))
        _check_finite(name, x=x_k.value, xd=xd_k.value, c=c_k.value,
                      M=M_k.value, a=a_k.value)
        out.append((ad.stop_gradient(M_k), ad.stop_gradient(a_k), c_k))
    return out


def _rmp2_trace(graph: TaskGraph, bindings, state: ConfigState,
                record: bool):
    tape = Tape()
    q = tape.input(state.q)
    qd = tape.input(state.qd)
    active = _resolve_bindings(graph, bindings)
    segs = _segments(active)

    xs_all = graph.evaluate(q)
    xs = [xs_all[idx] for _, idx, _, _ in active]
    x_cat = ad.concat(xs)
    xd_cat = ad.jvp(x_cat, q, qd, create_graph=True)
    c_cat = ad.jvp(xd_cat, q, qd, create_graph=True)
    xd_slices = [ad.vslice(xd_cat, lo, hi) for lo, hi in segs]
    c_slices = [ad.stop_gradient(ad.vslice(c_cat, lo, hi)) for lo, hi in segs]

    rmp_vals = _leaf_rmp_values(active, xs, xd_slices, c_slices)

    # mirrored images of the root: same value, independent graph inputs
    qp = tape.input(state.q)
    qpp = tape.input(state.q)
    xp_all = graph.evaluate(qp)
    xpp_all = graph.evaluate(qpp)
    r = None
    s = None
    for (name, idx, dim, rmp), (M_k, a_k, c_k) in zip(active, rmp_vals):
        xp_k = xp_all[idx]
        xpp_k = xpp_all[idx]
        r_term = ad.dot(xp_k, ad.matvec(M_k, xpp_k))
        s_term = ad.dot(xp_k, ad.matvec(M_k, ad.sub(a_k, c_k)))
        r = r_term if r is None else ad.add(r, r_term)
        s = s_term if s is None else ad.add(s, s_term)

    f = ad.seeded_gradient(s, qp, np.ones(()), create_graph=record)
    g_r = ad.seeded_gradient(r, qp, np.ones(()), create_graph=True)
    eye = np.eye(state.dim)
    rows = [ad.seeded_gradient(g_r, qpp, eye[i], create_graph=record)
            for i in range(state.dim)]
    return tape, (q, qp, qpp), qd, f, rows


def _natural_from(f, rows):
    f_val = f.value if isinstance(f, Var) else f
    M_val = np.stack([r.value if isinstance(r, Var) else r for r in rows])
    return RmpNatural(np.asarray(f_val), 0.5 * (M_val + M_val.T))


def rmp2_policy(graph: TaskGraph, bindings, state: ConfigState,
                return_natural: bool = False):
    """Policy via gradient oracles only (no materialized Jacobians).

    ``bindings`` is a list of (leaf name, LeafRmp) pairs.  Returns the
    configuration-space acceleration; with ``return_natural=True`` also
    the root force-form fragment for inspection.
    """
    *_, f, rows = _rmp2_trace(graph, bindings, state, record=False)
    natural = _natural_from(f, rows)
    accel = resolve(natural.M, natural.f)
    return (accel, natural) if return_natural else accel


def _naive_trace(graph: TaskGraph, bindings, state: ConfigState,
                 memory_safe: bool, record: bool):
    tape = Tape()
    q = tape.input(state.q)
    qd = tape.input(state.qd)
    active = _resolve_bindings(graph, bindings)
    segs = _segments(active)
    d = state.dim
    eye = np.eye(d)

    xs_all = graph.evaluate(q)
    xs = [xs_all[idx] for _, idx, _, _ in active]

    if memory_safe:
        # plain-array Jacobians; curvature from jvp on the task map itself
        row_vars = None
        jacobians = [ad.jacobian(x_k, q) for x_k in xs]
        x_cat = ad.concat(xs)
        xd_cat = ad.jvp(x_cat, q, qd, create_graph=True)
        c_cat = ad.jvp(xd_cat, q, qd, create_graph=False)
        xd_slices = [tape.input(J @ state.qd) for J in jacobians]
        c_slices = [tape.input(c_cat[lo:hi]) for lo, hi in segs]
    else:
        # Jacobian rows stay on the tape so the velocity is a recorded
        # function of q and the curvature can differentiate through it
        row_vars = [[ad.seeded_gradient(x_k, q, seed, create_graph=True)
                     for seed in np.eye(dim)]
                    for x_k, (_, _, dim, _) in zip(xs, active)]
        xd_vars = [ad.concat([ad.dot(row, qd) for row in rows])
                   for rows in row_vars]
        xd_cat = ad.concat(xd_vars)
        c_cat = ad.jvp(xd_cat, q, qd, create_graph=record)
        if isinstance(c_cat, Var):
            c_slices = [ad.vslice(c_cat, lo, hi) for lo, hi in segs]
        else:
            c_slices = [tape.input(c_cat[lo:hi]) for lo, hi in segs]
        xd_slices = xd_vars
        jacobians = [np.stack([row.value for row in rows])
                     for rows in row_vars]

    rmp_vals = _leaf_rmp_values(active, xs, xd_slices, c_slices)
    return tape, q, qd, row_vars, jacobians, rmp_vals, active


def _naive_assemble(d, jacobians, rmp_vals):
    M_r = np.zeros((d, d))
    f_r = np.zeros(d)
    for J, (M_k, a_k, c_k) in zip(jacobians, rmp_vals):
        M_val = M_k.value
        M_r += J.T @ M_val @ J
        f_r += J.T @ (M_val @ (a_k.value - c_k.value))
    return RmpNatural(f_r, 0.5 * (M_r + M_r.T))


def naive_policy(graph: TaskGraph, bindings, state: ConfigState,
                 return_natural: bool = False):
    """Direct assembly from materialized root-to-leaf Jacobians.

    The Jacobians are recorded on the tape so the leaf velocities remain
    differentiable for the curvature step, which is what makes this
    variant's footprint grow with the leaf count.
    """
    _, _, _, _, jacobians, rmp_vals, _ = _naive_trace(
        graph, bindings, state, memory_safe=False, record=False)
    natural = _naive_assemble(state.dim, jacobians, rmp_vals)
    accel = resolve(natural.M, natural.f)
    return (accel, natural) if return_natural else accel


def naive_policy_memory_safe(graph: TaskGraph, bindings, state: ConfigState,
                             return_natural: bool = False):
    """Same output as :func:`naive_policy` with a linear tape footprint;
    curvature terms come from Jacobian-vector products on the task map."""
    _, _, _, _, jacobians, rmp_vals, _ = _naive_trace(
        graph, bindings, state, memory_safe=True, record=False)
    natural = _naive_assemble(state.dim, jacobians, rmp_vals)
    accel = resolve(natural.M, natural.f)
    return (accel, natural) if return_natural else accel


def record_policy(graph: TaskGraph, bindings, algorithm: str,
                  state: ConfigState) -> RecordedPolicy:
    """Record one policy evaluation for replay with fresh states.

    Supported algorithms: ``rmp2`` and ``naive``.  The memory-safe
    variant keeps its Jacobians off the tape and cannot be replayed.
    """
    if algorithm == "rmp2":
        tape, q_inputs, qd, f, rows = _rmp2_trace(graph, bindings, state,
                                                  record=True)

        def assemble(outs):
            return outs[0], np.stack(outs[1:])

        return RecordedPolicy(tape, [v.nid for v in q_inputs], [qd.nid],
                              [f.nid] + [r.nid for r in rows], assemble)

    if algorithm == "naive":
        tape, q, qd, row_vars, _, rmp_vals, _ = _naive_trace(
            graph, bindings, state, memory_safe=False, record=True)
        d = state.dim
        out_nids = []
        layout = []
        for rows, (M_k, a_k, c_k) in zip(row_vars, rmp_vals):
            base = len(out_nids)
            out_nids.extend([r.nid for r in rows])
            out_nids.extend([M_k.nid, a_k.nid, c_k.nid])
            layout.append((base, len(rows)))

        def assemble(outs):
            M_r = np.zeros((d, d))
            f_r = np.zeros(d)
            for base, n_rows in layout:
                J = np.stack(outs[base:base + n_rows])
                M_k, a_k, c_k = outs[base + n_rows:base + n_rows + 3]
                M_r += J.T @ M_k @ J
                f_r += J.T @ (M_k @ (a_k - c_k))
            return f_r, M_r

        return RecordedPolicy(tape, [q.nid], [qd.nid], out_nids, assemble)

    raise ValueError(f"algorithm '{algorithm}' is not replayable")


def parameter_gradient(loss_fn, graph: TaskGraph, bindings,
                       state: ConfigState) -> dict:
    """Gradient of ``loss_fn(accel)`` with respect to all leaf-RMP gains.

    ``loss_fn`` receives the policy acceleration as a tape variable and
    must return a scalar variable.  The pseudo-inverse is differentiated
    through the implicit identity a = M^{-1} f, which requires a
    full-rank root metric; rank deficiency raises.  Returns a dict
    mapping each distinct LeafRmp to the gradient of its parameter
    vector (shared instances accumulate over their bindings).
    """
    tape = Tape()
    q = tape.input(state.q)
    qd = tape.input(state.qd)
    active = _resolve_bindings(graph, bindings)
    segs = _segments(active)

    theta_vars: dict[LeafRmp, Var] = {}
    for _, _, _, rmp in active:
        if rmp not in theta_vars:
            theta_vars[rmp] = tape.input(rmp.params)

    xs_all = graph.evaluate(q)
    xs = [xs_all[idx] for _, idx, _, _ in active]
    x_cat = ad.concat(xs)
    xd_cat = ad.jvp(x_cat, q, qd, create_graph=True)
    c_cat = ad.jvp(xd_cat, q, qd, create_graph=True)

    leaf_terms = []
    for (name, idx, dim, rmp), (lo, hi) in zip(active, segs):
        M_k, a_k = rmp.evaluate(xs[len(leaf_terms)],
                                ad.vslice(xd_cat, lo, hi),
                                params=theta_vars[rmp])
        c_k = ad.vslice(c_cat, lo, hi)
        _check_finite(name, M=M_k.value, a=a_k.value, c=c_k.value)
        leaf_terms.append((M_k, a_k, c_k))

    qp = tape.input(state.q)
    qpp = tape.input(state.q)
    xp_all = graph.evaluate(qp)
    xpp_all = graph.evaluate(qpp)
    xp = [xp_all[idx] for _, idx, _, _ in active]
    xpp = [xpp_all[idx] for _, idx, _, _ in active]

    r = None
    s = None
    for (M_k, a_k, c_k), xp_k, xpp_k in zip(leaf_terms, xp, xpp):
        r_term = ad.dot(xp_k, ad.matvec(M_k, xpp_k))
        s_term = ad.dot(xp_k, ad.matvec(M_k, ad.sub(a_k, c_k)))
        r = r_term if r is None else ad.add(r, r_term)
        s = s_term if s is None else ad.add(s, s_term)

    f_var = ad.seeded_gradient(s, qp, np.ones(()), create_graph=True)
    g_r = ad.seeded_gradient(r, qp, np.ones(()), create_graph=True)
    d = state.dim
    M_val = np.stack([ad.seeded_gradient(g_r, qpp, e, create_graph=False)
                      for e in np.eye(d)])
    M_sym = 0.5 * (M_val + M_val.T)
    evals = np.linalg.eigvalsh(M_sym)
    if evals.min() <= PINV_RELATIVE_CUTOFF * max(evals.max(), 0.0):
        raise ValueError("root metric is rank deficient; the pseudo-inverse "
                         "is not differentiable there")

    accel = np.linalg.solve(M_sym, f_var.value)
    accel_in = tape.input(accel)
    loss_var = loss_fn(accel_in)
    if loss_var.shape != ():
        raise ValueError("loss must be scalar")
    ell = ad.gradient(loss_var, accel_in).value

    # implicit-function adjoint of the resolve: with psi = M^{-1} ell,
    #   d loss = psi . df - psi . dM a, so differentiate
    #   h = psi . f - sum_k (J' psi) . M_k (J'' a)  with psi, a held fixed
    psi = np.linalg.solve(M_sym, ell)
    xp_cat = ad.concat(xp)
    xpp_cat = ad.concat(xpp)
    jp_psi = ad.jvp(xp_cat, qp, psi, create_graph=True)
    jpp_a = ad.jvp(xpp_cat, qpp, accel, create_graph=True)
    h = ad.dot(tape.input(psi), f_var)
    for (M_k, _, _), (lo, hi) in zip(leaf_terms, segs):
        term = ad.dot(ad.vslice(jp_psi, lo, hi),
                      ad.matvec(M_k, ad.vslice(jpp_a, lo, hi)))
        h = ad.sub(h, term)

    return {rmp: ad.gradient(h, theta).value
            for rmp, theta in theta_vars.items() if rmp.params.size}
