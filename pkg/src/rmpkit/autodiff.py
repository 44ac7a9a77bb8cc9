"""Reverse-mode automatic differentiation on an explicit tape.

Values are float64 numpy arrays of rank 0, 1, or 2.  Every operation
appends one node to a :class:`Tape`; parents always have strictly
smaller ids, so a reverse sweep is a single backward scan over a
contiguous id range and visits each node at most once.

Three derivative oracles are provided:

* :func:`gradient`  -- one reverse sweep from a scalar.  With
  ``create_graph=True`` the sweep arithmetic is itself recorded on the
  tape, so the result can be differentiated again (double backward).
* :func:`jacobian`  -- one seeded sweep per output component.
* :func:`jvp`       -- (dv/du) w without forming the Jacobian: an
  all-ones dummy is attached to the output, the summed partials are
  differentiated with the graph kept, and a second sweep with respect
  to the dummy extracts the product.  Costs a constant multiple of one
  graph evaluation regardless of output width.

A tape can also be replayed: :meth:`Tape.execute` re-evaluates the
recorded op sequence with fresh values for chosen input nodes.  All ops
here are value-independent in structure (branchy derivatives such as
``maxc`` record an explicit gate node), so replays are exact.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tape",
    "Var",
    "add", "sub", "neg", "scale", "smul", "emul",
    "matvec", "matmul", "dot", "vsum", "outer", "transpose",
    "concat", "vslice", "scatter", "tovec", "toscalar",
    "sin", "cos", "tanh", "exp", "log", "square", "sqrt",
    "reciprocal", "powc", "maxc", "minc", "gate_gt", "gate_lt",
    "stop_gradient",
    "gradient", "seeded_gradient", "jacobian", "jvp",
]


class Node:
    """One recorded operation: kind, parent ids, cached value, aux data."""

    __slots__ = ("op", "parents", "value", "aux")

    def __init__(self, op, parents, value, aux=None):
        self.op = op
        self.parents = parents
        self.value = value
        self.aux = aux


class Var:
    """Handle to one value node on a tape."""

    __slots__ = ("tape", "nid")

    def __init__(self, tape: "Tape", nid: int):
        self.tape = tape
        self.nid = nid

    @property
    def value(self) -> np.ndarray:
        return self.tape.nodes[self.nid].value

    @property
    def shape(self) -> tuple:
        return self.tape.nodes[self.nid].value.shape

    @property
    def ndim(self) -> int:
        return self.tape.nodes[self.nid].value.ndim

    def __repr__(self):
        return f"Var(nid={self.nid}, shape={self.shape})"

    # Arithmetic sugar; floats/arrays are recorded as constant inputs.
    def __add__(self, other):
        return add(self, _as_var(self.tape, other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_var(self.tape, other))

    def __rsub__(self, other):
        return sub(_as_var(self.tape, other), self)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(float(other), self)
        other = _as_var(self.tape, other)
        if self.ndim == 0 and other.ndim > 0:
            return smul(self, other)
        if other.ndim == 0 and self.ndim > 0:
            return smul(other, self)
        return emul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = _as_var(self.tape, other)
        if other.ndim == 1:
            return matvec(self, other)
        return matmul(self, other)


def _as_var(tape: "Tape", x) -> Var:
    if isinstance(x, Var):
        if x.tape is not tape:
            raise ValueError("operands live on different tapes")
        return x
    return tape.input(x)


class Tape:
    """Dynamic computation record.

    Single-threaded during recording and sweeping; distinct tapes may be
    used concurrently from different threads.
    """

    def __init__(self):
        self.nodes: list[Node] = []
        self.last_sweep_visits: dict[int, int] = {}
        self._program = None

    def __len__(self) -> int:
        return len(self.nodes)

    def input(self, value) -> Var:
        """Record a leaf node holding ``value`` (finite, rank <= 2)."""
        value = np.asarray(value, dtype=float)
        if value.ndim > 2:
            raise ValueError(f"input rank {value.ndim} > 2 unsupported")
        if not np.all(np.isfinite(value)):
            raise ValueError("non-finite input value rejected")
        return self._record("input", (), value)

    def _record(self, op, parents, value, aux=None) -> Var:
        self._program = None
        nid = len(self.nodes)
        self.nodes.append(Node(op, parents, value, aux))
        return Var(self, nid)

    def _compile(self):
        prog = []
        for node in self.nodes:
            if node.op == "input":
                prog.append(None)
            else:
                prog.append((_OP_EVAL[node.op], node.parents, node.aux))
        self._program = prog
        return prog

    def execute(self, inputs: dict[int, np.ndarray] | None = None) -> list:
        """Replay the recorded op sequence with new values for input nodes.

        ``inputs`` maps input-node ids to replacement values (same shapes
        as recorded); all other inputs keep their recorded values.  The
        stored node values are untouched; per-node fresh values are
        returned as a list indexed by node id.
        """
        prog = self._program if self._program is not None else self._compile()
        if inputs is None:
            inputs = {}
        nodes = self.nodes
        vals: list = [None] * len(nodes)
        for nid, entry in enumerate(prog):
            if entry is None:
                v = inputs.get(nid)
                vals[nid] = nodes[nid].value if v is None else np.asarray(v, dtype=float)
            else:
                fn, parents, aux = entry
                vals[nid] = fn([vals[p] for p in parents], aux)
        return vals

    def compile_callable(self, feed_nids, out_nids,
                         max_codegen_nodes: int = 60000):
        """Build a fast replay function feeds -> outputs for this tape.

        ``feed_nids`` are input nodes whose values are supplied per call
        (positionally); all other inputs are baked in as constants.  The
        tape is compiled to straight-line Python over raw numpy calls,
        with nodes that do not reach an output dropped; unlike
        :meth:`execute`, recorded shape/domain checks are not re-run.
        Falls back to the interpreted path for very long tapes.
        """
        feed_nids = tuple(feed_nids)
        out_nids = tuple(out_nids)
        if len(self.nodes) > max_codegen_nodes:
            def interpreted(feed_values):
                vals = self.execute(dict(zip(feed_nids, feed_values)))
                return [vals[n] for n in out_nids]
            return interpreted

        needed = set(out_nids)
        for nid in range(len(self.nodes) - 1, -1, -1):
            if nid in needed:
                needed.update(self.nodes[nid].parents)
        feed_pos = {nid: i for i, nid in enumerate(feed_nids)}

        consts: list = []
        lines = []
        for nid in sorted(needed):
            node = self.nodes[nid]
            if node.op == "input":
                if nid in feed_pos:
                    lines.append(f" v{nid} = _feeds[{feed_pos[nid]}]")
                else:
                    lines.append(f" v{nid} = _consts[{len(consts)}]")
                    consts.append(node.value)
            else:
                p = [f"v{pid}" for pid in node.parents]
                lines.append(f" v{nid} = {_codegen_expr(node, p)}")
        rets = ", ".join(f"v{n}" for n in out_nids)
        src = ("def _run(_feeds, _consts):\n"
               + "\n".join(lines)
               + f"\n return [{rets}]")
        namespace = {"np": np, "_scatter": _codegen_scatter}
        exec(compile(src, "<tape-program>", "exec"), namespace)
        run = namespace["_run"]
        return lambda feed_values: run(feed_values, consts)


# ---------------------------------------------------------------------------
# code generation for compiled replay

def _codegen_scatter(a, lo, hi, n):
    z = np.zeros(n)
    z[lo:hi] = a
    return z


def _codegen_expr(node, p: list) -> str:
    op = node.op
    aux = node.aux
    if op == "add":
        return f"{p[0]} + {p[1]}"
    if op == "sub":
        return f"{p[0]} - {p[1]}"
    if op == "neg":
        return f"-{p[0]}"
    if op == "scale":
        return f"{aux!r} * {p[0]}"
    if op in ("smul", "emul"):
        return f"{p[0]} * {p[1]}"
    if op in ("matvec", "matmul", "dot"):
        return f"{p[0]} @ {p[1]}"
    if op == "vsum":
        return f"np.sum({p[0]})"
    if op == "outer":
        return f"np.outer({p[0]}, {p[1]})"
    if op == "transpose":
        return f"{p[0]}.T"
    if op == "concat":
        parts = [f"{name}.reshape(1)" if is_scalar else name
                 for name, (_, _, is_scalar) in zip(p, aux)]
        return f"np.concatenate(({', '.join(parts)},))"
    if op == "vslice":
        return f"{p[0]}[{aux[0]}:{aux[1]}]"
    if op == "scatter":
        return f"_scatter({p[0]}, {aux[0]}, {aux[1]}, {aux[2]})"
    if op == "tovec":
        return f"{p[0]}.reshape(1)"
    if op == "toscalar":
        return f"{p[0]}.reshape(())"
    if op in ("sin", "cos", "tanh", "exp", "log", "sqrt", "square"):
        return f"np.{op}({p[0]})"
    if op == "reciprocal":
        return f"1.0 / {p[0]}"
    if op == "powc":
        return f"{p[0]} ** {aux!r}"
    if op == "maxc":
        return f"np.maximum({p[0]}, {aux!r})"
    if op == "minc":
        return f"np.minimum({p[0]}, {aux!r})"
    if op == "gate_gt":
        return f"({p[0]} > {aux!r}) * 1.0"
    if op == "gate_lt":
        return f"({p[0]} < {aux!r}) * 1.0"
    if op == "stopgrad":
        return p[0]
    raise ValueError(f"no code generation rule for op '{op}'")


# ---------------------------------------------------------------------------
# forward evaluation (shared by recording and replay)

def _need(cond, msg):
    if not cond:
        raise ValueError(msg)


def _ev_add(v, aux):
    a, b = v
    _need(a.shape == b.shape, f"add: shape mismatch {a.shape} vs {b.shape}")
    return a + b


def _ev_sub(v, aux):
    a, b = v
    _need(a.shape == b.shape, f"sub: shape mismatch {a.shape} vs {b.shape}")
    return a - b


def _ev_neg(v, aux):
    return -v[0]


def _ev_scale(v, aux):
    return aux * v[0]


def _ev_smul(v, aux):
    s, t = v
    _need(s.ndim == 0, "smul: first operand must be a scalar")
    _need(t.ndim >= 1, "smul: second operand must be non-scalar")
    return s * t


def _ev_emul(v, aux):
    a, b = v
    _need(a.shape == b.shape, f"emul: shape mismatch {a.shape} vs {b.shape}")
    return a * b


def _ev_matvec(v, aux):
    A, x = v
    _need(A.ndim == 2 and x.ndim == 1, "matvec: need (matrix, vector)")
    _need(A.shape[1] == x.shape[0],
          f"matvec: shape mismatch {A.shape} @ {x.shape}")
    return A @ x


def _ev_matmul(v, aux):
    A, B = v
    _need(A.ndim == 2 and B.ndim == 2, "matmul: need two matrices")
    _need(A.shape[1] == B.shape[0],
          f"matmul: shape mismatch {A.shape} @ {B.shape}")
    return A @ B


def _ev_dot(v, aux):
    a, b = v
    _need(a.ndim == 1 and b.ndim == 1 and a.shape == b.shape,
          f"dot: need equal-length vectors, got {a.shape} and {b.shape}")
    return np.asarray(a @ b)


def _ev_vsum(v, aux):
    return np.asarray(np.sum(v[0]))


def _ev_outer(v, aux):
    a, b = v
    _need(a.ndim == 1 and b.ndim == 1, "outer: need two vectors")
    return np.outer(a, b)


def _ev_transpose(v, aux):
    _need(v[0].ndim == 2, "transpose: need a matrix")
    return v[0].T


def _ev_concat(v, aux):
    return np.concatenate([np.atleast_1d(a) for a in v])


def _ev_vslice(v, aux):
    lo, hi = aux
    a = v[0]
    _need(a.ndim == 1 and 0 <= lo < hi <= a.shape[0],
          f"slice: range [{lo}:{hi}] invalid for shape {a.shape}")
    return a[lo:hi]


def _ev_scatter(v, aux):
    lo, hi, n = aux
    a = v[0]
    _need(a.ndim == 1 and a.shape[0] == hi - lo and hi <= n,
          f"scatter: segment [{lo}:{hi}] of {n} invalid for shape {a.shape}")
    z = np.zeros(n)
    z[lo:hi] = a
    return z


def _ev_tovec(v, aux):
    _need(v[0].ndim == 0, "tovec: need a scalar")
    return np.reshape(v[0], (1,))


def _ev_toscalar(v, aux):
    _need(v[0].shape == (1,), "toscalar: need a length-1 vector")
    return np.reshape(v[0], ())


def _ev_sin(v, aux):
    return np.sin(v[0])


def _ev_cos(v, aux):
    return np.cos(v[0])


def _ev_tanh(v, aux):
    return np.tanh(v[0])


def _ev_exp(v, aux):
    return np.exp(v[0])


def _ev_log(v, aux):
    _need(np.all(v[0] > 0.0), "log: non-positive argument")
    return np.log(v[0])


def _ev_square(v, aux):
    return np.square(v[0])


def _ev_sqrt(v, aux):
    _need(np.all(v[0] >= 0.0), "sqrt: negative argument")
    return np.sqrt(v[0])


def _ev_reciprocal(v, aux):
    _need(np.all(v[0] != 0.0), "reciprocal: zero argument")
    return 1.0 / v[0]


def _ev_powc(v, aux):
    p = aux
    if not (float(p).is_integer() and p >= 0):
        _need(np.all(v[0] > 0.0),
              "powc: non-positive base with non-integer exponent")
    return np.power(v[0], p)


def _ev_maxc(v, aux):
    return np.maximum(v[0], aux)


def _ev_minc(v, aux):
    return np.minimum(v[0], aux)


def _ev_gate_gt(v, aux):
    return (v[0] > aux).astype(float)


def _ev_gate_lt(v, aux):
    return (v[0] < aux).astype(float)


def _ev_stopgrad(v, aux):
    return v[0]


_OP_EVAL = {
    "add": _ev_add, "sub": _ev_sub, "neg": _ev_neg,
    "scale": _ev_scale, "smul": _ev_smul, "emul": _ev_emul,
    "matvec": _ev_matvec, "matmul": _ev_matmul, "dot": _ev_dot,
    "vsum": _ev_vsum, "outer": _ev_outer, "transpose": _ev_transpose,
    "concat": _ev_concat, "vslice": _ev_vslice, "scatter": _ev_scatter,
    "tovec": _ev_tovec, "toscalar": _ev_toscalar,
    "sin": _ev_sin, "cos": _ev_cos, "tanh": _ev_tanh, "exp": _ev_exp,
    "log": _ev_log, "square": _ev_square, "sqrt": _ev_sqrt,
    "reciprocal": _ev_reciprocal, "powc": _ev_powc,
    "maxc": _ev_maxc, "minc": _ev_minc,
    "gate_gt": _ev_gate_gt, "gate_lt": _ev_gate_lt,
    "stopgrad": _ev_stopgrad,
}


def _apply(op: str, operands: tuple, aux=None) -> Var:
    tape = operands[0].tape
    for o in operands[1:]:
        if o.tape is not tape:
            raise ValueError("operands live on different tapes")
    value = _OP_EVAL[op]([o.value for o in operands], aux)
    return tape._record(op, tuple(o.nid for o in operands), value, aux)


# ---------------------------------------------------------------------------
# primitive ops

def add(a: Var, b: Var) -> Var:
    return _apply("add", (a, b))


def sub(a: Var, b: Var) -> Var:
    return _apply("sub", (a, b))


def neg(a: Var) -> Var:
    return _apply("neg", (a,))


def scale(c: float, a: Var) -> Var:
    """Multiply by a plain (non-differentiable) constant."""
    return _apply("scale", (a,), float(c))


def smul(s: Var, t: Var) -> Var:
    """Scalar Var times vector/matrix Var."""
    return _apply("smul", (s, t))


def emul(a: Var, b: Var) -> Var:
    return _apply("emul", (a, b))


def matvec(A: Var, x: Var) -> Var:
    return _apply("matvec", (A, x))


def matmul(A: Var, B: Var) -> Var:
    return _apply("matmul", (A, B))


def dot(a: Var, b: Var) -> Var:
    return _apply("dot", (a, b))


def vsum(a: Var) -> Var:
    """Sum of all elements, as a scalar."""
    return _apply("vsum", (a,))


def outer(a: Var, b: Var) -> Var:
    return _apply("outer", (a, b))


def transpose(A: Var) -> Var:
    return _apply("transpose", (A,))


def concat(parts: list[Var]) -> Var:
    """Concatenate scalars and vectors into one vector."""
    if not parts:
        raise ValueError("concat: empty operand list")
    segments = []
    off = 0
    for p in parts:
        n = 1 if p.ndim == 0 else p.shape[0]
        segments.append((off, off + n, p.ndim == 0))
        off += n
    return _apply("concat", tuple(parts), tuple(segments))


def vslice(a: Var, lo: int, hi: int) -> Var:
    return _apply("vslice", (a,), (lo, hi))


def scatter(a: Var, lo: int, hi: int, n: int) -> Var:
    """Embed a vector into the [lo:hi] slice of an n-zeros vector."""
    return _apply("scatter", (a,), (lo, hi, n))


def tovec(a: Var) -> Var:
    return _apply("tovec", (a,))


def toscalar(a: Var) -> Var:
    return _apply("toscalar", (a,))


def sin(a: Var) -> Var:
    return _apply("sin", (a,))


def cos(a: Var) -> Var:
    return _apply("cos", (a,))


def tanh(a: Var) -> Var:
    return _apply("tanh", (a,))


def exp(a: Var) -> Var:
    return _apply("exp", (a,))


def log(a: Var) -> Var:
    return _apply("log", (a,))


def square(a: Var) -> Var:
    return _apply("square", (a,))


def sqrt(a: Var) -> Var:
    return _apply("sqrt", (a,))


def reciprocal(a: Var) -> Var:
    return _apply("reciprocal", (a,))


def powc(a: Var, p: float) -> Var:
    """Elementwise power with a constant exponent."""
    return _apply("powc", (a,), float(p))


def maxc(a: Var, c: float) -> Var:
    """Elementwise maximum with a constant."""
    return _apply("maxc", (a,), float(c))


def minc(a: Var, c: float) -> Var:
    return _apply("minc", (a,), float(c))


def gate_gt(a: Var, c: float) -> Var:
    """Indicator (a > c), piecewise constant: no gradient flows through."""
    return _apply("gate_gt", (a,), float(c))


def gate_lt(a: Var, c: float) -> Var:
    return _apply("gate_lt", (a,), float(c))


def stop_gradient(a: Var) -> Var:
    """Identity in value; blocks the reverse sweep."""
    return _apply("stopgrad", (a,))


# ---------------------------------------------------------------------------
# vector-Jacobian rules, written once against a backend so the same rule
# serves plain numpy sweeps and tape-recorded sweeps (create_graph=True)

class _NumpyBackend:
    __slots__ = ("tape",)

    def __init__(self, tape):
        self.tape = tape

    def handle(self, nid):
        return self.tape.nodes[nid].value

    def const(self, v):
        return np.asarray(v, dtype=float)

    def ones(self, shape):
        return np.ones(shape)

    def add(self, a, b):
        return a + b

    def neg(self, a):
        return -a

    def scale(self, c, a):
        return c * a

    def smul(self, s, a):
        return s * a

    def emul(self, a, b):
        return a * b

    def matvec(self, A, x):
        return A @ x

    def matmul(self, A, B):
        return A @ B

    def vsum(self, a):
        return np.asarray(np.sum(a))

    def outer(self, a, b):
        return np.outer(a, b)

    def transpose(self, A):
        return A.T

    def vslice(self, a, lo, hi):
        return a[lo:hi]

    def scatter(self, a, lo, hi, n):
        z = np.zeros(n)
        z[lo:hi] = a
        return z

    def tovec(self, a):
        return np.reshape(a, (1,))

    def toscalar(self, a):
        return np.reshape(a, ())

    def sin(self, a):
        return np.sin(a)

    def cos(self, a):
        return np.cos(a)

    def square(self, a):
        return np.square(a)

    def reciprocal(self, a):
        return 1.0 / a

    def powc(self, a, p):
        return np.power(a, p)

    def gate_gt(self, a, c):
        return (a > c).astype(float)

    def gate_lt(self, a, c):
        return (a < c).astype(float)


class _TapeBackend:
    __slots__ = ("tape",)

    def __init__(self, tape):
        self.tape = tape

    def handle(self, nid):
        return Var(self.tape, nid)

    def const(self, v):
        return self.tape.input(v)

    def ones(self, shape):
        return self.tape.input(np.ones(shape))

    add = staticmethod(add)
    neg = staticmethod(neg)
    scale = staticmethod(scale)
    smul = staticmethod(smul)
    emul = staticmethod(emul)
    matvec = staticmethod(matvec)
    matmul = staticmethod(matmul)
    vsum = staticmethod(vsum)
    outer = staticmethod(outer)
    transpose = staticmethod(transpose)
    vslice = staticmethod(vslice)
    scatter = staticmethod(scatter)
    tovec = staticmethod(tovec)
    toscalar = staticmethod(toscalar)
    sin = staticmethod(sin)
    cos = staticmethod(cos)
    square = staticmethod(square)
    reciprocal = staticmethod(reciprocal)
    powc = staticmethod(powc)
    gate_gt = staticmethod(gate_gt)
    gate_lt = staticmethod(gate_lt)


def _vjp_smul(be, g, p, y, aux):
    s, t = p
    return (be.vsum(be.emul(g, t)), be.smul(s, g))


def _vjp_vsum(be, g, p, y, aux):
    return (be.smul(g, be.ones(p[0].shape)),)


def _vjp_concat(be, g, p, y, aux):
    out = []
    for (lo, hi, is_scalar), _ in zip(aux, p):
        piece = be.vslice(g, lo, hi)
        out.append(be.toscalar(piece) if is_scalar else piece)
    return tuple(out)


def _vjp_powc(be, g, p, y, aux):
    if aux == 0.0:
        return (be.scale(0.0, g),)
    return (be.emul(be.scale(aux, be.powc(p[0], aux - 1.0)), g),)


_VJP_RULES = {
    "add": lambda be, g, p, y, aux: (g, g),
    "sub": lambda be, g, p, y, aux: (g, be.neg(g)),
    "neg": lambda be, g, p, y, aux: (be.neg(g),),
    "scale": lambda be, g, p, y, aux: (be.scale(aux, g),),
    "smul": _vjp_smul,
    "emul": lambda be, g, p, y, aux: (be.emul(g, p[1]), be.emul(g, p[0])),
    "matvec": lambda be, g, p, y, aux: (
        be.outer(g, p[1]), be.matvec(be.transpose(p[0]), g)),
    "matmul": lambda be, g, p, y, aux: (
        be.matmul(g, be.transpose(p[1])), be.matmul(be.transpose(p[0]), g)),
    "dot": lambda be, g, p, y, aux: (be.smul(g, p[1]), be.smul(g, p[0])),
    "vsum": _vjp_vsum,
    "outer": lambda be, g, p, y, aux: (
        be.matvec(g, p[1]), be.matvec(be.transpose(g), p[0])),
    "transpose": lambda be, g, p, y, aux: (be.transpose(g),),
    "concat": _vjp_concat,
    "vslice": lambda be, g, p, y, aux: (
        be.scatter(g, aux[0], aux[1], p[0].shape[0]),),
    "scatter": lambda be, g, p, y, aux: (be.vslice(g, aux[0], aux[1]),),
    "tovec": lambda be, g, p, y, aux: (be.toscalar(g),),
    "toscalar": lambda be, g, p, y, aux: (be.tovec(g),),
    "sin": lambda be, g, p, y, aux: (be.emul(be.cos(p[0]), g),),
    "cos": lambda be, g, p, y, aux: (be.neg(be.emul(be.sin(p[0]), g)),),
    "tanh": lambda be, g, p, y, aux: (
        be.add(g, be.neg(be.emul(g, be.square(y)))),),
    "exp": lambda be, g, p, y, aux: (be.emul(y, g),),
    "log": lambda be, g, p, y, aux: (be.emul(be.reciprocal(p[0]), g),),
    "square": lambda be, g, p, y, aux: (be.emul(be.scale(2.0, p[0]), g),),
    "sqrt": lambda be, g, p, y, aux: (
        be.emul(be.scale(0.5, be.reciprocal(y)), g),),
    "reciprocal": lambda be, g, p, y, aux: (
        be.neg(be.emul(be.square(y), g)),),
    "powc": _vjp_powc,
    "maxc": lambda be, g, p, y, aux: (be.emul(be.gate_gt(p[0], aux), g),),
    "minc": lambda be, g, p, y, aux: (be.emul(be.gate_lt(p[0], aux), g),),
    "stopgrad": lambda be, g, p, y, aux: (None,),
    "gate_gt": lambda be, g, p, y, aux: (None,),
    "gate_lt": lambda be, g, p, y, aux: (None,),
}


# ---------------------------------------------------------------------------
# reverse sweeps

def _sweep(out: Var, seed: np.ndarray, wrt: Var, create_graph: bool):
    """Propagate ``seed`` from ``out`` back to ``wrt`` in one scan.

    Returns the accumulated adjoint of ``wrt``: a Var when recording
    (create_graph) or a plain array otherwise.  Nodes that do not
    influence ``out`` are never touched.
    """
    tape = out.tape
    if wrt.tape is not tape:
        raise ValueError("output and wrt live on different tapes")
    seed = np.asarray(seed, dtype=float)
    if seed.shape != out.shape:
        raise ValueError(f"seed shape {seed.shape} != output shape {out.shape}")
    be = _TapeBackend(tape) if create_graph else _NumpyBackend(tape)
    adjoint = {out.nid: be.const(seed)}
    visits: dict[int, int] = {}
    nodes = tape.nodes
    lo = wrt.nid
    result = None
    for nid in range(out.nid, lo - 1, -1):
        g = adjoint.pop(nid, None)
        if g is None:
            continue
        visits[nid] = visits.get(nid, 0) + 1
        if nid == lo:
            result = g
            break
        node = nodes[nid]
        rule = _VJP_RULES.get(node.op)
        if rule is None:  # input: nothing upstream
            continue
        parents = node.parents
        handles = tuple(be.handle(pid) for pid in parents)
        contribs = rule(be, g, handles, be.handle(nid), node.aux)
        for pid, c in zip(parents, contribs):
            if c is None or pid < lo:
                continue
            acc = adjoint.get(pid)
            adjoint[pid] = c if acc is None else be.add(acc, c)
    tape.last_sweep_visits = visits
    if result is None:
        result = be.const(np.zeros(wrt.shape))
    return result


def gradient(s: Var, u: Var, create_graph: bool = False) -> Var:
    """d(s)/d(u) for scalar ``s`` by one reverse sweep.

    Returns zeros of ``u``'s shape when ``u`` does not influence ``s``.
    With ``create_graph=True`` every arithmetic step of the sweep is
    recorded, so the result is itself differentiable.
    """
    if s.shape != ():
        raise ValueError("gradient: output must be a scalar")
    res = _sweep(s, np.ones(()), u, create_graph)
    if create_graph:
        return res
    return s.tape.input(res)


def seeded_gradient(v: Var, u: Var, seed, create_graph: bool = False):
    """Reverse sweep from ``v`` with an explicit seed (vector outputs).

    Equivalent to gradient(seed . v, u) without recording the contraction.
    Returns a Var when ``create_graph`` else a plain array.
    """
    return _sweep(v, seed, u, create_graph)


def jacobian(v: Var, u: Var, create_graph: bool = False):
    """d(v)/d(u), row i seeded with the i-th one-hot vector.

    Rows are computed by sequential seeded sweeps.  Returns a plain
    (m, n) array, or a list of m row Vars when ``create_graph=True``.
    """
    if v.ndim != 1 or u.ndim != 1:
        raise ValueError("jacobian: need vector output and vector input")
    m = v.shape[0]
    eye = np.eye(m)
    rows = [_sweep(v, eye[i], u, create_graph) for i in range(m)]
    if create_graph:
        return rows
    return np.stack(rows)


def jvp(v: Var, u: Var, w, create_graph: bool = False):
    """(dv/du) w by reverse accumulation, without forming the Jacobian.

    An all-ones dummy is dotted with ``v``; differentiating that scalar
    with respect to ``u`` (graph kept) gives g = J^T 1 as a recorded
    function of the dummy, and a second sweep of g . w with respect to
    the dummy yields J w.  Returns a plain vector, or a Var when
    ``create_graph=True``.
    """
    if v.ndim != 1 or u.ndim != 1:
        raise ValueError("jvp: need vector output and vector input")
    tape = v.tape
    if isinstance(w, Var):
        w_var = _as_var(tape, w)
    else:
        w_var = tape.input(np.asarray(w, dtype=float))
    if w_var.shape != u.shape:
        raise ValueError(
            f"jvp: direction shape {w_var.shape} != input shape {u.shape}")
    lam = tape.input(np.ones(v.shape[0]))
    g = _sweep(dot(lam, v), np.ones(()), u, True)
    res = _sweep(dot(g, w_var), np.ones(()), lam, create_graph)
    return res
