"""Hand-designed leaf motion-policy fragments.

Each leaf policy maps a leaf-space state (x, xd) to an importance weight
matrix M (symmetric PSD) and a desired acceleration a.  Evaluation is
expressed in tape ops with the gains as a differentiable parameter
vector, so policy outputs can be differentiated end to end with respect
to the gains.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from rmpkit import autodiff as ad
from rmpkit.autodiff import Tape, Var

__all__ = [
    "RmpCanonical", "LeafRmp",
    "goal_attractor", "collision_avoidance_1d",
    "joint_damping", "joint_velocity_limit", "unit_rmp",
]

PSD_TOL = 1e-10


@dataclass
class RmpCanonical:
    """Acceleration-form fragment: importance weight M and desired accel a."""

    M: np.ndarray
    a: np.ndarray

    def validate(self):
        M = self.M
        if not np.allclose(M, M.T, atol=1e-9):
            raise ValueError("M is not symmetric")
        lo = np.linalg.eigvalsh((M + M.T) / 2).min()
        if lo < -PSD_TOL:
            raise ValueError(f"M has negative eigenvalue {lo}")
        return self


@dataclass(eq=False)
class LeafRmp:
    """Parameterized evaluator (x, xd) -> (M, a) for one subtask space."""

    kind: str
    params: np.ndarray
    param_names: tuple
    _build: callable

    def evaluate(self, x: Var, xd: Var, params: Var | None = None):
        """Build (M, a) as tape variables at leaf state (x, xd).

        ``params`` overrides the stored gains with an on-tape parameter
        vector; by default the stored values are recorded as constants.
        """
        theta = params if params is not None else x.tape.input(self.params)
        return self._build(x, xd, theta)

    def evaluate_values(self, x, xd) -> RmpCanonical:
        tape = Tape()
        M, a = self.evaluate(tape.input(x), tape.input(xd))
        return RmpCanonical(M.value, a.value)


def _p(theta: Var, i: int) -> Var:
    return ad.toscalar(ad.vslice(theta, i, i + 1))


def goal_attractor(goal, alpha: float = 10.0, beta: float = 2.0,
                   sigma_w: float = 0.1) -> LeafRmp:
    """Soft-normalized pull toward a planar goal with velocity damping.

    With e = goal - x:  a = alpha * e / sqrt(|e|^2 + sigma_w^2) - beta * xd,
    M = I.  The sigma_w floor removes the singularity at e = 0.
    """
    if alpha <= 0 or beta <= 0 or sigma_w <= 0:
        raise ValueError("attractor gains must be positive")
    goal = np.asarray(goal, dtype=float)

    def build(x: Var, xd: Var, theta: Var):
        tape = x.tape
        al, be, sw = _p(theta, 0), _p(theta, 1), _p(theta, 2)
        e = ad.sub(tape.input(goal), x)
        den = ad.sqrt(ad.add(ad.dot(e, e), ad.square(sw)))
        a = ad.sub(ad.smul(ad.emul(al, ad.reciprocal(den)), e),
                   ad.smul(be, xd))
        M = tape.input(np.eye(goal.shape[0]))
        return M, a

    return LeafRmp("goal_attractor", np.array([alpha, beta, sigma_w]),
                   ("alpha", "beta", "sigma_w"), build)


def collision_avoidance_1d(k_c: float = 1e-3, eps: float = 0.02,
                           d_act: float = 0.2,
                           gamma: float = 1.0) -> LeafRmp:
    """Barrier on a 1-D clearance leaf, inactive beyond d_act.

    Weight w(s) = (max(d_act - s, 0) / d_act)^2 / (s + eps); inside the
    activation band the acceleration is k_c / (s + eps)^2 - gamma*sd*w.
    Clearances at or below -eps (deep penetration) are a domain error.
    """
    if k_c <= 0 or eps <= 0 or d_act <= 0:
        raise ValueError("collision gains must be positive")

    def build(x: Var, xd: Var, theta: Var):
        tape = x.tape
        kc, ep, da, ga = (_p(theta, i) for i in range(4))
        if x.value[0] <= -theta.value[1]:
            raise ValueError(
                f"clearance {x.value[0]:.4f} <= -eps: deep penetration")
        s = ad.toscalar(x)
        sd = ad.toscalar(xd)
        splus = ad.add(s, ep)
        margin = ad.maxc(ad.sub(da, s), 0.0)
        w = ad.emul(ad.square(ad.emul(margin, ad.reciprocal(da))),
                    ad.reciprocal(splus))
        active = ad.gate_lt(ad.sub(s, da), 0.0)
        raw = ad.sub(ad.emul(kc, ad.square(ad.reciprocal(splus))),
                     ad.emul(ga, ad.emul(sd, w)))
        a_sc = ad.emul(active, raw)
        one = tape.input(np.ones((1, 1)))
        return ad.smul(w, one), ad.smul(a_sc, tape.input(np.ones(1)))

    return LeafRmp("collision_avoidance",
                   np.array([k_c, eps, d_act, gamma]),
                   ("k_c", "eps", "d_act", "gamma"), build)


def joint_damping(beta_d: float = 1.0, w_d: float = 1e-2) -> LeafRmp:
    """Uniform damping on the configuration-space identity leaf."""

    def build(x: Var, xd: Var, theta: Var):
        bd, wd = _p(theta, 0), _p(theta, 1)
        M = ad.smul(wd, x.tape.input(np.eye(x.shape[0])))
        return M, ad.neg(ad.smul(bd, xd))

    return LeafRmp("joint_damping", np.array([beta_d, w_d]),
                   ("beta_d", "w_d"), build)


def joint_velocity_limit(limit: float, k_v: float = 10.0,
                         sigma_v: float = 0.05,
                         w_max: float = 1e3) -> LeafRmp:
    """Soft barrier on one joint's speed, braking above 90% of the limit.

    Weight exp((|xd| - limit) / sigma_v) capped at w_max; acceleration
    -k_v * sign(xd) * max(|xd| - 0.9 * limit, 0) (zero in the deadzone).
    """
    if limit <= 0:
        raise ValueError("velocity limit must be positive")

    def build(x: Var, xd: Var, theta: Var):
        tape = x.tape
        kv, sv = _p(theta, 0), _p(theta, 1)
        v = ad.toscalar(xd)
        absv = ad.add(ad.maxc(v, 0.0), ad.maxc(ad.neg(v), 0.0))
        w = ad.minc(ad.exp(ad.emul(ad.sub(absv, tape.input(np.asarray(limit))),
                                   ad.reciprocal(sv))), w_max)
        # sign(v) * max(|v| - 0.9L, 0) as a smooth-op composition
        over_pos = ad.maxc(ad.sub(v, tape.input(np.asarray(0.9 * limit))), 0.0)
        over_neg = ad.maxc(ad.sub(ad.neg(v),
                                  tape.input(np.asarray(0.9 * limit))), 0.0)
        a_sc = ad.neg(ad.emul(kv, ad.sub(over_pos, over_neg)))
        one = tape.input(np.ones((1, 1)))
        return ad.smul(w, one), ad.smul(a_sc, tape.input(np.ones(1)))

    return LeafRmp("joint_velocity_limit", np.array([k_v, sigma_v]),
                   ("k_v", "sigma_v"), build)


def unit_rmp(dim: int) -> LeafRmp:
    """Trivial fragment M = I, a = 0; isolates combination cost in benchmarks."""

    def build(x: Var, xd: Var, theta: Var):
        tape = x.tape
        return tape.input(np.eye(dim)), tape.input(np.zeros(dim))

    return LeafRmp("unit", np.zeros(0), (), build)
