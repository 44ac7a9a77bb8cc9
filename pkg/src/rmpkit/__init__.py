"""Motion-policy toolkit: RMP combination via reverse-accumulation
autodiff, tree message passing, and explicit Jacobians, plus a planar
reaching environment and a runtime-scaling benchmark."""

from rmpkit.autodiff import Tape, Var, gradient, jacobian, jvp

__all__ = ["Tape", "Var", "gradient", "jacobian", "jvp"]
