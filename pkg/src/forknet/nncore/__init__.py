"""Reverse-mode differentiable primitives for the enhancement network."""

from . import functional
from .gradcheck import GradcheckReport, gradcheck
from .params import ParamStore
from .tensor import Tensor, no_grad

__all__ = ["functional", "gradcheck", "GradcheckReport", "ParamStore", "Tensor", "no_grad"]
