"""Minimal reverse-mode autodiff with the layers the codec networks need."""

from patchpcc.nn.autograd import Tensor, make_op, no_grad
from patchpcc.nn.gradcheck import GradCheckReport, grad_check
from patchpcc.nn.layers import Kind, LayerSpec, Network, forward
from patchpcc.nn.optim import Adam, RMSprop

__all__ = [
    "Adam", "GradCheckReport", "Kind", "LayerSpec", "Network", "RMSprop",
    "Tensor", "forward", "grad_check", "make_op", "no_grad",
]
