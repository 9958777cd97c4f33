import hashlib
from contextlib import contextmanager
from typing import Iterable, List, Tuple

import torch
import torch.nn as nn

from app.exceptions import ConfigError
from app.schemas import VALID_RESOLUTIONS

ConvPlan = List[Tuple[int, int, int]]


def scaled_widths(base: Iterable[int], multiplier: float) -> List[int]:
    return [max(1, int(round(w * multiplier))) for w in base]


def _check_resolution(resolution: int):
    if resolution not in VALID_RESOLUTIONS:
        raise ConfigError(
            f"Resolution {resolution} is not reachable by the conv stacks; use one of {VALID_RESOLUTIONS}"
        )


def upsampling_plan(resolution: int, n_layers: int) -> ConvPlan:
    """
    (kernel, stride, padding) per transposed conv, from a 1x1 input to
    resolution x resolution: 4x4 first, then doubling, then size-preserving.
    """
    _check_resolution(resolution)
    doublings = resolution.bit_length() - 3  # log2(resolution / 4)
    if 1 + doublings > n_layers:
        raise ConfigError(f"{n_layers} upscaling layers cannot reach {resolution}px")
    return [(4, 1, 0)] + [(4, 2, 1)] * doublings + [(3, 1, 1)] * (n_layers - 1 - doublings)


def downsampling_plan(resolution: int, n_layers: int, collapse: bool = True) -> Tuple[ConvPlan, int]:
    """
    Stride-2 4x4 convs while the map is larger than 1x1, size-preserving
    3x3 convs afterwards. With collapse, the last conv maps the remaining
    map to 1x1. Returns the plan and the final spatial size.
    """
    _check_resolution(resolution)
    plan: ConvPlan = []
    size = resolution
    hidden = n_layers - 1 if collapse else n_layers
    for _ in range(hidden):
        if size >= 2:
            plan.append((4, 2, 1))
            size //= 2
        else:
            plan.append((3, 1, 1))
    if collapse:
        plan.append((size, 1, 0))
        size = 1
    return plan, size


def weights_init(m: nn.Module):
    """Centered normal init, std 0.02; batch-norm scales around 1."""
    classname = m.__class__.__name__
    if classname.find("Conv") != -1 or classname.find("Linear") != -1:
        nn.init.normal_(m.weight.data, 0.0, 0.02)
        if m.bias is not None:
            nn.init.constant_(m.bias.data, 0.0)
    elif classname.find("BatchNorm") != -1:
        nn.init.normal_(m.weight.data, 1.0, 0.02)
        nn.init.constant_(m.bias.data, 0.0)


class GradientReversalFunction(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, weight):
        ctx.weight = weight
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return grad_output.neg() * ctx.weight, None


class GradientReversal(nn.Module):
    """Identity forward; multiplies the gradient by -weight backward."""

    def __init__(self, weight: float = 1.0):
        super().__init__()
        self.weight = weight

    def forward(self, x):
        return GradientReversalFunction.apply(x, self.weight)


def set_requires_grad(module: nn.Module, flag: bool):
    for param in module.parameters():
        param.requires_grad_(flag)


def weights_hash(module: nn.Module) -> str:
    """sha256 over every parameter and buffer, in state-dict order"""
    digest = hashlib.sha256()
    for name, tensor in module.state_dict().items():
        digest.update(name.encode("utf-8"))
        digest.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return digest.hexdigest()


@contextmanager
def inference_mode(*modules: nn.Module):
    """Eval mode and no autograd; restores each module's training flag."""
    flags = [m.training for m in modules]
    for m in modules:
        m.eval()
    try:
        with torch.no_grad():
            yield
    finally:
        for m, flag in zip(modules, flags):
            m.train(flag)
