"""Softmax attention weights built in closed form, with checkers for their error bounds."""
from .attn import AffineMap, AttentionHead, AttentionStack, Pipeline, forward_head, forward_stack
from .interp import IndexMapG, InterpolationGrid, TruncatedLinearModel, range_clip

__all__ = [
    "AffineMap", "AttentionHead", "AttentionStack", "Pipeline", "forward_head", "forward_stack",
    "IndexMapG", "InterpolationGrid", "TruncatedLinearModel", "range_clip",
]
