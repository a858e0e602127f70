"""Sparse instance recognition: layers, box coding and the detector built on them."""

from .boxes import Proposal, decode_box, decode_residual, encode_box, encode_residual
from .layers import SirLayerState, init_stack, sir_backward, sir_forward, sir_layer

__all__ = ["Proposal", "SirLayerState", "decode_box", "decode_residual", "encode_box",
           "encode_residual", "init_stack", "sir_backward", "sir_forward", "sir_layer"]
