"""Differentiable predictive control for multi-zone building heating.

A reverse-mode autodiff core, a block-structured neural state-space model,
an explicit neural control law trained through that model, an RC-network
building emulator, and a CLI that ties the steps together.
"""

__version__ = "0.1.0"
