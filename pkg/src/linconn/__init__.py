"""Dual-track continual learning with a linear weight connector.

A stability track is trained with null-space projected updates, a plasticity
track with cross-entropy plus feature distillation, and the two are fused by
linear weight averaging with coefficient 1/t after task t.
"""

__version__ = "0.1.0"
