"""Sparse-sensor spatiotemporal field reconstruction with a local transformer.

Subpackages: ``autodiff`` (reverse tape plus order-2 coordinate jets),
``simulators`` (heat, shallow water, pollution), ``models`` (FieldFormer and
coordinate-MLP baselines) and ``evaluation`` (metrics and the text report).
"""
from __future__ import annotations

__version__ = "0.1.0"
