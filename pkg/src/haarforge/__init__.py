"""Dyadic Haar system toolkit.

Finite-depth combinatorics of dyadic intervals, step-function numerics, Haar
multiplier operators, mixed/square-function norms, the basis-reproduction game
with explicit responder strategies, and diagonal factorization certificates.
"""

from __future__ import annotations

__version__ = "0.1.0"
