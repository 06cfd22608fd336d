"""Desk-scale pixel-tool agent training stack.

A seeded synthetic pixel world with executable tools, a featurized softmax
toolchain policy, three training phases (weighted imitation, curiosity plus
coherence reinforcement under a KL corridor, and safe test-time RL via
calibrated trajectory voting), plus process metrics, hybrid retrieval and
de-duplication audits.
"""

__version__ = "0.1.0"

from . import world  # noqa: F401
