"""Reinforcement-learning workbench for spacecraft inspection and docking."""

from proxrl.errors import CheckpointError, DomainError, NonFiniteLossError

__all__ = ["CheckpointError", "DomainError", "NonFiniteLossError"]
__version__ = "0.1.0"
