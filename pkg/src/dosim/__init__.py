"""Deterministic simulator of DoS/DDoS attacks against an agent-based
detection and reaction system."""

__version__ = "0.1.0"
