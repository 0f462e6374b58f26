"""Streaming detector for multi-stage intrusion campaigns on audit-event graphs."""

__version__ = "0.1.0"
