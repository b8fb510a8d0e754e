"""Pruned-token vision-language driving policy with a synthetic closed-loop world."""

__version__ = "0.1.0"
