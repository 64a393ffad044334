"""Compromise solutions for two-agent social choice and the multimatum game form."""

__version__ = "0.1.0"
