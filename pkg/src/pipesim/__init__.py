"""Discrete-event simulator for pipeline-parallel LLM inference scheduling."""

__version__ = "0.1.0"
