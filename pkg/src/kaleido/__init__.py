"""Adaptive partial parameter sharing for cooperative multi-agent RL, on a small numpy autodiff core."""
__version__ = "0.1.0"
