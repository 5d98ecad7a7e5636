"""Batch figure rendering for experiment trace/spectrum/summary files.

Read-only consumers: every number plotted comes from the CSV/JSON outputs
of the experiment CLI, nothing is recomputed here.
"""

__version__ = "0.1.0"
