"""Scalable graph-based semi-supervised learning over learned high-dense points.

The pipeline has three stages: learn representative points of the high-density
regions of the data together with a spanning tree over them (``hdp``), turn the
learned factors into an implicit affinity graph over all input points that is
never materialized (``graph``), and infer labels for the unlabeled points with
either a matrix-free conjugate-gradient solve or a reduced closed-form solve
(``infer``).  ``baselines`` carries the reference methods (dense LGC, anchor
graph regularization) and ``cli`` a reproducible benchmark harness.
"""

from . import baselines, cli, data, graph, hdp, infer

__all__ = ["baselines", "cli", "data", "graph", "hdp", "infer"]
__version__ = "0.1.0"
