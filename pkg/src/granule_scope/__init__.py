"""granule-scope: surrogate-informed in situ visualization workbench.

A learned graph-network simulator predicts a cheap granular-flow rollout;
metadata harvested from that rollout (scalar ranges, camera views, time
windows) configures a full-resolution MPM run whose in situ render loop is
stage-instrumented (receive / setup / render).
"""

__version__ = "0.1.0"
