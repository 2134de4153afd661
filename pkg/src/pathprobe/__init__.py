"""pathprobe: censorship path-diversity measurement.

Probe the same censored domain toward many control-server destinations from
one vantage point, classify what comes back against a unique static payload,
locate interfering devices with application traceroutes, and quantify how
inconsistently paths are censored. A deterministic simulated internetwork
(pathprobe.simnet) stands in for the real one in tests and what-if queries.
"""

from . import analysis, model, prober, sentinel, simnet, tracer, transport, vetting

__version__ = "0.1.0"

__all__ = [
    "analysis",
    "model",
    "prober",
    "sentinel",
    "simnet",
    "tracer",
    "transport",
    "vetting",
    "__version__",
]
