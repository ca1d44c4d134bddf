"""fead: security monitoring planner and provenance-graph anomaly detector.

Subpackages cover the pipeline end to end: audit-event ingestion into
provenance graphs (`provgraph`), symbolic capability modelling (`capmodel`),
cost-ranked monitoring-task decomposition (`planner`), attack-report
information extraction (`extraction`), graph-attention anomaly detection
with locality post-processing (`detector`), and the evaluation harness
(`evalharness`). `fead.cli` wires everything into one command-line tool.
"""

__version__ = "0.1.0"
