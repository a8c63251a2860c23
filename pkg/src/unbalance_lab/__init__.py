"""Benchmark laboratory for unbalance-corrective training losses.

Implements a unified cost-corrective loss for class imbalance, confounding
bias and unfair classification, six competing corrections, synthetic and
real tabular benchmarks, group-wise evaluation and a sweep harness.
"""

__version__ = "0.1.0"
