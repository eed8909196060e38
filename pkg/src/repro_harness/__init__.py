"""Reproducible-experiment harness.

Wraps arbitrary experiment commands with enforced version-control capture,
deterministic seed management, canonical run manifests, metric event logging,
multi-run aggregation, replay verification, dataset preparation utilities,
and a Gaussian-process Bayesian hyper-parameter optimizer.
"""

__version__ = "0.1.0"
