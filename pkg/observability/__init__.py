"""
Lab observability

Components:
  logging     -> one stream handler, level from UNINET_LOG_LEVEL
  Prometheus  -> counters / gauges / histograms for training, attacks, campaigns
"""
from observability.logging_setup      import configure_logging
from observability.prometheus_metrics import metrics, start_metrics_server

__all__ = ["configure_logging", "metrics", "start_metrics_server"]
