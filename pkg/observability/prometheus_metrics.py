"""
Prometheus — lab metrics

Progress and anomaly counters for training, evaluation and attack campaigns:

  Counter:   train steps, attack iterations, dropped instances, clamped MTL
             terms, failed campaign cells
  Gauge:     last epoch loss per loss term, active attack cells
  Histogram: forward latency, wall-clock per attack
"""
from prometheus_client import Counter, Gauge, Histogram, start_http_server


# ── Define all lab metrics ────────────────────────────────────────

# COUNTERS (never decrease)
TRAIN_STEPS = Counter(
    "uninet_train_steps_total",
    "Optimizer steps taken",
    labelnames=["tasks"]
)

ATTACK_ITERATIONS = Counter(
    "uninet_attack_iterations_total",
    "Gradient iterations performed by attacks",
    labelnames=["kind"]          # pgd, dag, hide
)

DROPPED_INSTANCES = Counter(
    "uninet_dropped_instances_total",
    "Ground-truth instances that matched no level range during target assignment"
)

MTL_CLAMPS = Counter(
    "uninet_mtl_clamped_terms_total",
    "Geometric-mean loss terms clamped to the floor",
    labelnames=["loss"]
)

FAILED_CELLS = Counter(
    "uninet_campaign_failed_cells_total",
    "Campaign cells that raised instead of producing a report",
    labelnames=["kind"]
)

# GAUGES (can go up and down)
EPOCH_LOSS = Gauge(
    "uninet_epoch_loss",
    "Mean loss of the last finished epoch",
    labelnames=["loss"]
)

ACTIVE_CELLS = Gauge(
    "uninet_campaign_active_cells",
    "Campaign cells currently running"
)

# HISTOGRAMS (latency distributions)
FORWARD_LATENCY = Histogram(
    "uninet_forward_latency_seconds",
    "Single-image forward pass latency",
    labelnames=["tasks"],
    buckets=[0.005, 0.01, 0.025, 0.05, 0.1, 0.25, 0.5, 1]
)

ATTACK_SECONDS = Histogram(
    "uninet_attack_seconds",
    "Wall-clock per attacked image",
    labelnames=["kind"],
    buckets=[0.05, 0.1, 0.25, 0.5, 1, 2, 5, 10]
)


class LabMetrics:
    """
    Helper class for recording lab metrics.
    Used by target assignment, the MTL loss, trainer, attacks and campaigns.
    """

    @staticmethod
    def record_train_step(tasks: str):
        TRAIN_STEPS.labels(tasks=tasks).inc()

    @staticmethod
    def record_epoch(losses: dict):
        for name, value in losses.items():
            EPOCH_LOSS.labels(loss=name).set(value)

    @staticmethod
    def record_dropped_instances(count: int = 1):
        DROPPED_INSTANCES.inc(count)

    @staticmethod
    def record_mtl_clamp(loss: str):
        MTL_CLAMPS.labels(loss=loss).inc()

    @staticmethod
    def record_attack(kind: str, iterations: int, seconds: float):
        ATTACK_ITERATIONS.labels(kind=kind).inc(iterations)
        ATTACK_SECONDS.labels(kind=kind).observe(seconds)

    @staticmethod
    def record_forward(tasks: str, seconds: float):
        FORWARD_LATENCY.labels(tasks=tasks).observe(seconds)

    @staticmethod
    def cell_started():
        ACTIVE_CELLS.inc()

    @staticmethod
    def cell_finished(kind: str, failed: bool = False):
        ACTIVE_CELLS.dec()
        if failed:
            FAILED_CELLS.labels(kind=kind).inc()


def start_metrics_server(port: int = 8001):
    """
    Start the Prometheus scrape endpoint: http://localhost:<port>/metrics

      # HELP uninet_train_steps_total Optimizer steps taken
      # TYPE uninet_train_steps_total counter
      uninet_train_steps_total{tasks="od,ss,is,d,id"} 1200.0
    """
    start_http_server(port)
    print(f"[Metrics] Prometheus endpoint on http://localhost:{port}/metrics")


# ── Global singleton ──────────────────────────────────────────────
metrics = LabMetrics()
