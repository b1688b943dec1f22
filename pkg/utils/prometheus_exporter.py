"""
Prometheus Metrics Exporter for CascadeSplit
Exports metrics for the offload path:
- Server requests and latency
- Client offload outcomes
- Routed samples per destination
"""

import logging
from typing import Dict, Any

from prometheus_client import Counter, Histogram, generate_latest, start_http_server
from prometheus_client.core import CollectorRegistry

logger = logging.getLogger(__name__)

# create a registry
registry = CollectorRegistry()

# metrics
SERVER_REQUESTS = Counter(
    'cascadesplit_server_requests_total',
    'Classification requests handled by the server',
    ['status'],
    registry=registry
)

SERVER_LATENCY = Histogram(
    'cascadesplit_server_request_seconds',
    'Server-side request handling time in seconds',
    buckets=[0.0005, 0.001, 0.005, 0.01, 0.05, 0.1, 0.5, 1.0],
    registry=registry
)

OFFLOADS = Counter(
    'cascadesplit_offloads_total',
    'Client offload attempts by outcome',
    ['outcome'],
    registry=registry
)

ROUTED_SAMPLES = Counter(
    'cascadesplit_routed_samples_total',
    'Samples finalized per destination',
    ['destination'],
    registry=registry
)


def track_offload(outcome: str):
    """Count one offload attempt"""
    OFFLOADS.labels(outcome=outcome).inc()


def track_route(destination: str):
    """Count one finalized sample"""
    ROUTED_SAMPLES.labels(destination=destination).inc()


def get_metrics() -> bytes:
    """Get metrics in Prometheus format"""
    return generate_latest(registry)


def start_metrics_server(port: int):
    """Expose the registry over HTTP"""
    start_http_server(port, registry=registry)
    logger.info(f"Prometheus metrics exposed on port {port}")


def get_metrics_summary() -> Dict[str, Any]:
    """
    Get a readable summary of metrics
    """
    summary = {}

    for metric in registry.collect():
        summary[metric.name] = [
            {'labels': sample.labels, 'value': sample.value}
            for sample in metric.samples
        ]

    return summary
