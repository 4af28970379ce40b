from pathlib import Path

from prometheus_client import CollectorRegistry, Counter, Histogram, write_to_textfile

registry = CollectorRegistry()


# Simulated traffic
envelopes_total = Counter(
    "privbcast_envelopes_total",
    "Delivered simulated envelopes",
    ["kind"],
    registry=registry,
)

envelope_bytes_total = Counter(
    "privbcast_envelope_bytes_total",
    "Delivered simulated envelope bytes (header included)",
    ["kind"],
    registry=registry,
)

dc_rounds_total = Counter(
    "privbcast_dc_rounds_total",
    "Completed DC-net rounds",
    ["outcome"],
    registry=registry,
)

# Runs
runs_total = Counter(
    "privbcast_runs_total",
    "Simulation runs",
    ["mode", "status"],
    registry=registry,
)

run_ticks = Histogram(
    "privbcast_run_ticks",
    "Simulated ticks until the event queue drained",
    buckets=(10.0, 25.0, 50.0, 100.0, 250.0, 500.0, 1000.0, 5000.0),
    registry=registry,
)


class MetricsCollector:
    """Update hooks called by the simulator and the experiment runner"""

    @staticmethod
    def record_envelope(kind: str, size: int):
        envelopes_total.labels(kind=kind).inc()
        envelope_bytes_total.labels(kind=kind).inc(size)

    @staticmethod
    def record_dc_round(outcome: str):
        dc_rounds_total.labels(outcome=outcome).inc()

    @staticmethod
    def record_run(mode: str, status: str, ticks: int = 0):
        runs_total.labels(mode=mode, status=status).inc()
        if status == "ok":
            run_ticks.observe(ticks)

    @staticmethod
    def export(path: str) -> Path:
        """Write the registry in text exposition format"""
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        write_to_textfile(str(target), registry)
        return target
