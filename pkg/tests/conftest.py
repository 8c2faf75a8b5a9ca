import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

from quasiflow import _kernels  # noqa: E402
from quasiflow.ingest import from_records  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

KERNEL_NAMES = ("segment_sum", "flow_static", "flow_temporal", "graph_metrics")


@pytest.fixture(params=sorted(_kernels.backends()))
def backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    mod = _kernels.backends()[request.param]
    for name in KERNEL_NAMES:
        monkeypatch.setattr(_kernels, name, getattr(mod, name))
    return request.param


def random_records(rng, n_nodes, n_edges, t_max=20, integer_amounts=False, self_loops=False):
    """(timestamp, source, target, amount, label) rows over integer account ids."""
    rows = []
    for _ in range(n_edges):
        s = int(rng.integers(n_nodes))
        t = int(rng.integers(n_nodes))
        if s == t and not self_loops:
            t = (s + 1) % n_nodes
        amt = float(rng.integers(1, 100)) if integer_amounts else float(np.round(rng.uniform(0.5, 100), 2))
        rows.append((int(rng.integers(t_max)), s, t, amt, int(rng.random() < 0.1)))
    return rows


def dataset_from_rows(rows, n_nodes):
    return from_records(rows, accounts=[f"n{i}" for i in range(n_nodes)])


def random_dataset(rng, n_nodes, n_edges, **kw):
    return dataset_from_rows(random_records(rng, n_nodes, n_edges, **kw), n_nodes)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
