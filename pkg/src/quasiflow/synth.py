"""Synthetic transaction economy with injected laundering patterns.

Only meant for tests and benchmarks. Licit payments follow a contact
network with heavy-tailed activity; each laundering pattern moves funds
from one dispenser through a fan-out, a passthrough layer and a fan-in
into a sink within a short window. Laundering amounts are drawn from the
same distribution as licit ones so individual rows look ordinary.
"""
from __future__ import annotations

import numpy as np

from .ingest import Dataset, from_records

T0 = 1_661_990_400  # 2022-09-01 00:00 UTC


def synthetic_economy(n_transactions: int = 50_000, n_accounts: int = 4_000,
                      illicit_rate: float = 0.005, days: int = 30, seed: int = 0) -> Dataset:
    rng = np.random.default_rng(seed)
    span = days * 86400
    records = []

    n_illicit_target = int(round(illicit_rate * n_transactions))
    illicit = []
    n_pattern = 0
    while len(illicit) < n_illicit_target:
        illicit.extend(_pattern(rng, n_pattern, span))
        n_pattern += 1
    illicit = illicit[:n_illicit_target]

    n_licit = n_transactions - len(illicit)
    activity = rng.pareto(1.5, n_accounts) + 1.0
    activity /= activity.sum()
    contacts = [rng.choice(n_accounts, size=8, replace=False) for _ in range(n_accounts)]
    senders = rng.choice(n_accounts, size=n_licit, p=activity)
    explore = rng.random(n_licit) < 0.2
    random_tgt = rng.choice(n_accounts, size=n_licit, p=activity)
    pick = rng.integers(0, 8, n_licit)
    ts = T0 + rng.integers(0, span, n_licit)
    amounts = _amounts(rng, n_licit)
    for i in range(n_licit):
        s = int(senders[i])
        t = int(random_tgt[i]) if explore[i] else int(contacts[s][pick[i]])
        if t == s:
            t = (s + 1) % n_accounts
        records.append((int(ts[i]), f"C{s:06d}", f"C{t:06d}", float(amounts[i]), 0))
    records.extend(illicit)
    # shuffle so file order carries no signal before the timestamp sort
    order = rng.permutation(len(records))
    return from_records([records[i] for i in order])


def _amounts(rng: np.random.Generator, n: int) -> np.ndarray:
    return np.round(rng.lognormal(6.0, 1.2, n), 2)


def _pattern(rng: np.random.Generator, k: int, span: int) -> list[tuple]:
    """One dispenser -> fan-out -> passthrough layer -> fan-in -> sink chain."""
    width = int(rng.integers(3, 7))
    start = T0 + int(rng.integers(0, span - 4 * 3600))
    step = 600
    disp, sink = f"L{k:04d}D", f"L{k:04d}S"
    out = []
    base = _amounts(rng, width)
    for j in range(width):
        a, b = f"L{k:04d}A{j}", f"L{k:04d}B{j}"
        t = start + j * 60
        amt = float(base[j])
        out.append((t, disp, a, amt, 1))
        amt = round(amt * float(rng.uniform(0.9, 0.99)), 2)
        out.append((t + step, a, b, amt, 1))
        amt = round(amt * float(rng.uniform(0.9, 0.99)), 2)
        out.append((t + 2 * step, b, sink, amt, 1))
    return out
