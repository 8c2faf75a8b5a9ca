"""Transaction ingestion, dataset statistics and temporal splits.

A parsed :class:`Dataset` is columnar: one numpy array per canonical field,
rows sorted by timestamp (stable, so equal timestamps keep file order).
Account strings are interned to dense integer ids in order of first
appearance in the sorted rows.
"""
from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
import pandas as pd

from .errors import DataError, RowError, SchemaError

SECONDS_PER_DAY = 86400

SCHEMAS: dict[str, dict[str, str]] = {
    # canonical field -> column in file
    "ibm_aml": {
        "timestamp": "Timestamp",
        "source_bank": "From Bank",
        "source": "Account",
        "target_bank": "To Bank",
        "target": "Account.1",
        "amount": "Amount Paid",
        "label": "Is Laundering",
    },
    "eth_phishing": {
        "timestamp": "timestamp",
        "source": "from_address",
        "target": "to_address",
        "amount": "value",
        "label": "is_phishing",
    },
    "generic": {
        "timestamp": "timestamp",
        "source": "source",
        "target": "target",
        "amount": "amount",
        "label": "label",
    },
}

# carried through as optional extras when present
IBM_EXTRAS = ("Amount Received", "Receiving Currency", "Payment Currency", "Payment Format")

CACHE_MAGIC = b"QFDS"
CACHE_VERSION = 1


@dataclass(frozen=True)
class Transaction:
    tx_id: int
    timestamp: int
    source: int
    target: int
    amount: float
    label: int


@dataclass(frozen=True)
class DatasetStats:
    nodes: int
    edges: int
    illicit_rate: float
    timespan_days: float
    total_amount: float

    def to_dict(self) -> dict:
        return {
            "nodes": self.nodes,
            "edges": self.edges,
            "illicit_rate": self.illicit_rate,
            "timespan_days": self.timespan_days,
            "total_amount": self.total_amount,
        }


@dataclass
class Dataset:
    tx_id: np.ndarray
    timestamp: np.ndarray
    source: np.ndarray
    target: np.ndarray
    amount: np.ndarray
    label: np.ndarray
    accounts: list[str]
    extras: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.tx_id = np.ascontiguousarray(self.tx_id, dtype=np.int64)
        self.timestamp = np.ascontiguousarray(self.timestamp, dtype=np.int64)
        self.source = np.ascontiguousarray(self.source, dtype=np.int64)
        self.target = np.ascontiguousarray(self.target, dtype=np.int64)
        self.amount = np.ascontiguousarray(self.amount, dtype=np.float64)
        self.label = np.ascontiguousarray(self.label, dtype=np.int8)
        n = len(self.tx_id)
        for name in ("timestamp", "source", "target", "amount", "label"):
            if len(getattr(self, name)) != n:
                raise DataError(f"column {name} has length {len(getattr(self, name))}, expected {n}")
        for arr in (self.tx_id, self.timestamp, self.source, self.target, self.amount, self.label):
            arr.flags.writeable = False
        self._index = None

    def __len__(self) -> int:
        return len(self.tx_id)

    def __iter__(self) -> Iterator[Transaction]:
        for i in range(len(self)):
            yield self[i]

    def __getitem__(self, i: int) -> Transaction:
        return Transaction(
            int(self.tx_id[i]), int(self.timestamp[i]), int(self.source[i]),
            int(self.target[i]), float(self.amount[i]), int(self.label[i]),
        )

    @property
    def n_accounts(self) -> int:
        return len(self.accounts)

    @property
    def account_index(self) -> dict[str, int]:
        if self._index is None:
            self._index = {a: i for i, a in enumerate(self.accounts)}
        return self._index

    def subset(self, rows: np.ndarray) -> "Dataset":
        """Rows ``rows`` (positional) as a new dataset sharing the id map."""
        rows = np.asarray(rows)
        return Dataset(
            self.tx_id[rows], self.timestamp[rows], self.source[rows], self.target[rows],
            self.amount[rows], self.label[rows], self.accounts,
            {k: v[rows] for k, v in self.extras.items()},
        )

    def with_labels(self, label: np.ndarray) -> "Dataset":
        return Dataset(self.tx_id, self.timestamp, self.source, self.target, self.amount,
                       label, self.accounts, self.extras)

    def equals(self, other: "Dataset") -> bool:
        cols = ("tx_id", "timestamp", "source", "target", "amount", "label")
        if any(not np.array_equal(getattr(self, c), getattr(other, c)) for c in cols):
            return False
        if self.accounts != other.accounts or self.extras.keys() != other.extras.keys():
            return False
        return all(np.array_equal(self.extras[k], other.extras[k]) for k in self.extras)


def _parse_numeric(series: pd.Series, column: str, integer: bool) -> np.ndarray:
    values = pd.to_numeric(series, errors="coerce")
    bad = values.isna().to_numpy()
    if bad.any():
        i = int(np.argmax(bad))
        raise RowError(i + 2, column, series.iloc[i])
    arr = values.to_numpy()
    if integer:
        if np.any(arr != np.floor(arr)):
            i = int(np.argmax(arr != np.floor(arr)))
            raise RowError(i + 2, column, series.iloc[i])
        return arr.astype(np.int64)
    return arr.astype(np.float64)


def _parse_timestamps(series: pd.Series, column: str, fmt: str | None) -> np.ndarray:
    as_num = pd.to_numeric(series, errors="coerce")
    if not as_num.isna().any():
        return _parse_numeric(series, column, integer=True)
    parsed = pd.to_datetime(series, format=fmt, errors="coerce", utc=True)
    bad = parsed.isna().to_numpy()
    if bad.any():
        i = int(np.argmax(bad))
        raise RowError(i + 2, column, series.iloc[i])
    return (parsed.astype("int64").to_numpy() // 10**9).astype(np.int64)


def _parse_labels(series: pd.Series, column: str) -> np.ndarray:
    lab = _parse_numeric(series, column, integer=True)
    bad = (lab != 0) & (lab != 1)
    if bad.any():
        i = int(np.argmax(bad))
        raise RowError(i + 2, column, series.iloc[i])
    return lab.astype(np.int8)


def _intern(src_raw: np.ndarray, dst_raw: np.ndarray) -> tuple[np.ndarray, np.ndarray, list[str]]:
    # interleave so ids follow first appearance row by row, source before target
    both = np.empty(2 * len(src_raw), dtype=object)
    both[0::2] = src_raw
    both[1::2] = dst_raw
    codes, uniques = pd.factorize(both, sort=False)
    codes = codes.astype(np.int64)
    return codes[0::2], codes[1::2], [str(u) for u in uniques]


def parse_transactions(path, schema: str = "generic") -> Dataset:
    """Read a CSV file in one of the known schemas into a :class:`Dataset`.

    Raises SchemaError for a missing column and RowError (with the 1-based
    file line) for the first unparseable amount, timestamp or label.
    """
    if schema not in SCHEMAS:
        raise DataError(f"unknown schema {schema!r}; expected one of {sorted(SCHEMAS)}")
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    cols = SCHEMAS[schema]
    frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    if schema == "ibm_aml":
        # pandas deduplicates the second "Account" header; accept either spelling
        if "Account.1" not in frame.columns and list(frame.columns).count("Account") > 1:
            frame.columns = _dedupe(list(frame.columns))
    for col in cols.values():
        if col not in frame.columns:
            raise SchemaError(col, path)
    has_tx_id = schema == "generic" and "tx_id" in frame.columns

    fmt = "%Y/%m/%d %H:%M" if schema == "ibm_aml" else None
    timestamp = _parse_timestamps(frame[cols["timestamp"]], cols["timestamp"], fmt)
    amount = _parse_numeric(frame[cols["amount"]], cols["amount"], integer=False)
    if np.any(amount < 0):
        i = int(np.argmax(amount < 0))
        raise RowError(i + 2, cols["amount"], frame[cols["amount"]].iloc[i])
    label = _parse_labels(frame[cols["label"]], cols["label"])
    if schema == "ibm_aml":
        src_raw = (frame[cols["source_bank"]] + "_" + frame[cols["source"]]).to_numpy()
        dst_raw = (frame[cols["target_bank"]] + "_" + frame[cols["target"]]).to_numpy()
    else:
        src_raw = frame[cols["source"]].to_numpy()
        dst_raw = frame[cols["target"]].to_numpy()
    if has_tx_id:
        tx_id = _parse_numeric(frame["tx_id"], "tx_id", integer=True)
        if len(np.unique(tx_id)) != len(tx_id):
            raise DataError(f"duplicate tx_id values in {path}")
    else:
        tx_id = np.arange(len(frame), dtype=np.int64)

    extras = {}
    if schema == "ibm_aml":
        for col in IBM_EXTRAS:
            if col in frame.columns:
                key = col.lower().replace(" ", "_")
                if col == "Amount Received":
                    extras[key] = _parse_numeric(frame[col], col, integer=False)
                else:
                    extras[key] = frame[col].to_numpy(dtype=object).astype(str)

    order = np.argsort(timestamp, kind="stable")
    src_raw, dst_raw = src_raw[order], dst_raw[order]
    source, target, accounts = _intern(src_raw, dst_raw)
    return Dataset(
        tx_id[order], timestamp[order], source, target, amount[order], label[order],
        accounts, {k: v[order] for k, v in extras.items()},
    )


def _dedupe(columns: list[str]) -> list[str]:
    seen: dict[str, int] = {}
    out = []
    for c in columns:
        k = seen.get(c, 0)
        out.append(c if k == 0 else f"{c}.{k}")
        seen[c] = k + 1
    return out


def write_transactions(d: Dataset, path) -> None:
    """Write ``d`` as a generic-schema CSV (with tx_id) that re-parses identically."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["tx_id", "timestamp", "source", "target", "amount", "label"])
        acc = d.accounts
        for i in range(len(d)):
            w.writerow([
                int(d.tx_id[i]), int(d.timestamp[i]), acc[d.source[i]], acc[d.target[i]],
                repr(float(d.amount[i])), int(d.label[i]),
            ])


def from_records(records, accounts: list[str] | None = None) -> Dataset:
    """Build a dataset from ``(timestamp, source, target, amount, label)`` tuples.

    Sources and targets may be raw strings (interned here) or integer ids
    when ``accounts`` is given. Row order defines tx_id.
    """
    records = list(records)
    if not records:
        raise DataError("no records")
    ts = np.array([r[0] for r in records], dtype=np.int64)
    amt = np.array([r[3] for r in records], dtype=np.float64)
    lab = np.array([r[4] for r in records], dtype=np.int8)
    if np.any(amt < 0):
        raise DataError("negative amount")
    order = np.argsort(ts, kind="stable")
    if accounts is None:
        src_raw = np.array([str(r[1]) for r in records], dtype=object)[order]
        dst_raw = np.array([str(r[2]) for r in records], dtype=object)[order]
        src, dst, accounts = _intern(src_raw, dst_raw)
    else:
        src = np.array([r[1] for r in records], dtype=np.int64)[order]
        dst = np.array([r[2] for r in records], dtype=np.int64)[order]
    return Dataset(np.arange(len(records), dtype=np.int64)[order], ts[order], src, dst,
                   amt[order], lab[order], list(accounts))


def dataset_stats(d: Dataset) -> DatasetStats:
    if len(d) == 0:
        raise DataError("dataset is empty")
    span = int(d.timestamp.max() - d.timestamp.min())
    return DatasetStats(
        nodes=d.n_accounts,
        edges=len(d),
        illicit_rate=int(d.label.sum(dtype=np.int64)) / len(d),
        timespan_days=span / SECONDS_PER_DAY,
        total_amount=math.fsum(d.amount.tolist()),
    )


# ---------------------------------------------------------------------------
# Binary columnar cache
# ---------------------------------------------------------------------------

_HEADER = struct.Struct("<4sIQQI")  # magic, version, n rows, n accounts, n extras


def save_cache(d: Dataset, path) -> None:
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, len(d), d.n_accounts, len(d.extras)))
        for arr, dt in ((d.tx_id, "<i8"), (d.timestamp, "<i8"), (d.source, "<i8"),
                        (d.target, "<i8"), (d.amount, "<f8"), (d.label, "<i1")):
            fh.write(arr.astype(dt, copy=False).tobytes())
        _write_strings(fh, d.accounts)
        for name, arr in d.extras.items():
            _write_strings(fh, [name])
            if arr.dtype.kind == "f":
                fh.write(b"f")
                fh.write(arr.astype("<f8").tobytes())
            else:
                fh.write(b"s")
                _write_strings(fh, [str(x) for x in arr])
    stats = dataset_stats(d).to_dict() if len(d) else {}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(stats, indent=2, sort_keys=True))


def load_cache(path) -> Dataset:
    with open(path, "rb") as fh:
        buf = fh.read()
    if len(buf) < _HEADER.size:
        raise DataError(f"{path}: truncated cache header")
    magic, version, n, n_acc, n_extra = _HEADER.unpack_from(buf, 0)
    if magic != CACHE_MAGIC:
        raise DataError(f"{path}: not a dataset cache (magic {magic!r})")
    if version != CACHE_VERSION:
        raise DataError(f"{path}: cache version {version}, expected {CACHE_VERSION}")
    pos = _HEADER.size
    cols = []
    for dt in ("<i8", "<i8", "<i8", "<i8", "<f8", "<i1"):
        size = np.dtype(dt).itemsize * n
        cols.append(np.frombuffer(buf, dtype=dt, count=n, offset=pos).copy())
        pos += size
    accounts, pos = _read_strings(buf, pos, n_acc)
    extras = {}
    for _ in range(n_extra):
        (name,), pos = _read_strings(buf, pos, 1)
        kind = buf[pos:pos + 1]
        pos += 1
        if kind == b"f":
            extras[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).copy()
            pos += 8 * n
        else:
            vals, pos = _read_strings(buf, pos, n)
            extras[name] = np.array(vals, dtype=str)
    return Dataset(*cols, accounts, extras)


def _write_strings(fh, items: list[str]) -> None:
    enc = [s.encode("utf-8") for s in items]
    fh.write(np.array([len(e) for e in enc], dtype="<u4").tobytes())
    fh.write(b"".join(enc))


def _read_strings(buf: bytes, pos: int, count: int) -> tuple[list[str], int]:
    lens = np.frombuffer(buf, dtype="<u4", count=count, offset=pos)
    pos += 4 * count
    out = []
    for ln in lens.tolist():
        out.append(buf[pos:pos + ln].decode("utf-8"))
        pos += ln
    return out, pos


# ---------------------------------------------------------------------------
# Splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    mode: str = "transaction_temporal"
    fractions: tuple[float, float] = (0.6, 0.2)

    def __post_init__(self):
        if self.mode not in ("transaction_temporal", "account_temporal"):
            raise DataError(f"unknown split mode {self.mode!r}")
        tr, va = self.fractions
        if not (0 < tr < 1 and 0 < va < 1 and tr + va < 1):
            raise DataError(f"invalid split fractions {self.fractions}")


def _cuts(count: int, fractions: tuple[float, float]) -> tuple[int, int]:
    tr, va = fractions
    # float products like 0.6*10 can land a hair below the integer
    a = math.floor(tr * count + 1e-9)
    b = math.floor((tr + va) * count + 1e-9)
    return a, b


def temporal_split(d: Dataset, spec: SplitSpec | None = None):
    """Index cut of the timestamp-sorted rows into (train, valid, test) positions."""
    spec = spec or SplitSpec()
    n = len(d)
    if n < 5:
        raise DataError(f"need at least 5 transactions to split, got {n}")
    if np.any(np.diff(d.timestamp) < 0):
        raise DataError("rows are not sorted by timestamp")
    a, b = _cuts(n, spec.fractions)
    idx = np.arange(n, dtype=np.int64)
    return idx[:a], idx[a:b], idx[b:]


def account_first_seen(d: Dataset) -> np.ndarray:
    first = np.full(d.n_accounts, np.iinfo(np.int64).max, dtype=np.int64)
    np.minimum.at(first, d.source, d.timestamp)
    np.minimum.at(first, d.target, d.timestamp)
    return first


def account_temporal_split(d: Dataset, spec: SplitSpec | None = None):
    """Split accounts by first-seen timestamp; returns three sorted id arrays."""
    spec = spec or SplitSpec("account_temporal", (0.65, 0.15))
    first = account_first_seen(d)
    seen = np.flatnonzero(first != np.iinfo(np.int64).max)
    if len(seen) < 5:
        raise DataError(f"need at least 5 accounts to split, got {len(seen)}")
    order = seen[np.lexsort((seen, first[seen]))]
    a, b = _cuts(len(order), spec.fractions)
    return np.sort(order[:a]), np.sort(order[a:b]), np.sort(order[b:])


def transaction_split_from_accounts(d: Dataset, train_acc, valid_acc, test_acc):
    """Assign each transaction to the latest split among its two endpoints."""
    rank = np.zeros(d.n_accounts, dtype=np.int8)
    rank[np.asarray(valid_acc, dtype=np.int64)] = 1
    rank[np.asarray(test_acc, dtype=np.int64)] = 2
    r = np.maximum(rank[d.source], rank[d.target])
    return np.flatnonzero(r == 0), np.flatnonzero(r == 1), np.flatnonzero(r == 2)


def split_rows(d: Dataset, spec: SplitSpec):
    """Row positions (train, valid, test) under either split mode."""
    if spec.mode == "transaction_temporal":
        return temporal_split(d, spec)
    return transaction_split_from_accounts(d, *account_temporal_split(d, spec))
