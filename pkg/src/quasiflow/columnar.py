"""Named-column tables with CSV export and a little-endian binary format.

Binary layout: magic ``QFCT``, u32 version, u64 rows, u32 columns, then per
column a u32-length-prefixed UTF-8 name, a one-byte dtype code
(``i`` int64, ``f`` float64) and ``rows`` fixed-width values.
"""
from __future__ import annotations

import csv
import math
import struct
from pathlib import Path

import numpy as np

from .errors import DataError

MAGIC = b"QFCT"
VERSION = 1
_HEAD = struct.Struct("<4sIQI")


class Table:
    def __init__(self, columns: dict[str, np.ndarray]):
        lengths = {len(v) for v in columns.values()}
        if len(lengths) > 1:
            raise DataError(f"ragged columns: lengths {sorted(lengths)}")
        self.columns = {k: np.asarray(v) for k, v in columns.items()}

    def __len__(self) -> int:
        return len(next(iter(self.columns.values()))) if self.columns else 0

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    @property
    def names(self) -> list[str]:
        return list(self.columns)

    def equals(self, other: "Table", atol: float = 0.0) -> bool:
        if self.names != other.names:
            return False
        for k in self.names:
            a, b = self.columns[k], other.columns[k]
            if a.dtype.kind == "f":
                if not np.allclose(a, b, rtol=0, atol=atol, equal_nan=True):
                    return False
            elif not np.array_equal(a, b):
                return False
        return True

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.names)
            cols = [self.columns[k].tolist() for k in self.names]
            for row in zip(*cols):
                w.writerow(["" if isinstance(x, float) and math.isnan(x) else
                            (repr(x) if isinstance(x, float) else x) for x in row])

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(_HEAD.pack(MAGIC, VERSION, len(self), len(self.columns)))
            for name, arr in self.columns.items():
                enc = name.encode("utf-8")
                fh.write(struct.pack("<I", len(enc)) + enc)
                if arr.dtype.kind in "iub":
                    fh.write(b"i" + arr.astype("<i8").tobytes())
                elif arr.dtype.kind == "f":
                    fh.write(b"f" + arr.astype("<f8").tobytes())
                else:
                    raise DataError(f"column {name!r}: unsupported dtype {arr.dtype}")

    @classmethod
    def load(cls, path) -> "Table":
        buf = Path(path).read_bytes()
        magic, version, rows, ncols = _HEAD.unpack_from(buf, 0)
        if magic != MAGIC or version != VERSION:
            raise DataError(f"{path}: not a version-{VERSION} column table")
        pos = _HEAD.size
        cols = {}
        for _ in range(ncols):
            (ln,) = struct.unpack_from("<I", buf, pos)
            pos += 4
            name = buf[pos:pos + ln].decode("utf-8")
            pos += ln
            code = buf[pos:pos + 1]
            pos += 1
            dt = "<i8" if code == b"i" else "<f8"
            cols[name] = np.frombuffer(buf, dtype=dt, count=rows, offset=pos).astype(
                np.int64 if code == b"i" else np.float64)
            pos += 8 * rows
        return cls(cols)
