"""Frame trace files.

Binary layout, little-endian::

    magic     8 bytes   b"CCTRACE1"
    header    4 x uint32: n_records, n_slots, dim, flags (bit 0: vectors present)
    frame_index  int64[n_records]
    client_id    int32[n_records]
    true_label   int32[n_records]
    vectors      float64[n_records, n_slots, dim]   (only if flag bit 0)

The CSV variant carries ``frame_index,client_id,true_label`` only.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import ValidationError

MAGIC = b"CCTRACE1"
HAS_VECTORS = 1


@dataclass
class Trace:
    frame_index: np.ndarray
    client_id: np.ndarray
    true_label: np.ndarray
    vectors: Optional[np.ndarray] = None

    def __len__(self):
        return self.frame_index.size

    def for_client(self, client_id) -> "Trace":
        m = self.client_id == client_id
        vec = self.vectors[m] if self.vectors is not None else None
        return Trace(self.frame_index[m], self.client_id[m], self.true_label[m], vec)

    @classmethod
    def concat(cls, parts):
        parts = list(parts)
        if not parts:
            return cls(np.zeros(0, np.int64), np.zeros(0, np.int32), np.zeros(0, np.int32))
        vecs = None
        if all(p.vectors is not None for p in parts):
            vecs = np.concatenate([p.vectors for p in parts])
        return cls(np.concatenate([p.frame_index for p in parts]).astype(np.int64),
                   np.concatenate([p.client_id for p in parts]).astype(np.int32),
                   np.concatenate([p.true_label for p in parts]).astype(np.int32), vecs)


def write_binary(trace: Trace, path):
    n = len(trace)
    flags = HAS_VECTORS if trace.vectors is not None else 0
    n_slots, dim = (trace.vectors.shape[1:] if trace.vectors is not None else (0, 0))
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<4I", n, n_slots, dim, flags))
        fh.write(np.asarray(trace.frame_index, dtype="<i8").tobytes())
        fh.write(np.asarray(trace.client_id, dtype="<i4").tobytes())
        fh.write(np.asarray(trace.true_label, dtype="<i4").tobytes())
        if flags & HAS_VECTORS:
            fh.write(np.ascontiguousarray(trace.vectors, dtype="<f8").tobytes())


def read_binary(path) -> Trace:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != MAGIC:
        raise ValidationError(f"{path}: not a trace file")
    n, n_slots, dim, flags = struct.unpack_from("<4I", data, 8)
    off = 24
    frame = np.frombuffer(data, "<i8", n, off).astype(np.int64)
    off += 8 * n
    client = np.frombuffer(data, "<i4", n, off).astype(np.int32)
    off += 4 * n
    label = np.frombuffer(data, "<i4", n, off).astype(np.int32)
    off += 4 * n
    vecs = None
    if flags & HAS_VECTORS:
        vecs = np.frombuffer(data, "<f8", n * n_slots * dim, off).reshape(n, n_slots, dim).copy()
    return Trace(frame, client, label, vecs)


def write_csv(trace: Trace, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["frame_index", "client_id", "true_label"])
        for row in zip(trace.frame_index.tolist(), trace.client_id.tolist(), trace.true_label.tolist()):
            w.writerow(row)


def read_csv(path) -> Trace:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return Trace(np.array([int(r["frame_index"]) for r in rows], dtype=np.int64),
                 np.array([int(r["client_id"]) for r in rows], dtype=np.int32),
                 np.array([int(r["true_label"]) for r in rows], dtype=np.int32))


def read_trace(path) -> Trace:
    return read_csv(path) if str(path).endswith(".csv") else read_binary(path)
