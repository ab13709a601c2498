"""Serialization of weight updates and compression-ratio accounting.

Update records use the little-endian ``ANTW`` format: magic, version u16,
kind u8 (0 base, 1 full delta, 2 low-rank pair), timestep u64, architecture
descriptor (in_dim, out_dim, hidden_dim, n_layers, ffm_dim as u32), rank u32
(0 unless low-rank), then the raw float32 payload. Payload order for full
records is FFM matrix, then per hidden layer (ln_gain, ln_bias, weight,
bias), then head weight and bias; low-rank records hold (down, up) per
adapted layer. Weight payloads are stored as raw float32 without entropy
coding, so stored size equals parameter memory.

Reported compression combines the spatial ratio SC (raw snapshot bytes over
mean stored bytes per update) with temporal retention TR into a total ratio.
Two totals are emitted because trajectory accounting is ambiguous once a
shared base model exists: ``tc_naive`` counts every stored byte, while
``tc_amortized`` treats the base model as a one-time cost and counts only the
per-snapshot deltas.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .grid import Snapshot
from .metrics import rel_l2
from .neural_field import (
    LayerParams,
    LoraAdapter,
    NeuralFieldParams,
    NfArchitecture,
)

UPDATE_MAGIC = b"ANTW"
UPDATE_VERSION = 1

# magic, version u16, kind u8, timestep u64, 5 arch dims u32, rank u32
_UPDATE_HEADER = struct.Struct("<4sHBQ6I")


class UpdateFormatError(ValueError):
    """Raised on malformed update bytes."""


class UpdateKind(IntEnum):
    BASE_FULL = 0
    FULL_DELTA = 1
    LORA_PAIR = 2


@dataclass(frozen=True)
class CompressedUpdate:
    """One stored weight update: the serialized bytes plus its accounting."""

    kind: UpdateKind
    timestep_index: int
    payload: bytes
    param_count: int

    @property
    def stored_bytes(self) -> int:
        return len(self.payload)


@dataclass(frozen=True)
class CompressionReport:
    """Spatial / temporal / total compression ratios for one run."""

    raw_bytes_per_snapshot: int
    mean_stored_bytes: float
    sc: float  # raw bytes over mean stored bytes per update
    tr: float  # retained / total snapshots
    tc_naive: float  # raw_total / stored_total, exact byte arithmetic
    tc_amortized: float  # raw_total / delta bytes, base stored once
    raw_total_bytes: int
    stored_total_bytes: int
    stored_delta_bytes: int


def _pack_arrays(arrays: list[np.ndarray]) -> bytes:
    chunks = []
    for a in arrays:
        if not np.all(np.isfinite(a)):
            raise ValueError("refusing to serialize non-finite values")
        chunks.append(np.ascontiguousarray(a, dtype="<f4").tobytes())
    return b"".join(chunks)


def serialize_update(
    update: NeuralFieldParams | LoraAdapter,
    kind: UpdateKind,
    timestep_index: int,
) -> CompressedUpdate:
    """Serialize base weights, a full delta, or an adapter into one record."""
    kind = UpdateKind(kind)
    if kind is UpdateKind.LORA_PAIR:
        if not isinstance(update, LoraAdapter):
            raise TypeError("LORA_PAIR expects a LoraAdapter")
        arch, rank = update.arch, update.rank
    else:
        if not isinstance(update, NeuralFieldParams):
            raise TypeError(f"{kind.name} expects NeuralFieldParams")
        arch, rank = update.arch, 0
    header = _UPDATE_HEADER.pack(
        UPDATE_MAGIC,
        UPDATE_VERSION,
        int(kind),
        int(timestep_index),
        arch.in_dim,
        arch.out_dim,
        arch.hidden_dim,
        arch.n_layers,
        arch.ffm_dim,
        rank,
    )
    body = _pack_arrays(update.flat_arrays())
    return CompressedUpdate(
        kind=kind,
        timestep_index=int(timestep_index),
        payload=header + body,
        param_count=update.param_count(),
    )


def _unpack_arrays(buf: bytes, shapes: list[tuple[int, ...]]) -> list[np.ndarray]:
    arrays = []
    offset = 0
    for shape in shapes:
        size = int(np.prod(shape))
        end = offset + 4 * size
        if end > len(buf):
            raise UpdateFormatError("truncated update payload")
        arrays.append(np.frombuffer(buf[offset:end], dtype="<f4").reshape(shape))
        offset = end
    if offset != len(buf):
        raise UpdateFormatError("trailing bytes after update payload")
    return arrays


def deserialize_update(
    data: bytes,
) -> tuple[UpdateKind, int, NeuralFieldParams | LoraAdapter]:
    """Parse one update record back into its kind, timestep, and contents."""
    if len(data) < _UPDATE_HEADER.size:
        raise UpdateFormatError("update record too short")
    magic, version, kind_raw, timestep, in_dim, out_dim, hidden, n_layers, ffm_dim, rank = (
        _UPDATE_HEADER.unpack_from(data)
    )
    if magic != UPDATE_MAGIC:
        raise UpdateFormatError(f"bad update magic {magic!r}")
    if version != UPDATE_VERSION:
        raise UpdateFormatError(f"unsupported update version {version}")
    kind = UpdateKind(kind_raw)
    # ffm_frequency only matters at init time; a placeholder keeps the
    # descriptor compact. Deserialized weights are complete without it.
    arch = NfArchitecture(
        hidden_dim=hidden,
        n_layers=n_layers,
        ffm_dim=ffm_dim,
        in_dim=in_dim,
        out_dim=out_dim,
    )
    body = data[_UPDATE_HEADER.size :]
    if kind is UpdateKind.LORA_PAIR:
        shapes: list[tuple[int, ...]] = []
        for n, k in arch.hidden_shapes():
            shapes.extend([(rank, k), (n, rank)])
        arrays = _unpack_arrays(body, shapes)
        adapter = LoraAdapter(
            arch=arch,
            rank=rank,
            down=[arrays[2 * i] for i in range(arch.n_layers)],
            up=[arrays[2 * i + 1] for i in range(arch.n_layers)],
        )
        return kind, timestep, adapter
    shapes = [(ffm_dim // 2, in_dim)]
    for n, k in arch.hidden_shapes():
        shapes.extend([(k,), (k,), (n, k), (n,)])
    shapes.extend([(out_dim, hidden), (out_dim,)])
    arrays = _unpack_arrays(body, shapes)
    layers = []
    pos = 1
    for _ in range(arch.n_layers):
        layers.append(
            LayerParams(
                ln_gain=arrays[pos],
                ln_bias=arrays[pos + 1],
                weight=arrays[pos + 2],
                bias=arrays[pos + 3],
            )
        )
        pos += 4
    params = NeuralFieldParams(
        arch=arch,
        ffm=arrays[0],
        layers=layers,
        head_weight=arrays[pos],
        head_bias=arrays[pos + 1],
    )
    return kind, timestep, params


def compression_report(
    raw_snapshot_bytes: int,
    updates: list[CompressedUpdate],
    total_snapshots: int,
    retained: int,
) -> CompressionReport:
    """Assemble the SC / TR / TC accounting for one compressed trajectory."""
    if not updates:
        raise ValueError("compression_report needs at least one update")
    if retained > total_snapshots:
        raise ValueError("retained cannot exceed total_snapshots")
    stored = [u.stored_bytes for u in updates]
    if any(s == 0 for s in stored):
        raise ValueError("update with zero stored bytes")
    stored_total = sum(stored)
    raw_total = raw_snapshot_bytes * total_snapshots
    mean_stored = stored_total / len(stored)
    base_bytes = sum(s for u, s in zip(updates, stored) if u.kind is UpdateKind.BASE_FULL)
    delta_bytes = stored_total - base_bytes
    return CompressionReport(
        raw_bytes_per_snapshot=raw_snapshot_bytes,
        mean_stored_bytes=mean_stored,
        sc=raw_snapshot_bytes / mean_stored,
        tr=retained / total_snapshots,
        tc_naive=raw_total / stored_total,
        tc_amortized=raw_total / delta_bytes if delta_bytes > 0 else raw_total / stored_total,
        raw_total_bytes=raw_total,
        stored_total_bytes=stored_total,
        stored_delta_bytes=delta_bytes,
    )


def baseline_quantize_deflate(s: Snapshot, mantissa_bits: int) -> tuple[bytes, float]:
    """Classical stand-in compressor: mantissa truncation plus deflate.

    Keeps the top ``mantissa_bits`` of each float32 mantissa (23 keeps all,
    i.e. lossless), zeroes the rest, then compresses the raw bytes with zlib
    level 9. Returns the compressed bytes and the reconstruction rel-l2.
    """
    if not (1 <= mantissa_bits <= 23):
        raise ValueError("mantissa_bits must lie in [1, 23]")
    raw = np.ascontiguousarray(s.values, dtype="<f4")
    mask = np.uint32(0xFFFFFFFF << (23 - mantissa_bits) & 0xFFFFFFFF)
    bits = raw.copy().view(np.uint32)
    bits &= mask
    quantized = bits.view("<f4")
    compressed = zlib.compress(bits.tobytes(), level=9)
    return compressed, rel_l2(quantized, raw)
