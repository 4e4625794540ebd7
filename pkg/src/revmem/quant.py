"""Blockwise 8-bit state quantization on a dynamic-tree code.

A code byte decodes as: bit 7 is the sign; the run of zero bits descending
from bit 6 sets a decimal exponent ``10**-z``; the first 1 bit terminates the
run; the remaining ``f = 6 - z`` bits hold an unsigned integer ``i``; the
value is ``sign * 10**-z * (i + 1) / 2**f``. The two codes with an all-zero
tail (0x00, 0x80) decode to zero. This yields 256 values in [-1, 1] that are
dense both near zero (down to 1e-6) and near one (spacing 1/64).

Tensors are quantized block by block: each block of ``block_size`` elements
is normalized by its absolute maximum, every normalized element is mapped to
the nearest code value (binary search over the sorted decode table, ties
toward the smaller magnitude, then the smaller code byte), and the code plus
the per-block absmax are stored. Dequantization is the reverse lookup times
the absmax.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import QuantizationError, ShapeError

ZERO_CODE = 0x00


def decode_byte(code: int) -> float:
    """Decode a single code byte to its real value."""
    sign = -1.0 if code & 0x80 else 1.0
    tail = code & 0x7F
    if tail == 0:
        return 0.0
    z = 7 - tail.bit_length()  # leading zero bits before the indicator
    frac_bits = 6 - z
    i = tail - (1 << frac_bits)  # strip the indicator bit
    return sign * (10.0 ** -z) * (i + 1) / (1 << frac_bits)


@dataclass(frozen=True)
class DynamicTreeMap:
    """Decode table plus sorted companions for nearest-value search.

    ``values[code]`` is the decoded real value. ``sorted_values`` is the
    strictly increasing array of distinct decoded values and
    ``canonical_codes[k]`` the smallest code byte decoding to
    ``sorted_values[k]`` (several byte patterns share a value; the zero code
    collapses 0x00/0x80).
    """

    values: np.ndarray
    sorted_values: np.ndarray
    canonical_codes: np.ndarray

    def max_adjacent_gap(self) -> float:
        return float(np.diff(self.sorted_values).max())


def build_dynamic_tree_map() -> DynamicTreeMap:
    values = np.array([decode_byte(c) for c in range(256)], dtype=np.float64)
    order = np.argsort(values, kind="stable")
    sorted_all = values[order]
    uniq_vals = []
    uniq_codes = []
    for code, v in zip(order, sorted_all):
        if uniq_vals and v == uniq_vals[-1]:
            uniq_codes[-1] = min(uniq_codes[-1], int(code))
        else:
            uniq_vals.append(float(v))
            uniq_codes.append(int(code))
    return DynamicTreeMap(
        values=values,
        sorted_values=np.array(uniq_vals, dtype=np.float64),
        canonical_codes=np.array(uniq_codes, dtype=np.uint8),
    )


_DEFAULT_MAP: DynamicTreeMap | None = None


def default_map() -> DynamicTreeMap:
    global _DEFAULT_MAP
    if _DEFAULT_MAP is None:
        _DEFAULT_MAP = build_dynamic_tree_map()
    return _DEFAULT_MAP


@dataclass
class QuantizedState:
    """One quantized state tensor: codes, per-block absmax, block size, shape."""

    codes: np.ndarray  # uint8, flat
    absmax: np.ndarray  # float32, one per block
    block_size: int
    shape: tuple[int, ...]

    @property
    def n_elements(self) -> int:
        return int(self.codes.size)

    @property
    def n_blocks(self) -> int:
        return int(self.absmax.size)

    @property
    def nbytes(self) -> int:
        return self.n_elements + 4 * self.n_blocks

    def to_bytes(self) -> bytes:
        header = struct.pack("<QQQ", self.n_elements, self.block_size, self.n_blocks)
        return header + self.absmax.astype("<f4").tobytes() + self.codes.tobytes()


def state_from_bytes(raw: bytes, shape: tuple[int, ...] | None = None) -> QuantizedState:
    n, block_size, n_blocks = struct.unpack_from("<QQQ", raw, 0)
    off = 24
    absmax = np.frombuffer(raw, dtype="<f4", count=n_blocks, offset=off).copy()
    off += 4 * n_blocks
    codes = np.frombuffer(raw, dtype=np.uint8, count=n, offset=off).copy()
    if shape is not None and int(np.prod(shape)) != n:
        raise ShapeError(f"shape {shape} does not hold {n} elements")
    return QuantizedState(
        codes=codes,
        absmax=absmax.astype(np.float32),
        block_size=int(block_size),
        shape=shape if shape is not None else (int(n),),
    )


def nearest_codes(normalized: np.ndarray, qmap: DynamicTreeMap) -> np.ndarray:
    """Nearest-code lookup by binary search over the sorted decode table."""
    sv = qmap.sorted_values
    pos = np.searchsorted(sv, normalized)
    lo = np.clip(pos - 1, 0, sv.size - 1)
    hi = np.clip(pos, 0, sv.size - 1)
    dlo = np.abs(normalized - sv[lo])
    dhi = np.abs(sv[hi] - normalized)
    pick_hi = (dhi < dlo) | ((dhi == dlo) & (np.abs(sv[hi]) < np.abs(sv[lo])))
    idx = np.where(pick_hi, hi, lo)
    return qmap.canonical_codes[idx]


def nearest_codes_exhaustive(
    tensor: np.ndarray, qmap: DynamicTreeMap | None = None,
    block_size: int = 2048, chunk: int = 65536,
) -> np.ndarray:
    """Reference codes by brute-force scan over all 256 decode values.

    Recomputes the per-block normalization itself and, per element, picks the
    code minimizing (distance, |value|, code byte) lexicographically. Kept
    deliberately independent of the binary-search path in
    ``quantize_blockwise`` so the two can be checked against each other.
    """
    qmap = qmap or default_map()
    flat = np.asarray(tensor, dtype=np.float64).reshape(-1)
    if flat.size == 0:
        return np.zeros(0, np.uint8)
    offsets = _block_offsets(flat.size, block_size)
    # same normalization contract as the encoder: the float32 block scale
    absmax = np.maximum.reduceat(np.abs(flat), offsets).astype(np.float32)
    lengths = np.diff(np.append(offsets, flat.size))
    scale = np.repeat(absmax.astype(np.float64), lengths)

    values = qmap.values  # indexed by code byte
    mags = np.abs(values)
    out = np.full(flat.size, ZERO_CODE, dtype=np.uint8)
    live_idx = np.flatnonzero(scale > 0)
    normalized = flat[live_idx] / scale[live_idx]
    for start in range(0, normalized.size, chunk):
        v = normalized[start : start + chunk]
        dist = np.abs(v[:, None] - values[None, :])
        best = dist.min(axis=1, keepdims=True)
        tied = dist == best
        mag = np.where(tied, mags[None, :], np.inf)
        tied &= mag == mag.min(axis=1, keepdims=True)
        out[live_idx[start : start + chunk]] = tied.argmax(axis=1)  # first hit: lowest byte
    return out


def _block_offsets(n: int, block_size: int) -> np.ndarray:
    return np.arange(0, n, block_size)


def quantize_blockwise(
    tensor: np.ndarray, qmap: DynamicTreeMap | None = None, block_size: int = 2048
) -> QuantizedState:
    """Quantize a tensor to 8-bit codes plus per-block absmax scalars.

    Blocks are taken over the row-major flattened tensor; the last block may
    be ragged. An all-zero block stores absmax 0 and the zero code.
    """
    if block_size < 1 or int(block_size) != block_size:
        raise QuantizationError(f"block size must be a positive integer, got {block_size}")
    qmap = qmap or default_map()
    flat = np.asarray(tensor, dtype=np.float64).reshape(-1)
    if flat.size == 0:
        return QuantizedState(
            codes=np.zeros(0, np.uint8),
            absmax=np.zeros(0, np.float32),
            block_size=int(block_size),
            shape=tuple(np.asarray(tensor).shape),
        )
    if not np.all(np.isfinite(flat)):
        raise QuantizationError("cannot quantize non-finite elements")

    offsets = _block_offsets(flat.size, block_size)
    # normalization is defined against the float32 scalar that will actually
    # be stored, so encode and decode see the same block scale exactly
    absmax = np.maximum.reduceat(np.abs(flat), offsets).astype(np.float32)
    lengths = np.diff(np.append(offsets, flat.size))
    per_elem_max = np.repeat(absmax.astype(np.float64), lengths)

    codes = np.full(flat.size, ZERO_CODE, dtype=np.uint8)
    live = per_elem_max > 0
    if np.any(live):
        normalized = flat[live] / per_elem_max[live]
        codes[live] = nearest_codes(normalized, qmap)
    return QuantizedState(
        codes=codes,
        absmax=absmax,
        block_size=int(block_size),
        shape=tuple(np.asarray(tensor).shape),
    )


def dequantize_blockwise(
    state: QuantizedState, qmap: DynamicTreeMap | None = None, dtype=np.float32
) -> np.ndarray:
    qmap = qmap or default_map()
    if state.n_elements == 0:
        return np.zeros(state.shape, dtype=dtype)
    lengths = np.diff(
        np.append(_block_offsets(state.n_elements, state.block_size), state.n_elements)
    )
    scale = np.repeat(state.absmax.astype(np.float64), lengths)
    flat = qmap.values[state.codes] * scale
    return flat.astype(dtype).reshape(state.shape)


def quantized_nbytes(n_elements: int, block_size: int) -> int:
    """Exact stored bytes for an n-element tensor: 1 byte/code + 4 bytes/block absmax."""
    n_blocks = -(-n_elements // block_size)
    return n_elements + 4 * n_blocks
