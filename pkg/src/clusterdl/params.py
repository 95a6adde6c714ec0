"""Flat parameter vectors with an explicit core/head boundary.

Every model in the simulator is a single contiguous float64 vector. The
first ``core_len`` entries are the core (the part every node shares and
averages with everyone), the rest is the head (the part that may be
specialized per cluster). Keeping the split explicit on the value itself
means protocol code never has to know what the parameters mean.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

_HEADER = struct.Struct("<QQ")  # (total_len, core_len) as little-endian uint64

#: Size in bytes of the serialization header.
HEADER_NBYTES = _HEADER.size


@dataclass(frozen=True)
class ParamVector:
    """A flat float64 parameter vector split into core and head.

    ``values[:core_len]`` is the core, ``values[core_len:]`` the head.
    Both parts must be non-empty.
    """

    values: np.ndarray
    core_len: int

    def __post_init__(self) -> None:
        values = np.ascontiguousarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", values)
        if values.ndim != 1:
            raise ValueError("parameter vector must be one-dimensional")
        if not 0 < self.core_len < values.size:
            raise ValueError(
                "core_len must split the vector into two non-empty parts, "
                f"got core_len={self.core_len} for length {values.size}"
            )

    def __len__(self) -> int:
        return int(self.values.size)

    @property
    def core(self) -> np.ndarray:
        return self.values[: self.core_len]

    @property
    def head(self) -> np.ndarray:
        return self.values[self.core_len :]

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.core_len)


def split(params: ParamVector) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(core, head)`` views of the vector."""
    return params.core, params.head


def assemble(core: np.ndarray, head: np.ndarray) -> ParamVector:
    """Concatenate a core and a head back into one ParamVector.

    Inverse of :func:`split`: ``assemble(*split(p))`` reproduces ``p``.
    """
    core = np.asarray(core, dtype=np.float64)
    head = np.asarray(head, dtype=np.float64)
    if core.ndim != 1 or head.ndim != 1:
        raise ValueError("core and head must be one-dimensional")
    return ParamVector(np.concatenate([core, head]), core.size)


def to_bytes(params: ParamVector) -> bytes:
    """Serialize to the wire format.

    Layout: 16-byte header of two little-endian uint64 (total length,
    core length) followed by the values as little-endian float64.
    """
    header = _HEADER.pack(len(params), params.core_len)
    return header + params.values.astype("<f8", copy=False).tobytes()


def from_bytes(buf: bytes) -> ParamVector:
    """Parse the wire format produced by :func:`to_bytes`."""
    if len(buf) < HEADER_NBYTES:
        raise ValueError(f"buffer too short for header: {len(buf)} bytes")
    total_len, core_len = _HEADER.unpack_from(buf)
    expected = HEADER_NBYTES + 8 * total_len
    if len(buf) != expected:
        raise ValueError(
            f"buffer length {len(buf)} does not match declared "
            f"{total_len} parameters (expected {expected} bytes)"
        )
    values = np.frombuffer(buf, dtype="<f8", offset=HEADER_NBYTES).astype(
        np.float64, copy=True
    )
    return ParamVector(values, int(core_len))


def serialized_nbytes(total_len: int) -> int:
    """Bytes needed to serialize a vector with ``total_len`` parameters."""
    return HEADER_NBYTES + 8 * int(total_len)
