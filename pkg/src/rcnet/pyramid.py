"""Feature pyramids and their bit-exact binary container (FPZ1).

A pyramid is an ordered map level -> [batch, channels, H, W] tensor where
consecutive levels halve each spatial extent exactly. The FPZ1 container
is deliberately trivial to parse from any language:

    bytes 0..3   magic "FPZ1"
    bytes 4..7   little-endian u32: header length in bytes
    header       UTF-8 JSON: {"levels", "shapes", "dtype": "f64le",
                 "seed", "config"} (the last two may be null)
    blobs        per level, ascending, raw little-endian IEEE-754 doubles
                 in row-major order, exactly prod(shape) * 8 bytes each
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .tensor import Tensor

MAGIC = b"FPZ1"
DTYPE_TAG = "f64le"


class PyramidError(ValueError):
    """Pyramid shape invariants violated (levels, halving, batch)."""


class ContainerError(ValueError):
    """Base for FPZ1 container format errors."""


class BadMagicError(ContainerError):
    """File does not start with the FPZ1 magic."""


class HeaderError(ContainerError):
    """Header is missing, not valid JSON, or lacks required fields."""


class BlobLengthError(ContainerError):
    """Payload length disagrees with the shapes the header declares."""


class FeaturePyramid:
    """Ordered map of consecutive pyramid levels to 4-D tensors."""

    def __init__(self, tensors: dict[int, Tensor]):
        if not tensors:
            raise PyramidError("pyramid has no levels")
        levels = sorted(tensors)
        if levels != list(range(levels[0], levels[-1] + 1)):
            raise PyramidError(f"levels {levels} are not consecutive")
        batch = tensors[levels[0]].shape[0]
        for lo, hi in zip(levels, levels[1:]):
            a, b = tensors[lo], tensors[hi]
            if a.ndim != 4 or b.ndim != 4:
                raise PyramidError("pyramid tensors must be 4-D [batch, C, H, W]")
            if (a.shape[2], a.shape[3]) != (2 * b.shape[2], 2 * b.shape[3]):
                raise PyramidError(
                    f"level {hi} extent {b.shape[2:]} is not half of level {lo} {a.shape[2:]}"
                )
            if b.shape[0] != batch:
                raise PyramidError(f"level {hi} batch {b.shape[0]} != {batch}")
        self._tensors = {i: tensors[i] for i in levels}

    @property
    def levels(self) -> list[int]:
        return list(self._tensors)

    @property
    def batch(self) -> int:
        return next(iter(self._tensors.values())).shape[0]

    def __getitem__(self, level: int) -> Tensor:
        return self._tensors[level]

    def __contains__(self, level: int) -> bool:
        return level in self._tensors

    def items(self):
        return self._tensors.items()

    def with_level(self, level: int, tensor: Tensor) -> "FeaturePyramid":
        new = dict(self._tensors)
        new[level] = tensor
        return FeaturePyramid(new)

    def allclose(self, other: "FeaturePyramid", atol: float = 0.0) -> bool:
        if self.levels != other.levels:
            return False
        return all(
            np.allclose(self[i].data, other[i].data, rtol=0.0, atol=atol) for i in self.levels
        )

    def equal_bitwise(self, other: "FeaturePyramid") -> bool:
        if self.levels != other.levels:
            return False
        return all(np.array_equal(self[i].data, other[i].data) for i in self.levels)


# ---------------------------------------------------------------------------
# container


def pyramid_bytes(pyr: FeaturePyramid, seed=None, config: dict | None = None) -> bytes:
    header = {
        "levels": pyr.levels,
        "shapes": {str(i): list(pyr[i].shape) for i in pyr.levels},
        "dtype": DTYPE_TAG,
        "seed": seed,
        "config": config,
    }
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, len(head).to_bytes(4, "little"), head]
    for i in pyr.levels:
        parts.append(np.ascontiguousarray(pyr[i].data, dtype="<f8").tobytes())
    return b"".join(parts)


def save_pyramid(path: str, pyr: FeaturePyramid, seed=None, config: dict | None = None):
    with open(path, "wb") as fh:
        fh.write(pyramid_bytes(pyr, seed=seed, config=config))


def load_pyramid(path: str) -> FeaturePyramid:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise BadMagicError(f"{path}: expected magic {MAGIC!r}, got {blob[:4]!r}")
    if len(blob) < 8:
        raise HeaderError(f"{path}: file too short for a header length")
    head_len = int.from_bytes(blob[4:8], "little")
    head_end = 8 + head_len
    if len(blob) < head_end:
        raise HeaderError(f"{path}: declared header length {head_len} exceeds file size")
    try:
        header = json.loads(blob[8:head_end].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise HeaderError(f"{path}: malformed header: {err}") from err
    for key in ("levels", "shapes", "dtype"):
        if key not in header:
            raise HeaderError(f"{path}: header missing field {key!r}")
    if header["dtype"] != DTYPE_TAG:
        raise HeaderError(f"{path}: unsupported dtype tag {header['dtype']!r}")

    offset = head_end
    tensors = {}
    for level in header["levels"]:
        shape = header["shapes"].get(str(level))
        if shape is None:
            raise HeaderError(f"{path}: header has no shape for level {level}")
        count = int(np.prod(shape))
        nbytes = count * 8
        if offset + nbytes > len(blob):
            raise BlobLengthError(
                f"{path}: level {level} blob needs {nbytes} bytes, "
                f"{len(blob) - offset} remain"
            )
        data = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        tensors[int(level)] = Tensor(data.astype(np.float64, copy=True))
        offset += nbytes
    if offset != len(blob):
        raise BlobLengthError(f"{path}: {len(blob) - offset} trailing bytes after last blob")
    return FeaturePyramid(tensors)


def pyramid_digest(pyr: FeaturePyramid) -> str:
    """SHA-256 over the canonical serialized form (no seed/config echo)."""
    return hashlib.sha256(pyramid_bytes(pyr)).hexdigest()
