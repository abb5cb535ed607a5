"""Writer for the `.fmx` v1 feature interchange format.

Implements the published on-disk layout independently of the consumer
package: 64-byte little-endian header (magic "FMX1", u16 version, u8 source,
u8 model code, i16 layer, u16 id length, u32 frames, u32 dims, zero pad),
UTF-8 utterance id, then frames*dims float32 row-major.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"FMX1"
VERSION = 1
HEADER_SIZE = 64
SOURCE_SSL = 1

MODEL_CODES = {
    "base-100h": 0,
    "base-960h": 1,
    "large-960h-lv60": 2,
    "large-960h-lv60-self": 3,
}


def feature_filename(utterance_id: str, model_id: str, layer: int) -> str:
    return f"{utterance_id}.{model_id}.L{layer}.fmx"


def write_fmx(
    utterance_id: str, model_id: str, layer: int, data: np.ndarray, out_dir
) -> Path:
    """Serialize one frames x dims float32 matrix; returns the written path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(data, dtype="<f4")
    if data.ndim != 2 or data.shape[0] < 1:
        raise ValueError(f"need a nonempty frames x dims matrix, got {data.shape}")
    if not np.isfinite(data).all():
        raise ValueError(f"{utterance_id}: non-finite values in layer {layer}")
    id_bytes = utterance_id.encode("utf-8")
    header = struct.pack(
        "<4sHBBhHII",
        MAGIC,
        VERSION,
        SOURCE_SSL,
        MODEL_CODES[model_id],
        layer,
        len(id_bytes),
        data.shape[0],
        data.shape[1],
    )
    header += b"\x00" * (HEADER_SIZE - len(header))
    path = out_dir / feature_filename(utterance_id, model_id, layer)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(id_bytes)
        fh.write(data.tobytes())
    return path
