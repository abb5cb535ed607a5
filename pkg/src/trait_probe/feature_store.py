"""Binary `.fmx` interchange format for per-utterance feature matrices.

Format v1, little-endian. 64-byte fixed header:

    offset  size  field
    0       4     magic b"FMX1"
    4       2     u16 version (=1)
    6       1     u8 source (0=mfcc, 1=ssl)
    7       1     u8 model id (0..3, 255=none)
    8       2     i16 layer (-1 for mfcc)
    10      2     u16 utterance-id byte length
    12      4     u32 frames
    16      4     u32 dims
    20      44    zero padding

then the UTF-8 utterance id, then frames*dims float32 row-major.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    InvariantViolation,
    MissingFeature,
    NonFiniteValue,
    TruncatedPayload,
    VersionMismatch,
)
from .manifest import DatasetManifest, UtteranceEntry

MAGIC = b"FMX1"
VERSION = 1
HEADER_SIZE = 64
_HEADER_FMT = "<4sHBBhHII"  # 20 bytes before padding

SOURCE_MFCC = "mfcc"
SOURCE_SSL = "ssl"

MODEL_IDS = (
    "base-100h",
    "base-960h",
    "large-960h-lv60",
    "large-960h-lv60-self",
)
MODEL_NONE = "none"
_MODEL_CODE = {name: i for i, name in enumerate(MODEL_IDS)}
_MODEL_CODE[MODEL_NONE] = 255
_MODEL_NAME = {v: k for k, v in _MODEL_CODE.items()}

MFCC_DIMS = 26


@dataclass(frozen=True)
class ModelSpec:
    model_id: str
    n_layers: int
    dim: int
    params_m: int


# Wav2Vec2 variant inventory: base models expose 13 hidden layers (0-12) of
# 768 dims, large models 25 (0-24) of 1024 dims.
MODEL_SPECS = {
    "base-100h": ModelSpec("base-100h", 13, 768, 95),
    "base-960h": ModelSpec("base-960h", 13, 768, 95),
    "large-960h-lv60": ModelSpec("large-960h-lv60", 25, 1024, 317),
    "large-960h-lv60-self": ModelSpec("large-960h-lv60-self", 25, 1024, 317),
}


@dataclass
class FeatureMatrix:
    utterance_id: str
    source: str  # "mfcc" | "ssl"
    model_id: str  # one of MODEL_IDS or "none"
    layer: int  # 0-based; -1 for mfcc
    data: np.ndarray  # frames x dims, float32

    @property
    def frames(self) -> int:
        return self.data.shape[0]

    @property
    def dims(self) -> int:
        return self.data.shape[1]

    def validate(self) -> None:
        if self.data.ndim != 2:
            raise InvariantViolation("data must be a frames x dims matrix")
        if self.frames < 1:
            raise InvariantViolation("frames must be >= 1")
        if self.dims < 1:
            raise InvariantViolation("dims must be >= 1")
        if not np.isfinite(self.data).all():
            raise InvariantViolation(
                f"matrix for {self.utterance_id!r} contains non-finite values"
            )
        if self.source == SOURCE_MFCC:
            if self.dims != MFCC_DIMS:
                raise InvariantViolation(
                    f"mfcc features must have {MFCC_DIMS} dims, got {self.dims}"
                )
            if self.layer != -1:
                raise InvariantViolation("mfcc features must declare layer -1")
            if self.model_id != MODEL_NONE:
                raise InvariantViolation("mfcc features must declare model 'none'")
        elif self.source == SOURCE_SSL:
            if self.model_id in MODEL_SPECS:
                spec = MODEL_SPECS[self.model_id]
                if self.dims != spec.dim:
                    raise InvariantViolation(
                        f"{self.model_id} features must have {spec.dim} dims, "
                        f"got {self.dims}"
                    )
                if not 0 <= self.layer < spec.n_layers:
                    raise InvariantViolation(
                        f"{self.model_id} layer must be in [0, {spec.n_layers - 1}], "
                        f"got {self.layer}"
                    )
            elif self.model_id == MODEL_NONE:
                if self.layer < 0:
                    raise InvariantViolation("ssl layer must be >= 0")
            else:
                raise InvariantViolation(f"unknown model id {self.model_id!r}")
        else:
            raise InvariantViolation(f"unknown source {self.source!r}")


def feature_filename(utterance_id: str, source: str, model_id: str, layer: int) -> str:
    tag = "mfcc" if source == SOURCE_MFCC else model_id
    return f"{utterance_id}.{tag}.L{layer}.fmx"


def write_features(matrix: FeatureMatrix, directory) -> Path:
    """Serialize a validated matrix; returns the written path."""
    matrix.validate()
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    id_bytes = matrix.utterance_id.encode("utf-8")
    if len(id_bytes) > 0xFFFF:
        raise InvariantViolation("utterance id longer than 65535 bytes")
    header = struct.pack(
        _HEADER_FMT,
        MAGIC,
        VERSION,
        0 if matrix.source == SOURCE_MFCC else 1,
        _MODEL_CODE[matrix.model_id],
        matrix.layer,
        len(id_bytes),
        matrix.frames,
        matrix.dims,
    )
    header += b"\x00" * (HEADER_SIZE - len(header))
    payload = np.ascontiguousarray(matrix.data, dtype="<f4").tobytes()
    path = directory / feature_filename(
        matrix.utterance_id, matrix.source, matrix.model_id, matrix.layer
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(id_bytes)
        fh.write(payload)
    return path


def read_features(path) -> FeatureMatrix:
    """Exact inverse of write_features."""
    path = Path(path)
    blob = path.read_bytes()
    if len(blob) < HEADER_SIZE:
        raise TruncatedPayload(
            f"{path}: expected at least {HEADER_SIZE} header bytes, got {len(blob)}"
        )
    magic, version, source_code, model_code, layer, id_len, frames, dims = (
        struct.unpack_from(_HEADER_FMT, blob, 0)
    )
    if magic != MAGIC:
        raise BadMagic(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise VersionMismatch(f"{path}: unsupported version {version}")
    if model_code not in _MODEL_NAME:
        raise InvariantViolation(f"{path}: unknown model code {model_code}")
    expected = HEADER_SIZE + id_len + frames * dims * 4
    if len(blob) != expected:
        raise TruncatedPayload(
            f"{path}: expected {expected} bytes, got {len(blob)}"
        )
    utt_id = blob[HEADER_SIZE : HEADER_SIZE + id_len].decode("utf-8")
    data = np.frombuffer(blob, dtype="<f4", offset=HEADER_SIZE + id_len).reshape(
        frames, dims
    )
    if not np.isfinite(data).all():
        raise NonFiniteValue(f"{path}: payload contains non-finite values")
    matrix = FeatureMatrix(
        utterance_id=utt_id,
        source=SOURCE_MFCC if source_code == 0 else SOURCE_SSL,
        model_id=_MODEL_NAME[model_code],
        layer=layer,
        data=data.copy(),
    )
    matrix.validate()
    return matrix


@dataclass(frozen=True)
class FeatureHandle:
    utterance_id: str
    path: Path
    entry: UtteranceEntry

    def load(self) -> FeatureMatrix:
        return read_features(self.path)


def scan_store(
    directory,
    manifest: DatasetManifest,
    source: str,
    model_id: str = MODEL_NONE,
    layer: int = -1,
    split: str = "train",
) -> list[FeatureHandle]:
    """Resolve one feature file per manifest utterance of the given split.

    Extra files in the directory are ignored. Missing files raise
    MissingFeature listing every absent utterance id. Output is sorted
    byte-wise by utterance id (ids are ASCII by manifest validation).
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise MissingFeature(f"feature directory {directory} does not exist")
    handles = []
    missing = []
    for entry in sorted(manifest.split_entries(split), key=lambda e: e.utterance_id):
        name = feature_filename(entry.utterance_id, source, model_id, layer)
        path = directory / name
        if path.is_file():
            handles.append(
                FeatureHandle(utterance_id=entry.utterance_id, path=path, entry=entry)
            )
        else:
            missing.append(entry.utterance_id)
    if missing:
        raise MissingFeature(
            f"{len(missing)} utterance(s) have no stored feature file under "
            f"{directory}: {', '.join(missing[:10])}"
            + ("..." if len(missing) > 10 else ""),
            missing_ids=missing,
        )
    return handles
