"""Minimal reader for the `trait-probe-manifest v1` text format.

Parses just enough to resolve audio: header line, dataset line, then
tab-separated records of (utterance_id, speaker_id, audio_path, age,
gender, split, duration). Zero records is fine here; the extractor only
consumes manifests, it does not certify them.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

HEADER_LINE = "trait-probe-manifest v1"


@dataclass(frozen=True)
class ManifestRecord:
    utterance_id: str
    speaker_id: str
    audio_path: str
    age: int
    gender: str
    split: str
    duration_s: float


def read_manifest(path) -> list[ManifestRecord]:
    path = Path(path)
    lines = path.read_text(encoding="utf-8").splitlines()
    if not lines or lines[0].strip() != HEADER_LINE:
        raise ValueError(f"{path}: missing '{HEADER_LINE}' header")
    if len(lines) < 2 or "dataset=" not in lines[1]:
        raise ValueError(f"{path}: missing dataset header line")
    records = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 7:
            raise ValueError(f"{path}:{lineno}: expected 7 fields, got {len(parts)}")
        utt, spk, audio, age, gender, split, dur = parts
        records.append(
            ManifestRecord(
                utterance_id=utt,
                speaker_id=spk,
                audio_path=audio,
                age=int(age),
                gender=gender,
                split=split,
                duration_s=float(dur),
            )
        )
    return records
