"""Dataset inventory: speakers, utterances, splits, age/gender labels.

Manifest file format v1 (UTF-8 text, line oriented):

    trait-probe-manifest v1
    dataset=<name> age_min=<int> age_max=<int> speaker_disjoint=<0|1>
    <utt_id>\t<speaker_id>\t<audio_path>\t<age>\t<gender m|f>\t<split train|test>\t<duration_s>
    ...
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ParseError, ValidationError

HEADER_LINE = "trait-probe-manifest v1"

GENDERS = ("male", "female")
SPLITS = ("train", "test")

# utterance ids become feature file names; keep them filesystem-safe
_ID_RE = re.compile(r"^[A-Za-z0-9._-]+$")


@dataclass(frozen=True)
class UtteranceEntry:
    utterance_id: str
    speaker_id: str
    audio_path: str
    age_class: int
    gender: str  # "male" | "female"
    split: str  # "train" | "test"
    duration_s: float


@dataclass(frozen=True)
class TaskSpec:
    """A classification task over a manifest: ordered labels and their count."""

    task: str  # "age" | "gender"
    n_classes: int
    class_labels: tuple

    def label_index(self, entry: UtteranceEntry) -> int:
        if self.task == "age":
            return entry.age_class - self.class_labels[0]
        return GENDERS.index(entry.gender)


@dataclass
class DatasetManifest:
    dataset_name: str
    age_range: tuple[int, int]
    speaker_disjoint: bool
    entries: list[UtteranceEntry] = field(default_factory=list)

    def split_entries(self, split: str) -> list[UtteranceEntry]:
        return [e for e in self.entries if e.split == split]

    def validate(self) -> None:
        if not self.entries:
            raise ValidationError("manifest has zero utterances")
        if not self.dataset_name or any(c.isspace() for c in self.dataset_name):
            raise ValidationError(
                f"dataset name {self.dataset_name!r} must be nonempty and "
                "whitespace-free (the header line is space-delimited)"
            )
        lo, hi = self.age_range
        if lo > hi:
            raise ValidationError(f"age range {lo}-{hi} is inverted")
        seen: set[str] = set()
        speaker_splits: dict[str, set[str]] = {}
        for e in self.entries:
            if not _ID_RE.match(e.utterance_id):
                raise ValidationError(
                    f"utterance id {e.utterance_id!r} contains unsafe characters"
                )
            if e.utterance_id in seen:
                raise ValidationError(f"duplicate utterance id {e.utterance_id!r}")
            seen.add(e.utterance_id)
            if not lo <= e.age_class <= hi:
                raise ValidationError(
                    f"utterance {e.utterance_id!r}: age {e.age_class} outside "
                    f"range {lo}-{hi}"
                )
            if e.gender not in GENDERS:
                raise ValidationError(
                    f"utterance {e.utterance_id!r}: bad gender {e.gender!r}"
                )
            if e.split not in SPLITS:
                raise ValidationError(
                    f"utterance {e.utterance_id!r}: bad split {e.split!r}"
                )
            if e.duration_s < 0:
                raise ValidationError(
                    f"utterance {e.utterance_id!r}: negative duration"
                )
            speaker_splits.setdefault(e.speaker_id, set()).add(e.split)
        if self.speaker_disjoint:
            for spk, splits in sorted(speaker_splits.items()):
                if len(splits) > 1:
                    raise ValidationError(
                        f"speaker {spk!r} appears in both train and test but the "
                        "manifest declares speaker_disjoint=1"
                    )


@dataclass(frozen=True)
class SplitSummary:
    n_utterances: int
    n_male_speakers: int
    n_female_speakers: int
    total_duration_s: float


@dataclass(frozen=True)
class SummaryTable:
    train: SplitSummary
    test: SplitSummary


def make_task_spec(task: str, manifest: DatasetManifest) -> TaskSpec:
    """Build the label space for a task: consecutive years for age, m/f for gender."""
    if task == "age":
        lo, hi = manifest.age_range
        labels = tuple(range(lo, hi + 1))
        return TaskSpec(task="age", n_classes=len(labels), class_labels=labels)
    if task == "gender":
        return TaskSpec(task="gender", n_classes=2, class_labels=GENDERS)
    raise ValidationError(f"unknown task {task!r}")


def _parse_header_kv(line: str, lineno: int) -> dict[str, str]:
    out: dict[str, str] = {}
    for tok in line.split():
        if "=" not in tok:
            raise ParseError(f"line {lineno}: expected key=value, got {tok!r}")
        key, val = tok.split("=", 1)
        out[key] = val
    return out


def load_manifest(path) -> DatasetManifest:
    """Parse and validate a manifest file."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines or lines[0].strip() != HEADER_LINE:
        raise ParseError(f"{path}: missing '{HEADER_LINE}' header")
    if len(lines) < 2:
        raise ParseError(f"{path}: missing dataset header line")
    kv = _parse_header_kv(lines[1], 2)
    missing = {"dataset", "age_min", "age_max", "speaker_disjoint"} - set(kv)
    if missing:
        raise ParseError(f"{path}: header missing keys {sorted(missing)}")
    try:
        age_min = int(kv["age_min"])
        age_max = int(kv["age_max"])
        disjoint = int(kv["speaker_disjoint"])
    except ValueError as exc:
        raise ParseError(f"{path}: non-integer header field: {exc}") from exc
    if disjoint not in (0, 1):
        raise ParseError(f"{path}: speaker_disjoint must be 0 or 1")

    gender_names = {"m": "male", "f": "female"}
    entries = []
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 7:
            raise ParseError(
                f"{path}:{lineno}: expected 7 tab-separated fields, got {len(parts)}"
            )
        utt, spk, audio, age_s, gen, split, dur_s = parts
        if gen not in gender_names:
            raise ParseError(f"{path}:{lineno}: gender must be m or f, got {gen!r}")
        try:
            age = int(age_s)
            dur = float(dur_s)
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        entries.append(
            UtteranceEntry(
                utterance_id=utt,
                speaker_id=spk,
                audio_path=audio,
                age_class=age,
                gender=gender_names[gen],
                split=split,
                duration_s=dur,
            )
        )

    manifest = DatasetManifest(
        dataset_name=kv["dataset"],
        age_range=(age_min, age_max),
        speaker_disjoint=bool(disjoint),
        entries=entries,
    )
    manifest.validate()
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> Path:
    """Write a manifest; inverse of load_manifest for valid manifests."""
    manifest.validate()
    path = Path(path)
    lo, hi = manifest.age_range
    lines = [
        HEADER_LINE,
        f"dataset={manifest.dataset_name} age_min={lo} age_max={hi} "
        f"speaker_disjoint={int(manifest.speaker_disjoint)}",
    ]
    for e in manifest.entries:
        lines.append(
            "\t".join(
                (
                    e.utterance_id,
                    e.speaker_id,
                    e.audio_path,
                    str(e.age_class),
                    e.gender[0],
                    e.split,
                    repr(float(e.duration_s)),
                )
            )
        )
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def summarize(manifest: DatasetManifest) -> SummaryTable:
    """Per-split utterance counts, distinct speaker counts by gender, total duration."""

    def one(split: str) -> SplitSummary:
        entries = manifest.split_entries(split)
        male = {e.speaker_id for e in entries if e.gender == "male"}
        female = {e.speaker_id for e in entries if e.gender == "female"}
        return SplitSummary(
            n_utterances=len(entries),
            n_male_speakers=len(male),
            n_female_speakers=len(female),
            total_duration_s=float(sum(e.duration_s for e in entries)),
        )

    return SummaryTable(train=one("train"), test=one("test"))
