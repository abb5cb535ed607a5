"""Layer-wise Wav2Vec2 hidden-state extraction into `.fmx` files.

For each manifest utterance the model runs frozen (eval mode, no gradients)
with hidden states enabled; hidden state 0 is the convolutional encoder
output, followed by one state per transformer layer. Every state is written
as its own `.fmx` file, so base models yield 13 files per utterance
(768-dim) and large models 25 (1024-dim). Long audio is chunked at 30 s
with no overlap and frames are concatenated in chunk order.

Utterances whose audio cannot be decoded are skipped and reported; the job
keeps going.
"""

from __future__ import annotations

import logging
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .fmx import MODEL_CODES, write_fmx
from .manifest import read_manifest

log = logging.getLogger("trait_probe_extractor")

SAMPLE_RATE = 16000

MODEL_CHECKPOINTS = {
    "base-100h": "facebook/wav2vec2-base-100h",
    "base-960h": "facebook/wav2vec2-base-960h",
    "large-960h-lv60": "facebook/wav2vec2-large-960h-lv60",
    "large-960h-lv60-self": "facebook/wav2vec2-large-960h-lv60-self",
}

# hidden-state count (conv output + transformer layers) and feature dim
MODEL_GEOMETRY = {
    "base-100h": (13, 768),
    "base-960h": (13, 768),
    "large-960h-lv60": (25, 1024),
    "large-960h-lv60-self": (25, 1024),
}


class ModelLoadError(Exception):
    pass


class AudioDecodeError(Exception):
    pass


@dataclass
class ExtractionJob:
    manifest_path: Path
    model_id: str
    out_dir: Path
    device: str = "cpu"
    batch_size: int = 1
    chunk_seconds: float = 30.0

    def validate(self) -> None:
        if self.model_id not in MODEL_CODES:
            raise ModelLoadError(
                f"unknown model {self.model_id!r}; expected one of "
                f"{sorted(MODEL_CODES)}"
            )
        if self.batch_size < 1 or self.chunk_seconds <= 0:
            raise ValueError("batch size and chunk length must be positive")


@dataclass
class ExtractionResult:
    files_written: int = 0
    utterances_done: int = 0
    skipped: list = field(default_factory=list)  # (utterance_id, reason)


def load_wav_16k_mono(path) -> np.ndarray:
    """Strict reader for the pipeline's audio convention: 16 kHz mono WAV."""
    path = Path(path)
    try:
        with wave.open(str(path), "rb") as fh:
            channels = fh.getnchannels()
            rate = fh.getframerate()
            width = fh.getsampwidth()
            frames = fh.readframes(fh.getnframes())
    except (OSError, wave.Error) as exc:
        raise AudioDecodeError(f"{path}: {exc}") from exc
    if rate != SAMPLE_RATE:
        raise AudioDecodeError(f"{path}: expected {SAMPLE_RATE} Hz, got {rate}")
    if channels != 1:
        raise AudioDecodeError(f"{path}: expected mono, got {channels} channels")
    if width == 2:
        samples = np.frombuffer(frames, dtype="<i2").astype(np.float32) / 32768.0
    elif width == 4:
        # stdlib wave reports width only; treat 32-bit payloads as float
        samples = np.frombuffer(frames, dtype="<f4").astype(np.float32)
    else:
        raise AudioDecodeError(f"{path}: unsupported sample width {width}")
    if len(samples) == 0:
        raise AudioDecodeError(f"{path}: empty audio")
    return samples


def default_model_loader(model_id: str, device: str):
    """Fetch the published frozen checkpoint (no fine-tuning)."""
    from transformers import Wav2Vec2Model

    try:
        model = Wav2Vec2Model.from_pretrained(MODEL_CHECKPOINTS[model_id])
    except Exception as exc:  # network/cache/load failures
        raise ModelLoadError(f"cannot load {model_id}: {exc}") from exc
    return model.to(device).eval()


def _normalize(chunk: np.ndarray) -> np.ndarray:
    # zero-mean unit-variance per input, the models' training-time convention
    std = chunk.std()
    return (chunk - chunk.mean()) / (std + 1e-7)


def _hidden_states_for(model, samples: np.ndarray, job: ExtractionJob):
    chunk_len = int(round(job.chunk_seconds * SAMPLE_RATE))
    chunks = [samples[i : i + chunk_len] for i in range(0, len(samples), chunk_len)]
    per_layer: list[list[np.ndarray]] = []
    with torch.no_grad():
        pos = 0
        while pos < len(chunks):
            group = [chunks[pos]]
            # batch only identical-length chunks: padding would perturb the
            # convolutional front end's statistics
            while (
                len(group) < job.batch_size
                and pos + len(group) < len(chunks)
                and len(chunks[pos + len(group)]) == len(group[0])
            ):
                group.append(chunks[pos + len(group)])
            batch = np.stack([_normalize(c) for c in group])
            tensor = torch.from_numpy(batch).to(job.device)
            output = model(input_values=tensor, output_hidden_states=True)
            states = output.hidden_states  # tuple of (B, T, D)
            if not per_layer:
                per_layer = [[] for _ in states]
            for layer, state in enumerate(states):
                arr = state.cpu().numpy().astype(np.float32)
                for row in arr:
                    per_layer[layer].append(row)
            pos += len(group)
    return [np.concatenate(rows, axis=0) for rows in per_layer]


def extract(job: ExtractionJob, load_model=default_model_loader) -> ExtractionResult:
    """Dump every hidden layer of every manifest utterance; returns counts."""
    job.validate()
    records = read_manifest(job.manifest_path)
    result = ExtractionResult()
    if not records:
        log.info("manifest has no records; nothing to do")
        return result

    model = load_model(job.model_id, job.device)
    expected_layers, expected_dim = MODEL_GEOMETRY[job.model_id]
    root = Path(job.manifest_path).parent

    for record in records:
        try:
            samples = load_wav_16k_mono(root / record.audio_path)
        except AudioDecodeError as exc:
            log.warning("skipping %s: %s", record.utterance_id, exc)
            result.skipped.append((record.utterance_id, str(exc)))
            continue
        states = _hidden_states_for(model, samples, job)
        if len(states) != expected_layers:
            raise ModelLoadError(
                f"{job.model_id} produced {len(states)} hidden states, "
                f"expected {expected_layers}"
            )
        frame_counts = {s.shape[0] for s in states}
        if len(frame_counts) != 1:
            raise ModelLoadError(
                f"{record.utterance_id}: unequal frame counts across layers "
                f"{sorted(frame_counts)}"
            )
        for layer, state in enumerate(states):
            if state.shape[1] != expected_dim:
                raise ModelLoadError(
                    f"{job.model_id} layer {layer} has dim {state.shape[1]}, "
                    f"expected {expected_dim}"
                )
            write_fmx(record.utterance_id, job.model_id, layer, state, job.out_dir)
            result.files_written += 1
        result.utterances_done += 1
    return result
