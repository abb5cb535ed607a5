import subprocess
import sys
import wave

import numpy as np
import pytest
import torch
from transformers import Wav2Vec2Config, Wav2Vec2Model

from trait_probe_extractor.extract import (
    AudioDecodeError,
    ExtractionJob,
    extract,
    load_wav_16k_mono,
)
from trait_probe_extractor.fmx import HEADER_SIZE, write_fmx


def tiny_wav2vec2(hidden_size, num_layers, heads):
    """Randomly initialized model with the published layer/dim geometry but a
    slim transformer, so tests run offline and fast."""
    config = Wav2Vec2Config(
        hidden_size=hidden_size,
        num_hidden_layers=num_layers,
        num_attention_heads=heads,
        intermediate_size=2 * hidden_size // heads,
        conv_dim=(32, 32, 32, 32, 32, 32, 32),
        num_conv_pos_embeddings=16,
        num_conv_pos_embedding_groups=4,
    )
    torch.manual_seed(0)
    return Wav2Vec2Model(config).eval()


def base_loader(model_id, device):
    return tiny_wav2vec2(768, 12, 8)


def large_loader(model_id, device):
    return tiny_wav2vec2(1024, 24, 16)


def write_clip(path, seconds=1.0, rate=16000, seed=0):
    rng = np.random.default_rng(seed)
    t = np.arange(int(seconds * rate)) / rate
    x = 0.4 * np.sin(2 * np.pi * 220 * t) + 0.05 * rng.standard_normal(len(t))
    pcm = np.clip(np.round(x * 32767), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(rate)
        fh.writeframes(pcm.tobytes())
    return path


def write_manifest(root, entries):
    lines = [
        "trait-probe-manifest v1",
        "dataset=cliptest age_min=4 age_max=14 speaker_disjoint=1",
    ]
    for utt, audio, split in entries:
        lines.append(f"{utt}\tspk_{utt}\t{audio}\t7\tm\t{split}\t1.0")
    path = root / "manifest.txt"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


@pytest.fixture()
def one_second_corpus(tmp_path):
    (tmp_path / "audio").mkdir()
    write_clip(tmp_path / "audio" / "clip0.wav", seed=1)
    manifest = write_manifest(tmp_path, [("clip0", "audio/clip0.wav", "train")])
    return tmp_path, manifest


def fmx_header(path):
    import struct

    blob = path.read_bytes()
    return struct.unpack_from("<4sHBBhHII", blob, 0), blob


def test_base_model_13_files_768(one_second_corpus):
    root, manifest = one_second_corpus
    job = ExtractionJob(manifest_path=manifest, model_id="base-100h",
                        out_dir=root / "features")
    result = extract(job, load_model=base_loader)
    files = sorted((root / "features").glob("*.fmx"))
    assert result.files_written == 13
    assert len(files) == 13
    frame_counts = set()
    for layer in range(13):
        path = root / "features" / f"clip0.base-100h.L{layer}.fmx"
        (magic, version, source, model, hdr_layer, id_len, frames, dims), blob = (
            fmx_header(path)
        )
        assert magic == b"FMX1" and version == 1 and source == 1
        assert model == 0 and hdr_layer == layer
        assert dims == 768
        assert len(blob) == HEADER_SIZE + id_len + frames * dims * 4
        frame_counts.add(frames)
    assert len(frame_counts) == 1  # equal frame counts across layers
    assert frame_counts.pop() == 49  # 20 ms stride over 1 s, pinned from the model


def test_large_model_25_files_1024(one_second_corpus):
    root, manifest = one_second_corpus
    job = ExtractionJob(manifest_path=manifest, model_id="large-960h-lv60",
                        out_dir=root / "features")
    result = extract(job, load_model=large_loader)
    assert result.files_written == 25
    files = sorted((root / "features").glob("*.fmx"))
    assert len(files) == 25
    for path in files:
        (_, _, _, model, _, _, frames, dims), _ = fmx_header(path)
        assert model == 2
        assert dims == 1024
        assert frames == 49


def test_empty_manifest_is_success(tmp_path):
    manifest = write_manifest(tmp_path, [])
    job = ExtractionJob(manifest_path=manifest, model_id="base-100h",
                        out_dir=tmp_path / "features")
    result = extract(job, load_model=base_loader)
    assert result.files_written == 0
    assert result.skipped == []


def test_rerun_is_bit_identical(one_second_corpus):
    root, manifest = one_second_corpus
    job = ExtractionJob(manifest_path=manifest, model_id="base-100h",
                        out_dir=root / "features")
    model = base_loader("base-100h", "cpu")
    extract(job, load_model=lambda *_: model)
    first = {
        p.name: p.read_bytes() for p in (root / "features").glob("*.fmx")
    }
    extract(job, load_model=lambda *_: model)
    second = {
        p.name: p.read_bytes() for p in (root / "features").glob("*.fmx")
    }
    assert first == second


def test_bad_audio_skipped_and_reported(tmp_path):
    (tmp_path / "audio").mkdir()
    write_clip(tmp_path / "audio" / "good.wav", seed=2)
    write_clip(tmp_path / "audio" / "slow.wav", rate=8000, seed=3)
    (tmp_path / "audio" / "junk.wav").write_bytes(b"not audio at all")
    manifest = write_manifest(
        tmp_path,
        [
            ("good", "audio/good.wav", "train"),
            ("slow", "audio/slow.wav", "train"),
            ("junk", "audio/junk.wav", "train"),
            ("gone", "audio/gone.wav", "train"),
        ],
    )
    job = ExtractionJob(manifest_path=manifest, model_id="base-100h",
                        out_dir=tmp_path / "features")
    result = extract(job, load_model=base_loader)
    assert result.utterances_done == 1
    assert result.files_written == 13
    assert sorted(u for u, _ in result.skipped) == ["gone", "junk", "slow"]


def test_chunking_concatenates_frames(tmp_path):
    (tmp_path / "audio").mkdir()
    write_clip(tmp_path / "audio" / "long.wav", seconds=2.5, seed=4)
    manifest = write_manifest(tmp_path, [("long", "audio/long.wav", "train")])
    job = ExtractionJob(manifest_path=manifest, model_id="base-100h",
                        out_dir=tmp_path / "features", chunk_seconds=1.0)
    result = extract(job, load_model=base_loader)
    assert result.files_written == 13
    (_, _, _, _, _, _, frames, _), _ = fmx_header(
        tmp_path / "features" / "long.base-100h.L0.fmx"
    )
    assert frames == 49 + 49 + 24  # two full 1 s chunks plus the 0.5 s tail


def test_strict_audio_reader(tmp_path):
    stereoish = tmp_path / "bad.wav"
    with wave.open(str(stereoish), "wb") as fh:
        fh.setnchannels(2)
        fh.setsampwidth(2)
        fh.setframerate(16000)
        fh.writeframes(b"\x00\x00" * 64)
    with pytest.raises(AudioDecodeError, match="mono"):
        load_wav_16k_mono(stereoish)


def test_primary_pipeline_consumes_output(one_second_corpus):
    root, manifest = one_second_corpus
    job = ExtractionJob(manifest_path=manifest, model_id="base-100h",
                        out_dir=root / "features")
    extract(job, load_model=base_loader)
    proc = subprocess.run(
        [
            sys.executable, "-m", "trait_probe.cli", "validate",
            "--manifest", str(manifest),
            "--features", str(root / "features"),
            "--models", "base-100h",
        ],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, proc.stderr
    assert "feature store ok: 13 files validated" in proc.stderr


def test_writer_rejects_bad_matrices(tmp_path):
    with pytest.raises(ValueError):
        write_fmx("u", "base-100h", 0, np.zeros((0, 4), dtype=np.float32), tmp_path)
    with pytest.raises(ValueError):
        bad = np.zeros((3, 4), dtype=np.float32)
        bad[1, 1] = np.nan
        write_fmx("u", "base-100h", 0, bad, tmp_path)
