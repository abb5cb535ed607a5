"""Wav2Vec2 layer-wise hidden-state extraction to .fmx files."""

__version__ = "0.1.0"
