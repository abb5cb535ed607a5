"""Layer-wise probing toolbench for age/gender classification from speech."""

__version__ = "0.1.0"
