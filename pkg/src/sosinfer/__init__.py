"""Sample out-of-sample (SOS) profile inference with Wasserstein transport LPs."""

__version__ = "0.1.0"
