"""Encoder-decoder language style transfer with discrepancy-guided style
codes and cycle-consistent decoding, trained on non-parallel corpora."""

__version__ = "0.1.0"
