"""Entity-wise robust distractor masking on synthetic multi-frame scenes."""

__version__ = "0.1.0"
