"""curlearn: quality-aware curriculum training for ordinal image
classification under label noise, with a synthetic desk-scale benchmark."""

__version__ = "0.1.0"
