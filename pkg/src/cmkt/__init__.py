"""Cross-modality knowledge transfer for paired image/audio defect detection."""

__version__ = "0.1.0"
