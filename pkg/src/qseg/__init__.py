"""Integer-grid quantized training and inference for toy segmentation networks."""

__version__ = "0.1.0"
