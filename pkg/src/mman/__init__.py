"""Multi-modality attention network (MMAN) for stock movement prediction."""

__version__ = "0.1.0"
