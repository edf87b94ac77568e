"""Patch-based learned point cloud geometry compression."""

from patchpcc.geometry import PointCloud
from patchpcc.metrics import MetricsReport, evaluate
from patchpcc.model import CodecModel
from patchpcc.pipeline import CodecSettings, compress, decompress, extended_settings, prepare

__version__ = "0.1.0"

__all__ = [
    "CodecModel", "CodecSettings", "MetricsReport", "PointCloud",
    "compress", "decompress", "evaluate", "extended_settings", "prepare",
]
