"""depthkit: depth-map encodings, RGB-D detector architecture graphs, and
detection evaluation tools."""
from __future__ import annotations

from .encoding import (
    CameraIntrinsics,
    ChannelStats,
    DepthMap,
    GrayscaleDepth,
    HdhaImage,
    JetDepth,
    compute_channel_stats,
    grayscale_encode,
    jet_encode,
    jet_table,
    load_depth,
    normalize_encoding,
    quantize_u8,
)
from .geometry import (
    GravityEstimate,
    PointCloud,
    depth_to_pointcloud,
    estimate_gravity,
    hdha_encode,
    surface_normals,
)
from .netpbm import ParseError

__version__ = "0.1.0"

__all__ = [
    "CameraIntrinsics",
    "ChannelStats",
    "DepthMap",
    "GravityEstimate",
    "GrayscaleDepth",
    "HdhaImage",
    "JetDepth",
    "ParseError",
    "PointCloud",
    "compute_channel_stats",
    "depth_to_pointcloud",
    "estimate_gravity",
    "grayscale_encode",
    "hdha_encode",
    "jet_encode",
    "jet_table",
    "load_depth",
    "normalize_encoding",
    "quantize_u8",
    "surface_normals",
    "__version__",
]
