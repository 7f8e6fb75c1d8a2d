"""Streaming block-wise semantic mapping and assistive navigation engine."""

from .geometry import DepthMap, Intrinsics, PointCloud, RigidPose, backproject, compose, project
from .pipeline import Pipeline, RunReport, run
from .session import Block, FrameRecord, PipelineConfig, blockify, open_session

__version__ = "0.1.0"

__all__ = [
    "Block",
    "DepthMap",
    "FrameRecord",
    "Intrinsics",
    "Pipeline",
    "PipelineConfig",
    "PointCloud",
    "RigidPose",
    "RunReport",
    "backproject",
    "blockify",
    "compose",
    "open_session",
    "project",
    "run",
]
