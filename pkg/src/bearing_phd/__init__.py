"""Bearing-only sensor models, their calibration from labeled scans, and a particle PHD filter for multi-target search."""

from .models import (
    ClutterParams,
    DetectionParams,
    FieldOfView,
    MeasurementParams,
    MeasurementSet,
    Pose2D,
    SensorModel,
    TargetState,
)

__version__ = "0.1.0"

__all__ = [
    "ClutterParams",
    "DetectionParams",
    "FieldOfView",
    "MeasurementParams",
    "MeasurementSet",
    "Pose2D",
    "SensorModel",
    "TargetState",
]
