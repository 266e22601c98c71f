"""Dense depth estimation from asynchronous LiDAR scans and event streams.

A recurrent encoder-decoder predicts two dense depth maps per event window,
before and after the events, from which a per-event depth change follows.
"""
from .estimator import ALEDRegressor, EventVolumeTransformer, LidarProjector, NearestNeighborDepth
from .network import ALEDNet, NetworkConfig, NetworkState
from .synthetic import SceneSpec, generate_sequence
from .trainer import TrainConfig, Trainer, predict_sequence
from .types import (
    CameraModel,
    DenseDepthGT,
    DepthPair,
    Event,
    EventVolume,
    EventWindow,
    PointCloud,
    SequenceRecord,
    SparseDepthImage,
    validate_sequence,
)

__version__ = "0.1.0"

__all__ = [
    "ALEDNet", "ALEDRegressor", "CameraModel", "DenseDepthGT", "DepthPair", "Event",
    "EventVolume", "EventVolumeTransformer", "EventWindow", "LidarProjector",
    "NearestNeighborDepth", "NetworkConfig", "NetworkState", "PointCloud", "SequenceRecord",
    "SceneSpec", "SparseDepthImage", "TrainConfig", "Trainer", "generate_sequence",
    "predict_sequence", "validate_sequence",
]
