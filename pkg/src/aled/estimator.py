"""scikit-learn style wrappers around the representations, baseline and network."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .evaluation import GridIndex, nn_associate
from .representations import build_event_volume, lidar_input, project_lidar
from .trainer import TrainConfig, Trainer, predict_sequence
from .types import CameraModel, SparseDepthImage
from .validation import check_cloud, check_sequences, check_sparse, check_window


class EventVolumeTransformer(BaseEstimator, TransformerMixin):
    """Event windows -> stacked (n, 2*bins, H, W) volumes."""

    def __init__(self, bins=5, height=None, width=None):
        self.bins = bins
        self.height = height
        self.width = width

    def fit(self, X, y=None):
        if self.bins < 1:
            raise ValueError("bins must be >= 1")
        if self.height is None or self.width is None:
            raise ValueError("height and width are required")
        self.n_channels_ = 2 * self.bins
        return self

    def transform(self, X):
        check_is_fitted(self, "n_channels_")
        return np.stack([
            build_event_volume(check_window(w, self.height, self.width), self.bins, self.height, self.width).data
            for w in X
        ])


class LidarProjector(BaseEstimator, TransformerMixin):
    """Point clouds -> (n, 1, H, W) depth images, normalized by default."""

    def __init__(self, camera: CameraModel = None, normalize=True):
        self.camera = camera
        self.normalize = normalize

    def fit(self, X=None, y=None):
        if not isinstance(self.camera, CameraModel):
            raise ValueError("a CameraModel is required")
        self.shape_ = self.camera.shape
        return self

    def transform(self, X):
        check_is_fitted(self, "shape_")
        out = []
        for cloud in X:
            img = project_lidar(check_cloud(cloud), self.camera)
            out.append(lidar_input(img, self.camera.max_range) if self.normalize else img.data[None])
        return np.stack(out)


class NearestNeighborDepth(BaseEstimator):
    """Gives every event the depth of the closest LiDAR pixel.

    ``fit`` takes a sparse depth image; ``predict`` takes an event window.
    """

    def __init__(self, use_grid=False, cell=8):
        self.use_grid = use_grid
        self.cell = cell

    def fit(self, X, y=None):
        data = check_sparse(X)
        if not np.any(data):
            raise ValueError("sparse depth image has no measurement")
        self.sparse_ = SparseDepthImage(data)
        self.index_ = GridIndex(self.sparse_, self.cell) if self.use_grid else None
        return self

    def predict(self, X):
        check_is_fitted(self, "sparse_")
        h, w = self.sparse_.shape
        return nn_associate(check_window(X, h, w), self.sparse_, index=self.index_)


class ALEDRegressor(BaseEstimator):
    """Trains the fusion network on sequences and predicts depth pairs.

    ``X`` is a list of ``(records, camera)`` pairs. ``predict`` returns, per
    sequence, a list of :class:`~aled.types.DepthPair` in meters. ``score``
    is the negative mean absolute depth error over both maps.
    """

    def __init__(self, learning_rate=1e-4, batch_size=4, epochs=50, crop=608, hflip_prob=0.5,
                 tbptt_len=8, seed=0, base_channels=32, bins=5, alpha_warmup=0.1, alpha_main=1.0):
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.crop = crop
        self.hflip_prob = hflip_prob
        self.tbptt_len = tbptt_len
        self.seed = seed
        self.base_channels = base_channels
        self.bins = bins
        self.alpha_warmup = alpha_warmup
        self.alpha_main = alpha_main

    def _config(self) -> TrainConfig:
        return TrainConfig(**self.get_params())

    def fit(self, X, y=None, callback=None):
        data = check_sequences(X)
        self.trainer_ = Trainer(self._config())
        self.history_ = self.trainer_.fit(data, callback=callback)
        self.model_ = self.trainer_.model
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        return [predict_sequence(self.model_, records, cam) for records, cam in check_sequences(X)]

    def score(self, X, y=None):
        errs = []
        for preds, (records, _) in zip(self.predict(X), check_sequences(X)):
            for p, r in zip(preds, records):
                for d, gt in ((p.d_bf, r.gt_begin), (p.d_af, r.gt_end)):
                    errs.append(np.abs(d - gt.data)[gt.mask])
        return -float(np.mean(np.concatenate(errs)))
