"""Estimator-style front end for the refiner."""

import torch
from sklearn.base import BaseEstimator, TransformerMixin

from ..diffgeom import TensorTracks
from ..losses import LossConfig
from ..validation import check_hand_model, check_trajectories
from .features import extract_features
from .model import RefinerConfig
from .train import TrainConfig, TrainItem, train


class TrajectoryOptimizer(BaseEstimator, TransformerMixin):
    """Learns to correct noisy hand-object trajectories.

    fit(X, y, meshes=..., model=...) trains the refiner on (noisy, clean)
    trajectory pairs; transform(X, meshes=...) returns corrected copies.
    `meshes` is one mesh for all items or a per-item list.

    Parameters mirror TrainConfig/RefinerConfig; the full configs are
    available afterwards as `train_config_` and `net_.config`.
    """

    def __init__(self, lr=1e-4, batch_size=16, epochs=20, seed=0,
                 stage="pretrain", d=64, heads=4, cloud_points=96,
                 pene_points=48):
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.seed = seed
        self.stage = stage
        self.d = d
        self.heads = heads
        self.cloud_points = cloud_points
        self.pene_points = pene_points

    def _items(self, X, y, meshes, scales):
        if y is None:
            y = X
        if len(X) != len(y):
            raise ValueError("X and y must have equal length")
        meshes = meshes if isinstance(meshes, (list, tuple)) else [meshes] * len(X)
        if scales is None:
            scales = [t.scale for t in X]
        return [TrainItem(noisy=a, target=b, mesh=m, scale=s)
                for a, b, m, s in zip(X, y, meshes, scales)]

    def fit(self, X, y, meshes=None, model=None, scales=None,
            init_from=None, out_dir=None):
        if meshes is None or model is None:
            raise ValueError("fit requires meshes= and model=")
        check_hand_model(model)
        check_trajectories(list(X) + list(y), model=model)
        cfg = TrainConfig(lr=self.lr, batch_size=self.batch_size,
                          epochs=self.epochs, seed=self.seed, stage=self.stage,
                          loss=LossConfig(cloud_points=self.cloud_points,
                                          pene_points=self.pene_points))
        net_cfg = RefinerConfig(d=self.d, heads=self.heads, seed=self.seed,
                                pose_width=14 + X[0].num_joints)
        self.net_, self.curve_ = train(
            self._items(X, y, meshes, scales), model, config=cfg,
            net_config=net_cfg, out_dir=out_dir, init_from=init_from)
        self.model_ = model
        self.train_config_ = cfg
        return self

    def transform(self, X, meshes=None, scales=None):
        if not hasattr(self, "net_"):
            raise ValueError("not fitted")
        if meshes is None:
            raise ValueError("transform requires meshes=")
        items = self._items(X, X, meshes, scales)
        out = []
        with torch.no_grad():
            for it in items:
                feats = extract_features([it.noisy], it.mesh, self.net_.config,
                                         self.model_, scales=[it.scale])
                tracks = TensorTracks.from_trajectories([it.noisy])
                out.append(self.net_(tracks, feats).to_trajectories([it.noisy])[0])
        return out

    def predict(self, X, meshes=None, scales=None):
        return self.transform(X, meshes=meshes, scales=scales)
