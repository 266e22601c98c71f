"""Sequence training: augmentation, truncated BPTT, Adam, checkpoints."""
from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .losses import LossConfig, total_loss
from .network import ALEDNet, NetworkConfig
from .representations import build_event_volume, denormalize_depth, lidar_input, project_lidar
from .types import CameraModel, DenseDepthGT, DepthPair, EventWindow, PointCloud, SequenceRecord

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "aled-checkpoint/1"


class ConfigError(ValueError):
    pass


class NumericalError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    batch_size: int = 4
    epochs: int = 50
    crop: int = 608  # 0 trains on the full frame
    hflip_prob: float = 0.5
    tbptt_len: int = 8
    seed: int = 0
    base_channels: int = 32
    bins: int = 5
    alpha_warmup: float = 0.1
    alpha_main: float = 1.0

    def __post_init__(self):
        if self.crop % 8:
            raise ConfigError(f"crop {self.crop} must be divisible by 8")
        if self.tbptt_len < 1:
            raise ConfigError("tbptt_len must be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ConfigError("hflip_prob must be in [0, 1]")

    @property
    def network(self) -> NetworkConfig:
        return NetworkConfig(base_channels=self.base_channels, bins=self.bins)

    @property
    def loss(self) -> LossConfig:
        return LossConfig(alpha_warmup=self.alpha_warmup, alpha_main=self.alpha_main)

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key: {key}")
            caster = float if types[key] in ("float", float) else int
            try:
                kwargs[key] = caster(raw)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        return cls(**kwargs)

    @classmethod
    def from_text(cls, text: str, overrides: Optional[dict] = None) -> "TrainConfig":
        """Parse flat ``key = value`` lines; ``#`` starts a comment."""
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            k, v = (s.strip() for s in line.split("=", 1))
            values[k] = v
        values.update(overrides or {})
        return cls.from_mapping(values)


# ---------------------------------------------------------------- augmentation

def _mirror_cloud(cloud: PointCloud, camera: CameraModel) -> PointCloud:
    """Mirror a LiDAR cloud through the camera's y-z plane."""
    R, t = camera.rotation, camera.translation
    pc = camera.lidar_to_camera(cloud.points)
    pc[:, 0] = -pc[:, 0]
    return PointCloud((pc - t) @ R, cloud.t)


def augment_record(record: SequenceRecord, camera: CameraModel, origin, size, flip: bool):
    """Crop ``record`` to ``size`` = (h, w) at ``origin`` = (row, col), then optionally flip.

    Returns ``(record, camera)``; the returned camera is the model under which
    the returned LiDAR cloud projects onto the cropped (flipped) image.
    """
    r0, c0 = origin
    h, w = size
    if r0 < 0 or c0 < 0 or r0 + h > camera.height or c0 + w > camera.width:
        raise ValueError(f"crop {size} at {origin} exceeds the {camera.height}x{camera.width} frame")
    win = record.window
    keep = (win.x >= c0) & (win.x < c0 + w) & (win.y >= r0) & (win.y < r0 + h)
    x = win.x[keep] - c0
    y = win.y[keep] - r0
    cx = camera.cx - c0
    lidar = record.lidar
    if flip:
        x = (w - 1) - x
        cx = (w - 1) - cx
        if lidar is not None:
            lidar = _mirror_cloud(lidar, camera)
    window = EventWindow(x, y, win.t[keep], win.p[keep], win.t_start, win.t_end)

    def crop_gt(gt: DenseDepthGT):
        d = gt.data[r0:r0 + h, c0:c0 + w]
        m = gt.mask[r0:r0 + h, c0:c0 + w]
        if flip:
            d, m = d[:, ::-1], m[:, ::-1]
        return DenseDepthGT(d, m, gt.t)

    cam = CameraModel(camera.fx, camera.fy, cx, camera.cy - r0, w, h,
                      camera.rotation, camera.translation, camera.max_range)
    return SequenceRecord(window, lidar, crop_gt(record.gt_begin), crop_gt(record.gt_end)), cam


def augment(records, camera: CameraModel, crop: int, hflip_prob: float, rng: np.random.Generator):
    """Draw one crop origin and one flip decision and apply them to every record."""
    if crop:
        if crop > min(camera.height, camera.width):
            raise ValueError(f"crop {crop} larger than the {camera.height}x{camera.width} frame")
        size = (crop, crop)
        origin = (int(rng.integers(0, camera.height - crop + 1)),
                  int(rng.integers(0, camera.width - crop + 1)))
    else:
        size, origin = (camera.height, camera.width), (0, 0)
    flip = bool(rng.random() < hflip_prob)
    out = [augment_record(r, camera, origin, size, flip) for r in records]
    cam = out[0][1] if out else camera
    return [r for r, _ in out], cam


# ---------------------------------------------------------------- tensors

@dataclass
class SequenceTensors:
    """Network-ready arrays for one sequence; depths normalized."""

    volumes: np.ndarray        # (S, 2B, H, W)
    lidar: np.ndarray          # (S, 1, H, W); meaningful where has_lidar
    has_lidar: np.ndarray      # (S,) bool
    gt_begin: np.ndarray       # (S, H, W)
    gt_end: np.ndarray
    mask_begin: np.ndarray     # (S, H, W) bool
    mask_end: np.ndarray

    def __len__(self):
        return len(self.volumes)


def prepare_sequence(records, camera: CameraModel, bins: int) -> SequenceTensors:
    h, w = camera.height, camera.width
    s = len(records)
    vols = np.zeros((s, 2 * bins, h, w), dtype=np.float32)
    lid = np.zeros((s, 1, h, w), dtype=np.float32)
    has = np.zeros(s, dtype=bool)
    gb = np.zeros((s, h, w), dtype=np.float32)
    ge = np.zeros((s, h, w), dtype=np.float32)
    mb = np.zeros((s, h, w), dtype=bool)
    me = np.zeros((s, h, w), dtype=bool)
    for i, rec in enumerate(records):
        vols[i] = build_event_volume(rec.window, bins, h, w).data
        if rec.lidar is not None:
            lid[i] = lidar_input(project_lidar(rec.lidar, camera), camera.max_range)
            has[i] = True
        gb[i] = rec.gt_begin.data / camera.max_range
        ge[i] = rec.gt_end.data / camera.max_range
        mb[i], me[i] = rec.gt_begin.mask, rec.gt_end.mask
    return SequenceTensors(vols, lid, has, gb, ge, mb, me)


def _stack(batch, attr, start, stop, dtype=None):
    arr = np.stack([getattr(s, attr)[start:stop] for s in batch], axis=1)  # (T, N, ...)
    return torch.from_numpy(arr) if dtype is None else torch.from_numpy(arr).to(dtype)


def unroll(model: ALEDNet, batch, start, stop, state, alpha):
    """Run steps ``[start, stop)`` for a batch of sequences; returns ``(loss, l_pw, l_msg, state)``."""
    dtype = next(model.parameters()).dtype
    vols = _stack(batch, "volumes", start, stop, dtype)
    lid = _stack(batch, "lidar", start, stop, dtype)
    has = _stack(batch, "has_lidar", start, stop)
    preds = []
    for k in range(stop - start):
        if has[k].any():
            updated = model.encode_lidar(lid[k], state)
            sel = has[k].view(-1, 1, 1, 1)
            state = type(state)(*(torch.where(sel, u, s) for u, s in zip(updated, state)))
        state = model.encode_events(vols[k], state)
        preds.append(model.decode(state))
    gb = _stack(batch, "gt_begin", start, stop, dtype)
    ge = _stack(batch, "gt_end", start, stop, dtype)
    mb = _stack(batch, "mask_begin", start, stop)
    me = _stack(batch, "mask_end", start, stop)
    loss, l_pw, l_msg = total_loss(preds, list(gb), list(ge), alpha, list(mb), list(me))
    return loss, l_pw, l_msg, state


# ---------------------------------------------------------------- trainer

@dataclass
class EpochReport:
    epoch: int
    mean_loss: float
    mean_l_pw: float
    mean_l_msg: float
    steps: int
    seconds: float
    losses: list


class Trainer:
    """Owns the model, optimizer and position in the training schedule.

    ``dataset`` is a list of ``(records, camera)`` pairs, one per sequence.
    Randomness (shuffling, augmentation) is derived from ``(seed, epoch)`` so
    an epoch can be replayed or resumed at any batch boundary.
    """

    def __init__(self, config: TrainConfig, model: Optional[ALEDNet] = None, log_file=None,
                 dtype=torch.float32):
        self.config = config
        if model is None:
            torch.manual_seed(config.seed)
            model = ALEDNet(config.network).to(dtype)
        self.model = model
        self.optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate,
                                          betas=(0.9, 0.999), weight_decay=0.0)
        self.step = 0
        self.epoch = 1  # next (or current) epoch, 1-indexed
        self.batches_done = 0  # within the current epoch
        self.log_file = log_file

    def epoch_plan(self, dataset, epoch: int):
        """Shuffled, augmented batches for ``epoch``."""
        rng = np.random.default_rng([self.config.seed, epoch])
        order = rng.permutation(len(dataset))
        prepared = []
        for i in order:
            records, camera = dataset[i]
            recs, cam = augment(records, camera, self.config.crop, self.config.hflip_prob, rng)
            prepared.append(prepare_sequence(recs, cam, self.config.bins))
        bs = self.config.batch_size
        return [prepared[i:i + bs] for i in range(0, len(prepared), bs)]

    def _log(self, epoch, l_pw, l_msg, total):
        line = f"{epoch}\t{self.step}\t{l_pw:.9g}\t{l_msg:.9g}\t{total:.9g}"
        log.debug(line)
        if self.log_file is not None:
            self.log_file.write(line + "\n")
            self.log_file.flush()

    def train_epoch(self, dataset, stop_after: Optional[int] = None) -> EpochReport:
        """Train (the rest of) the current epoch.

        ``stop_after`` ends early after that many batches of the epoch have
        completed, leaving the trainer ready to resume.
        """
        if not dataset:
            raise ValueError("empty dataset")
        epoch = self.epoch
        alpha = self.config.loss.alpha(epoch)
        t0 = time.perf_counter()
        losses, pws, msgs = [], [], []
        self.model.train()
        batches = self.epoch_plan(dataset, epoch)
        for b in range(self.batches_done, len(batches)):
            if stop_after is not None and b >= stop_after:
                break
            batch = batches[b]
            n_steps = min(len(s) for s in batch)
            h, w = batch[0].volumes.shape[-2:]
            state = self.model.init_state(h, w, batch=len(batch))
            for start in range(0, n_steps, self.config.tbptt_len):
                stop = min(start + self.config.tbptt_len, n_steps)
                loss, l_pw, l_msg, state = unroll(self.model, batch, start, stop, state, alpha)
                if not torch.isfinite(loss):
                    raise NumericalError(
                        f"non-finite loss at epoch {epoch}, step {self.step}, unroll steps "
                        f"[{start}, {stop}): l_pw={float(l_pw)}, l_msg={float(l_msg)}, alpha={alpha}"
                    )
                self.optimizer.zero_grad(set_to_none=True)
                loss.backward()
                self.optimizer.step()
                state = state.detach()
                self.step += 1
                losses.append(loss.item())
                pws.append(l_pw.item())
                msgs.append(l_msg.item())
                self._log(epoch, l_pw.item(), l_msg.item(), losses[-1])
            self.batches_done = b + 1
        else:
            self.epoch += 1
            self.batches_done = 0
        mean = lambda v: float(np.mean(v)) if v else math.nan  # noqa: E731
        return EpochReport(epoch, mean(losses), mean(pws), mean(msgs), len(losses),
                           time.perf_counter() - t0, losses)

    def fit(self, dataset, epochs: Optional[int] = None, callback=None):
        reports = []
        target = self.config.epochs if epochs is None else epochs
        while self.epoch <= target:
            rep = self.train_epoch(dataset)
            reports.append(rep)
            log.info("epoch %d: loss %.6g (%d steps, %.1fs)", rep.epoch, rep.mean_loss, rep.steps, rep.seconds)
            if callback is not None:
                callback(self, rep)
        return reports

    # ------------------------------------------------------------ checkpoints

    def save_checkpoint(self, path):
        torch.save({
            "format": CHECKPOINT_FORMAT,
            "network_config": self.model.cfg.to_dict(),
            "train_config": asdict(self.config),
            "params": self.model.state_dict(),
            "optimizer": self.optimizer.state_dict(),
            "step": self.step,
            "epoch": self.epoch,
            "batches_done": self.batches_done,
        }, path)

    @classmethod
    def load_checkpoint(cls, path, log_file=None) -> "Trainer":
        ckpt = read_checkpoint(path)
        config = TrainConfig(**ckpt["train_config"])
        model = model_from_checkpoint(ckpt)
        trainer = cls(config, model=model, log_file=log_file)
        trainer.optimizer.load_state_dict(ckpt["optimizer"])
        trainer.step = ckpt["step"]
        trainer.epoch = ckpt["epoch"]
        trainer.batches_done = ckpt["batches_done"]
        return trainer


def read_checkpoint(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} not found")
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(ckpt, dict) or ckpt.get("format") != CHECKPOINT_FORMAT:
        found = ckpt.get("format") if isinstance(ckpt, dict) else None
        raise CheckpointError(f"checkpoint {path}: unsupported format {found!r}, expected {CHECKPOINT_FORMAT!r}")
    return ckpt


def model_from_checkpoint(ckpt: dict) -> ALEDNet:
    cfg = NetworkConfig.from_dict(ckpt["network_config"])
    model = ALEDNet(cfg)
    dtype = next(iter(ckpt["params"].values())).dtype
    model.to(dtype).load_state_dict(ckpt["params"])
    return model


# ---------------------------------------------------------------- inference

@torch.no_grad()
def predict_sequence(model: ALEDNet, records, camera: CameraModel, bins: Optional[int] = None):
    """Run a whole sequence from a zero state; returns one metric-space DepthPair per step."""
    bins = model.cfg.bins if bins is None else bins
    seq = prepare_sequence(records, camera, bins)
    model.eval()
    dtype = next(model.parameters()).dtype
    state = model.init_state(camera.height, camera.width)
    out = []
    for k in range(len(seq)):
        lid = torch.from_numpy(seq.lidar[k:k + 1]).to(dtype) if seq.has_lidar[k] else None
        pred, state = model.forward_step(torch.from_numpy(seq.volumes[k:k + 1]).to(dtype), lid, state)
        d = denormalize_depth(pred[0].double(), camera.max_range).numpy()
        out.append(DepthPair(d[0], d[1]))
    return out


@torch.no_grad()
def evaluate_loss(model: ALEDNet, dataset, bins: int, alpha: float) -> float:
    """Total loss of ``dataset`` (no augmentation, whole sequences unrolled once)."""
    total = 0.0
    for records, camera in dataset:
        seq = prepare_sequence(records, camera, bins)
        state = model.init_state(camera.height, camera.width)
        loss, _, _, _ = unroll(model, [seq], 0, len(seq), state, alpha)
        total += float(loss)
    return total
