"""Recurrent LiDAR + event fusion network.

Two encoder branches (LiDAR and events) update four convGRU states shared
between them, at scales 1/1, 1/2, 1/4 and 1/8. The decoder reads the
coarsest state, then walks back up: at each finer scale the first half of
that scale's state guides a learned convex 2x upsampling, and the second
half is concatenated with the upsampled features. A 1x1 prediction head
emits two channels, the depth before and after the event window, in
normalized units.

All tensors are batched, ``(N, C, H, W)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import NamedTuple, Optional

import torch
import torch.nn.functional as F
from torch import nn


@dataclass(frozen=True)
class NetworkConfig:
    base_channels: int = 32
    bins: int = 5
    lidar_channels: int = 1
    head_kernel: int = 5
    encoder_kernel: int = 5
    gru_kernel: int = 3
    residual_kernel: int = 3
    upsample_kernel: int = 5

    @property
    def event_channels(self) -> int:
        return 2 * self.bins

    @property
    def feature_channels(self) -> tuple[int, int, int, int]:
        c = self.base_channels
        return (c, 2 * c, 4 * c, 8 * c)

    @property
    def state_channels(self) -> tuple[int, int, int, int]:
        c = self.base_channels
        return (2 * c, 4 * c, 8 * c, 8 * c)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkConfig":
        return cls(**d)


class NetworkState(NamedTuple):
    """convGRU hidden states at scales 1/1, 1/2, 1/4, 1/8."""

    s1: torch.Tensor
    s2: torch.Tensor
    s3: torch.Tensor
    s4: torch.Tensor

    def detach(self) -> "NetworkState":
        return NetworkState(*(s.detach() for s in self))

    def flip(self) -> "NetworkState":
        return NetworkState(*(s.flip(-1) for s in self))


def _conv(cin, cout, k, stride=1, bias=True):
    return nn.Conv2d(cin, cout, k, stride=stride, padding=k // 2, bias=bias)


class BasicBlock(nn.Module):
    """ResNet basic block with instance normalization and PReLU."""

    def __init__(self, cin, cout, kernel, stride):
        super().__init__()
        self.conv1 = _conv(cin, cout, kernel, stride)
        self.norm1 = nn.InstanceNorm2d(cout, affine=True)
        self.act1 = nn.PReLU()
        self.conv2 = _conv(cout, cout, kernel)
        self.norm2 = nn.InstanceNorm2d(cout, affine=True)
        self.shortcut = nn.Sequential(_conv(cin, cout, 1, stride), nn.InstanceNorm2d(cout, affine=True))
        self.act2 = nn.PReLU()

    def forward(self, x):
        y = self.act1(self.norm1(self.conv1(x)))
        y = self.norm2(self.conv2(y))
        return self.act2(y + self.shortcut(x))


class ResidualBlock(nn.Module):
    def __init__(self, channels, kernel):
        super().__init__()
        self.conv1 = _conv(channels, channels, kernel)
        self.act1 = nn.PReLU()
        self.conv2 = _conv(channels, channels, kernel)
        self.act2 = nn.PReLU()

    def forward(self, x):
        return self.act2(x + self.conv2(self.act1(self.conv1(x))))


class ConvGRU(nn.Module):
    def __init__(self, input_channels, hidden_channels, kernel):
        super().__init__()
        cat = input_channels + hidden_channels
        self.update_gate = _conv(cat, hidden_channels, kernel)
        self.reset_gate = _conv(cat, hidden_channels, kernel)
        self.candidate = _conv(cat, hidden_channels, kernel)

    def forward(self, x, h):
        xh = torch.cat([x, h], dim=1)
        z = torch.sigmoid(self.update_gate(xh))
        r = torch.sigmoid(self.reset_gate(xh))
        q = torch.tanh(self.candidate(torch.cat([x, r * h], dim=1)))
        return (1 - z) * h + z * q


class Encoder(nn.Module):
    """Head plus three strided stages; each output drives the convGRU at its scale."""

    def __init__(self, in_channels, cfg: NetworkConfig):
        super().__init__()
        feats, states = cfg.feature_channels, cfg.state_channels
        self.head = nn.Sequential(_conv(in_channels, feats[0], cfg.head_kernel), nn.PReLU())
        self.stages = nn.ModuleList(
            BasicBlock(feats[i], feats[i + 1], cfg.encoder_kernel, 2) for i in range(3)
        )
        self.grus = nn.ModuleList(ConvGRU(feats[i], states[i], cfg.gru_kernel) for i in range(4))

    def forward(self, x, state: NetworkState) -> NetworkState:
        f = self.head(x)
        new = [self.grus[0](f, state[0])]
        for i, stage in enumerate(self.stages):
            f = stage(f)
            new.append(self.grus[i + 1](f, state[i + 1]))
        return NetworkState(*new)


def convex_combine(features: torch.Tensor, weights: torch.Tensor) -> torch.Tensor:
    """Upsample ``features`` (N, C, h, w) by 2 with per-pixel 3x3 convex weights.

    ``weights`` has shape (N, 9, 2, 2, h, w), already normalized over dim 1.
    The 3x3 neighborhoods are zero-padded at the borders.
    """
    n, c, h, w = features.shape
    patches = F.unfold(features, 3, padding=1).view(n, c, 9, 1, 1, h, w)
    out = (weights.unsqueeze(1) * patches).sum(dim=2)  # (N, C, 2, 2, h, w)
    return out.permute(0, 1, 4, 2, 5, 3).reshape(n, c, 2 * h, 2 * w)


class ConvexUpsample(nn.Module):
    """Learned 2x upsampling; mask predicted from a full-resolution guide."""

    def __init__(self, in_channels, guide_channels, kernel):
        super().__init__()
        if in_channels % 2:
            raise ValueError(f"convex upsampling needs an even channel count, got {in_channels}")
        self.reduce = nn.Sequential(_conv(in_channels, in_channels // 2, kernel), nn.PReLU())
        self.mask = _conv(guide_channels, 9 * 4, kernel, stride=2)

    def weights(self, guide):
        logits = self.mask(guide)
        n, _, h, w = logits.shape
        return torch.softmax(logits.view(n, 9, 2, 2, h, w), dim=1)

    def forward(self, features, guide):
        return convex_combine(self.reduce(features), self.weights(guide))


class Decoder(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        feats, states = cfg.feature_channels, cfg.state_channels
        self.residual = nn.Sequential(
            ResidualBlock(states[3], cfg.residual_kernel),
            ResidualBlock(states[3], cfg.residual_kernel),
        )
        self.upsample = nn.ModuleList()
        self.fuse = nn.ModuleList()
        # coarse to fine: 1/8 -> 1/4 -> 1/2 -> 1/1
        width = states[3]
        for scale in (2, 1, 0):
            half = states[scale] // 2
            self.upsample.append(ConvexUpsample(width, half, cfg.upsample_kernel))
            self.fuse.append(nn.Sequential(_conv(width // 2 + half, feats[scale], 1), nn.PReLU()))
            width = feats[scale]
        self.predict = _conv(feats[0], 2, 1)

    def forward(self, state: NetworkState) -> torch.Tensor:
        x = self.residual(state.s4)
        for up, fuse, s in zip(self.upsample, self.fuse, (state.s3, state.s2, state.s1)):
            guide, fusion = s.chunk(2, dim=1)
            x = fuse(torch.cat([up(x, guide), fusion], dim=1))
        return self.predict(x)


class ALEDNet(nn.Module):
    def __init__(self, cfg: NetworkConfig = NetworkConfig()):
        super().__init__()
        self.cfg = cfg
        self.lidar_encoder = Encoder(cfg.lidar_channels, cfg)
        self.event_encoder = Encoder(cfg.event_channels, cfg)
        self.decoder = Decoder(cfg)

    def init_state(self, height, width, batch=1) -> NetworkState:
        if height % 8 or width % 8:
            raise ValueError(f"input size {height}x{width} must be divisible by 8")
        p = next(self.parameters())
        shapes = [(height // s, width // s) for s in (1, 2, 4, 8)]
        return NetworkState(*(
            torch.zeros(batch, c, h, w, dtype=p.dtype, device=p.device)
            for c, (h, w) in zip(self.cfg.state_channels, shapes)
        ))

    def _check(self, x, channels, state):
        if x.dim() != 4 or x.shape[1] != channels or x.shape[-2:] != state.s1.shape[-2:]:
            raise ValueError(
                f"input shape {tuple(x.shape)} does not match ({channels}, {tuple(state.s1.shape[-2:])})"
            )

    def encode_lidar(self, lidar: torch.Tensor, state: NetworkState) -> NetworkState:
        self._check(lidar, self.cfg.lidar_channels, state)
        return self.lidar_encoder(lidar, state)

    def encode_events(self, volume: torch.Tensor, state: NetworkState) -> NetworkState:
        self._check(volume, self.cfg.event_channels, state)
        return self.event_encoder(volume, state)

    def decode(self, state: NetworkState) -> torch.Tensor:
        return self.decoder(state)

    def forward_step(self, events: torch.Tensor, lidar: Optional[torch.Tensor], state: NetworkState):
        """Optional LiDAR update, then event update, then prediction."""
        if lidar is not None:
            state = self.encode_lidar(lidar, state)
        state = self.encode_events(events, state)
        return self.decode(state), state

    forward = forward_step


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters() if p.requires_grad)
