"""Feature extractor, GAP aggregator and linear score estimator, plus CAM generation."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .core import RunConfig


class InputError(ValueError):
    pass


def _stage(c_in, c_out, stride):
    return nn.Sequential(
        nn.Conv2d(c_in, c_out, 3, stride=stride, padding=1, bias=False),
        nn.BatchNorm2d(c_out),
        nn.ReLU(inplace=True),
    )


class SmallBackbone(nn.Module):
    """Five conv stages, total stride 16; output is ReLU features with ``feature_dim`` channels."""

    stride = 16

    def __init__(self, feature_dim: int = 64):
        super().__init__()
        self.body = nn.Sequential(
            _stage(3, 16, 2),
            _stage(16, 32, 2),
            _stage(32, 64, 2),
            _stage(64, 64, 2),
            _stage(64, feature_dim, 1),
        )

    def forward(self, x):
        return self.body(x)


class ResNet50Backbone(nn.Module):
    """torchvision ResNet50 trunk with layer4 at stride 1 (total stride 16). Untrained weights."""

    stride = 16

    def __init__(self):
        super().__init__()
        from torchvision.models import resnet50

        net = resnet50(weights=None, replace_stride_with_dilation=[False, False, True])
        self.body = nn.Sequential(*list(net.children())[:-2])

    def forward(self, x):
        return self.body(x)


class CAMNet(nn.Module):
    """f (extractor) -> g (global average pooling) -> e (fully connected estimator)."""

    def __init__(self, config: RunConfig):
        super().__init__()
        self.image_size = config.image_size
        self.feature_dim = config.feature_dim
        self.num_classes = config.num_classes
        if config.backbone == "resnet50":
            self.extractor = ResNet50Backbone()
        else:
            self.extractor = SmallBackbone(config.feature_dim)
        self.estimator = nn.Linear(config.feature_dim, config.num_classes)

    @property
    def stride(self) -> int:
        return self.extractor.stride

    def feature_shape(self) -> tuple:
        side = -(-self.image_size // self.stride)
        return side, side

    def extract_features(self, images: torch.Tensor) -> torch.Tensor:
        """Images (B, 3, H, W) in [0, 1] -> pixel features (B, C, h, w)."""
        if images.dim() != 4 or images.shape[1] != 3 or images.shape[2:] != (self.image_size, self.image_size):
            raise InputError(
                f"expected images of shape (B, 3, {self.image_size}, {self.image_size}), got {tuple(images.shape)}"
            )
        return self.extractor(images)

    def forward(self, images: torch.Tensor):
        """Returns (pixel features Z as (B, C, N), source features z as (B, C), scores y* as (B, K))."""
        feats = self.extract_features(images)
        Z = feats.flatten(2)
        z = aggregate(Z)
        return Z, z, self.estimator(z)

    def score_maps(self, images: torch.Tensor) -> torch.Tensor:
        """Raw pixel-level scores Y* = e(f(X)) as (B, K, h, w)."""
        feats = self.extract_features(images)
        b, c, h, w = feats.shape
        Y = estimate(feats.flatten(2), self.estimator.weight, self.estimator.bias)
        return Y.reshape(b, -1, h, w)


def aggregate(Z):
    """Global average pooling over the last (spatial) axis: (..., C, N) -> (..., C)."""
    if Z.shape[-1] < 1:
        raise InputError("aggregate needs at least one spatial position")
    return Z.mean(-1)


def estimate(features, weight, bias):
    """Column-wise affine map: (..., C, m) -> (..., K, m)."""
    if features.shape[-2] != weight.shape[1]:
        raise InputError(f"feature dim {features.shape[-2]} != estimator input {weight.shape[1]}")
    if isinstance(features, np.ndarray):
        return weight @ features + np.asarray(bias)[:, None]
    return torch.matmul(weight, features) + bias[:, None]


def normalize_maps(maps: torch.Tensor) -> torch.Tensor:
    """Min-max normalize each map over its last two axes; constant maps become all zero."""
    flat = maps.flatten(-2)
    lo = flat.min(-1, keepdim=True).values
    hi = flat.max(-1, keepdim=True).values
    span = hi - lo
    out = torch.where(span > 0, (flat - lo) / torch.where(span > 0, span, torch.ones_like(span)), torch.zeros_like(flat))
    return out.reshape(maps.shape)


def upsample(maps: torch.Tensor, size: int) -> torch.Tensor:
    """Bilinear resize of (B, K, h, w) maps to (B, K, size, size)."""
    return F.interpolate(maps, size=(size, size), mode="bilinear", align_corners=False)


@torch.no_grad()
def generate_cam(model: CAMNet, images: torch.Tensor) -> torch.Tensor:
    """Normalized class activation maps at image resolution, (B, K, H, W) in [0, 1]."""
    raw = model.score_maps(images)
    return normalize_maps(upsample(raw, images.shape[-1]))
