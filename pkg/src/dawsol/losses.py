"""Training objectives: cross-entropy, Gaussian MMD, Universum L1, DAL composition, DANN plugin."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


@dataclass(frozen=True)
class LossBreakdown:
    l_c: float
    l_d: float
    l_u: float
    total: float

    def as_dict(self) -> dict:
        return {"l_c": self.l_c, "l_d": self.l_d, "l_u": self.l_u, "total": self.total}


def classification_loss(scores: torch.Tensor, targets) -> torch.Tensor:
    """Mean cross-entropy over the batch.

    ``scores`` is (B, K). ``targets`` is either a (B,) tensor of class indices or a
    (B, K) tensor of label weights (e.g. CutMix mixtures).
    """
    if scores.shape[0] < 1:
        raise ValueError("empty batch")
    if targets.dim() == 1:
        return F.cross_entropy(scores, targets)
    return -(targets * F.log_softmax(scores, dim=1)).sum(1).mean()


def gaussian_kernel(a: torch.Tensor, b: torch.Tensor, sigma: float) -> torch.Tensor:
    """exp(-||a - b||^2 / (2 sigma^2)) for vectors, or the full Gram matrix for (n, C) x (m, C)."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if a.dim() == 1:
        return torch.exp(-((a - b) ** 2).sum() / (2 * sigma**2))
    d2 = (a * a).sum(1, keepdim=True) + (b * b).sum(1) - 2.0 * (a @ b.T)
    return torch.exp(-d2.clamp_min(0.0) / (2 * sigma**2))


def median_bandwidth(x: torch.Tensor, y: torch.Tensor) -> float:
    """Median pairwise Euclidean distance over the pooled sets (excluding self-pairs); 1.0 if degenerate."""
    pooled = torch.cat([x, y]).detach()
    n = pooled.shape[0]
    if n < 2:
        return 1.0
    d = torch.cdist(pooled, pooled)
    rows, cols = torch.triu_indices(n, n, offset=1)
    med = d[rows, cols].median().item()
    return med if med > 0 else 1.0


def mmd_loss(source_like: torch.Tensor, target_like: torch.Tensor, sigma: float = 0.0,
             unbiased: bool = False) -> torch.Tensor:
    """Squared MMD between two sets of row vectors with one Gaussian kernel.

    Default is the V-statistic that keeps the i == j terms. ``sigma <= 0`` picks the
    median heuristic. Returns a zero tensor when either set is empty.
    """
    if source_like.shape[0] == 0 or target_like.shape[0] == 0:
        return source_like.new_zeros(())
    if sigma <= 0:
        sigma = median_bandwidth(source_like, target_like)
    ns, nt = source_like.shape[0], target_like.shape[0]
    k_ss = gaussian_kernel(source_like, source_like, sigma)
    k_tt = gaussian_kernel(target_like, target_like, sigma)
    k_st = gaussian_kernel(source_like, target_like, sigma)
    if unbiased:
        if ns < 2 or nt < 2:
            return source_like.new_zeros(())
        ss = (k_ss.sum() - k_ss.diagonal().sum()) / (ns * (ns - 1))
        tt = (k_tt.sum() - k_tt.diagonal().sum()) / (nt * (nt - 1))
    else:
        ss = k_ss.sum() / ns**2
        tt = k_tt.sum() / nt**2
    return ss + tt - 2 * k_st.sum() / (ns * nt)


def universum_reg(samples: torch.Tensor, literal: bool = False) -> torch.Tensor:
    """L1 feature strength of Universum samples (n, C).

    Default: mean over samples of ||t||_1 / C. ``literal=True``: plain sum of L1 norms.
    """
    if samples.shape[0] == 0:
        return samples.new_zeros(())
    if literal:
        return samples.abs().sum()
    return samples.abs().mean()


class _ReverseGrad(torch.autograd.Function):
    @staticmethod
    def forward(ctx, x, alpha):
        ctx.alpha = alpha
        return x.view_as(x)

    @staticmethod
    def backward(ctx, grad_output):
        return -ctx.alpha * grad_output, None


def reverse_gradient(x: torch.Tensor, alpha: float = 1.0) -> torch.Tensor:
    """Identity forward; multiplies the incoming gradient by ``-alpha`` on the way back."""
    return _ReverseGrad.apply(x, alpha)


class DomainClassifier(nn.Module):
    """Two-layer perceptron producing one domain logit per feature vector."""

    def __init__(self, feature_dim: int, hidden: int = 0):
        super().__init__()
        hidden = hidden or feature_dim
        self.net = nn.Sequential(nn.Linear(feature_dim, hidden), nn.ReLU(inplace=True), nn.Linear(hidden, 1))

    def forward(self, x):
        return self.net(x).squeeze(-1)


def gradient_reversal_uda(source_like: torch.Tensor, target_like: torch.Tensor,
                          classifier: DomainClassifier, alpha: float = 1.0) -> torch.Tensor:
    """Binary domain cross-entropy (source = 0, target = 1) behind a gradient-reversal layer."""
    if source_like.shape[0] == 0 or target_like.shape[0] == 0:
        return source_like.new_zeros(())
    feats = reverse_gradient(torch.cat([source_like, target_like]), alpha)
    labels = torch.cat([source_like.new_zeros(source_like.shape[0]), target_like.new_ones(target_like.shape[0])])
    return F.binary_cross_entropy_with_logits(classifier(feats), labels)


def dal_loss(S: torch.Tensor, T_fake: torch.Tensor, T_true: torch.Tensor, T_univ: torch.Tensor,
             uda_method: str = "mmd", sigma: float = 0.0, unbiased: bool = False,
             literal_universum: bool = False, classifier: DomainClassifier = None):
    """(l_d, l_u): adaptation loss over (S u T_fake) vs T_true, and Universum regularization of T_univ."""
    source_like = torch.cat([S, T_fake]) if T_fake.shape[0] else S
    if uda_method == "mmd":
        l_d = mmd_loss(source_like, T_true, sigma, unbiased)
    elif uda_method == "dann":
        if classifier is None:
            raise ValueError("dann needs a domain classifier")
        l_d = gradient_reversal_uda(source_like, T_true, classifier)
    else:
        l_d = S.new_zeros(())
    return l_d, universum_reg(T_univ, literal_universum)


def per_image_mmd(z: torch.Tensor, fakes: list, trues: list, sigma: float = 0.0,
                  unbiased: bool = False) -> torch.Tensor:
    """Mean over images of MMD({z_b} u T_fake_b, T_true_b); images with an empty true-target set are skipped."""
    terms = [mmd_loss(torch.cat([z[b:b + 1], f]), t, sigma, unbiased)
             for b, (f, t) in enumerate(zip(fakes, trues)) if t.shape[0]]
    if not terms:
        return z.new_zeros(())
    return torch.stack(terms).mean()


def compose(l_c: torch.Tensor, l_d: torch.Tensor, l_u: torch.Tensor, lambda1: float, lambda2: float):
    """Total objective and its float breakdown."""
    total = l_c + lambda1 * l_d + lambda2 * l_u
    c, d, u = float(l_c.detach()), float(l_d.detach()), float(l_u.detach())
    breakdown = LossBreakdown(c, d, u, c + lambda1 * d + lambda2 * u)
    if not all(math.isfinite(v) for v in breakdown.as_dict().values()):
        raise FloatingPointError(f"non-finite loss: {breakdown.as_dict()}")
    return total, breakdown
