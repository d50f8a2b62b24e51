"""Training losses: center loss, cross-entropy, and the correlation-based
deconstruction loss that pushes the class-correlation matrix of batch
predictions toward the identity."""

from __future__ import annotations

from dataclasses import dataclass

import torch


@dataclass
class LossWeights:
    w_center: float = 0.0005
    w_ce: float = 1.0
    w_dc: float = 1.0
    lambda_dc: float = 0.2

    def __post_init__(self):
        for name in ("w_center", "w_ce", "w_dc", "lambda_dc"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


def _check_labels(labels, num_classes):
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError("label out of range")


def center_loss(features, labels, centers, gamma=1.0):
    """(gamma/2) * sum of squared distances between features and their class centers."""
    _check_labels(labels, centers.shape[0])
    diff = features - centers[labels]
    return 0.5 * gamma * diff.pow(2).sum()


def cross_entropy(logits, labels):
    """Batch mean of -log softmax probability at the true label."""
    _check_labels(labels, logits.shape[1])
    log_probs = torch.log_softmax(logits, dim=1)
    return -log_probs[torch.arange(logits.shape[0]), labels].mean()


def correlation_matrix(probs, eps=1e-8):
    """Pearson correlation between class columns of an N x C prediction stack.

    Columns are mean-centered and divided by their (population) standard
    deviation; zero-variance columns are guarded by eps and end up with zero
    rows/columns, diagonal included.
    """
    if probs.dim() != 2:
        raise ValueError("expected an N x C matrix of predictions")
    n = probs.shape[0]
    if n < 2:
        raise ValueError("batch too small for correlation")
    row_sums = probs.sum(dim=1)
    if probs.min() < 0 or (row_sums - 1.0).abs().max() > 1e-5:
        raise ValueError("rows must be probability vectors")
    centered = probs - probs.mean(dim=0, keepdim=True)
    std = centered.pow(2).mean(dim=0, keepdim=True).sqrt()
    normalized = centered / (std + eps)
    return normalized.t() @ normalized / n


def deconstruction_loss(corr, lam=0.2):
    """Sum of squared diagonal gaps to 1 plus lam times squared off-diagonals."""
    if corr.dim() != 2 or corr.shape[0] != corr.shape[1]:
        raise ValueError("correlation matrix must be square")
    diag = torch.diagonal(corr)
    on_diag = (1.0 - diag).pow(2).sum()
    off_diag = corr.pow(2).sum() - diag.pow(2).sum()
    return on_diag + lam * off_diag


def deconstruction_from_probs(probs, lam=0.2, eps=1e-8):
    return deconstruction_loss(correlation_matrix(probs, eps=eps), lam=lam)


def triplet_loss(features, labels, margin=0.3):
    """Batch-hard triplet loss on L2 distances; alternative to the center term."""
    _check_labels(labels, int(labels.max()) + 1 if labels.numel() else 1)
    dist = torch.cdist(features, features)
    same = labels.unsqueeze(0) == labels.unsqueeze(1)
    eye = torch.eye(len(labels), dtype=torch.bool, device=features.device)
    pos = dist.masked_fill(~same | eye, float("-inf")).max(dim=1).values
    neg = dist.masked_fill(same, float("inf")).min(dim=1).values
    valid = torch.isfinite(pos) & torch.isfinite(neg)
    if not valid.any():
        return features.new_zeros(())
    return torch.relu(pos[valid] - neg[valid] + margin).mean()


def total_loss(center, ce, dc, weights: LossWeights):
    """Weighted combination of the three parts; refuses NaN inputs."""
    parts = {"center": center, "ce": ce, "dc": dc}
    for name, part in parts.items():
        value = float(part.detach() if torch.is_tensor(part) else part)
        if value != value:
            raise ValueError(f"diverged: {name} loss is NaN")
    return weights.w_center * center + weights.w_ce * ce + weights.w_dc * dc
