"""Dynamic-observation network: stride-modified ResNet50 backbone with
hierarchical attention blocks, generalized-mean pooling over the center box
and its surround ring, and a BN neck + two-FC classifier head."""

from __future__ import annotations

from dataclasses import dataclass, asdict, field

import numpy as np
import torch
import torch.nn as nn
from torchvision import models

from .partition import PartitionSpec, center_box, split_center_surround

FEAT_DIM = 2048
HAB_STAGES = ("stage3", "stage4", "stage5")


def gem_pool(x, p=3.0, mask=None, eps=1e-6):
    """Generalized-mean pool over the trailing spatial dims (or a masked region).

    p=1 is the arithmetic mean, p -> inf approaches the max. Values are
    clamped at eps before the power; the computation is normalized by the
    region max so large p cannot overflow.
    """
    p_value = float(p.detach() if torch.is_tensor(p) else p)
    if p_value < 1.0:
        raise ValueError("gem power p must be >= 1")
    if x.dim() >= 2:
        if mask is not None:
            mask = torch.as_tensor(np.asarray(mask), dtype=torch.bool, device=x.device)
            if mask.shape != x.shape[-2:]:
                raise ValueError("mask shape must match the spatial dims")
            if not bool(mask.any()):
                raise ValueError("empty pooling region")
            flat = x[..., mask]
        else:
            flat = x.reshape(*x.shape[:-2], -1)
    else:
        if mask is not None:
            raise ValueError("mask requires a 2-d spatial input")
        flat = x
    if flat.shape[-1] == 0:
        raise ValueError("empty pooling region")
    flat = flat.clamp(min=eps)
    scale = flat.max(dim=-1, keepdim=True).values.detach()
    pooled = (flat / scale).pow(p).mean(dim=-1).pow(1.0 / p)
    return pooled * scale.squeeze(-1)


class GemPool(nn.Module):
    """Gem pooling layer with an optionally trainable power."""

    def __init__(self, p=3.0, trainable=False, eps=1e-6):
        super().__init__()
        if p < 1.0:
            raise ValueError("gem power p must be >= 1")
        self.eps = eps
        if trainable:
            self.p = nn.Parameter(torch.tensor(float(p)))
        else:
            self.register_buffer("p", torch.tensor(float(p)))

    def forward(self, x, mask=None):
        return gem_pool(x, p=self.p.clamp(min=1.0), mask=mask, eps=self.eps)


class HierarchicalAttention(nn.Module):
    """Spatial gate fusing a center channel-max stream with a whole-map
    channel-mean stream through a 5x5 conv, BN, and sigmoid."""

    def __init__(self, spec: PartitionSpec = PartitionSpec()):
        super().__init__()
        self.spec = spec
        self.fuse = nn.Conv2d(2, 1, kernel_size=5, padding=2)
        self.norm = nn.BatchNorm2d(1)
        # small weights + zero shift keep the initial gate near 0.5
        nn.init.normal_(self.fuse.weight, std=0.01)
        nn.init.zeros_(self.fuse.bias)

    def attention(self, x):
        if x.dim() != 4:
            raise ValueError("expected an N x C x H x W feature map")
        height, width = x.shape[-2], x.shape[-1]
        box = center_box(height, width, self.spec)
        cm = x[..., box.row_start:box.row_end, box.col_start:box.col_end]
        cm = cm.amax(dim=1, keepdim=True)
        cm_full = x.new_zeros(x.shape[0], 1, height, width)
        cm_full[..., box.row_start:box.row_end, box.col_start:box.col_end] = cm
        gm = x.mean(dim=1, keepdim=True)
        fused = self.fuse(torch.cat([gm, cm_full], dim=1))
        return torch.sigmoid(self.norm(fused))

    def forward(self, x):
        return x * self.attention(x)


@dataclass
class ModelConfig:
    num_classes: int
    gem_p: float = 3.0
    gem_p_trainable: bool = False
    partition_ratio: float = 0.5
    hab_stages: tuple[str, ...] = ("stage3", "stage5")
    input_size: int = 256
    descriptor: str = "joint_bn"
    pretrained: bool = False

    def __post_init__(self):
        if self.num_classes < 1:
            raise ValueError("num_classes must be >= 1")
        if self.gem_p < 1.0:
            raise ValueError("gem_p must be >= 1")
        self.hab_stages = tuple(self.hab_stages)
        unknown = set(self.hab_stages) - set(HAB_STAGES)
        if unknown:
            raise ValueError(f"unknown hab stages: {sorted(unknown)}")
        if self.input_size < 32:
            raise ValueError("input_size must be >= 32")
        if self.descriptor not in ("joint_bn", "compressed"):
            raise ValueError("descriptor must be 'joint_bn' or 'compressed'")
        PartitionSpec(self.partition_ratio)


@dataclass
class Descriptor:
    """Per-image retrieval features at the stages of the head."""

    center_vec: np.ndarray
    surround_vec: np.ndarray
    joint: np.ndarray
    joint_bn: np.ndarray
    compressed: np.ndarray


def build_backbone(pretrained: bool = False):
    """ResNet50 whose last stage keeps full resolution: the first conv5
    bottleneck's 3x3 conv and its downsample shortcut both run at stride 1,
    so a 256px input yields a 2048 x 16 x 16 map (overall downsampling x16)."""
    weights = models.ResNet50_Weights.IMAGENET1K_V1 if pretrained else None
    try:
        net = models.resnet50(weights=weights)
    except Exception as exc:  # typically no network access for the weight file
        raise RuntimeError(
            "could not load pretrained backbone weights; "
            "set model.pretrained=false for a random-initialized backbone"
        ) from exc
    net.layer4[0].conv2.stride = (1, 1)
    net.layer4[0].downsample[0].stride = (1, 1)
    return net


class GeoLocNet(nn.Module):
    """Shared-weight two-view model producing descriptors and geo-tag logits."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.spec = PartitionSpec(config.partition_ratio)
        self.backbone = build_backbone(config.pretrained)
        self.backbone.fc = nn.Identity()
        self.habs = nn.ModuleDict(
            {stage: HierarchicalAttention(self.spec) for stage in config.hab_stages}
        )
        self.pool = GemPool(config.gem_p, trainable=config.gem_p_trainable)
        self.neck = nn.BatchNorm1d(2 * FEAT_DIM)
        self.compress = nn.Linear(2 * FEAT_DIM, FEAT_DIM)
        self.classifier = nn.Linear(FEAT_DIM, config.num_classes)
        nn.init.kaiming_normal_(self.compress.weight, mode="fan_out")
        nn.init.zeros_(self.compress.bias)
        nn.init.normal_(self.classifier.weight, std=0.001)
        nn.init.zeros_(self.classifier.bias)

    def features(self, x):
        """Backbone feature map with attention blocks applied in-line."""
        if x.dim() != 4 or x.shape[1] != 3:
            raise ValueError("expected an N x 3 x H x W image batch")
        b = self.backbone
        x = b.maxpool(b.relu(b.bn1(b.conv1(x))))
        x = b.layer1(x)
        x = b.layer2(x)
        if "stage3" in self.habs:
            x = self.habs["stage3"](x)
        x = b.layer3(x)
        if "stage4" in self.habs:
            x = self.habs["stage4"](x)
        x = b.layer4(x)
        if "stage5" in self.habs:
            x = self.habs["stage5"](x)
        return x

    def descriptor_parts(self, feature_map):
        """Gem-pool the center box and surround ring, concatenate, BN, compress."""
        center, mask = split_center_surround(feature_map, self.spec)
        center_vec = self.pool(center)
        surround_vec = self.pool(feature_map, mask=mask)
        joint = torch.cat([center_vec, surround_vec], dim=1)
        joint_bn = self.neck(joint)
        compressed = self.compress(joint_bn)
        return {
            "center_vec": center_vec,
            "surround_vec": surround_vec,
            "joint": joint,
            "joint_bn": joint_bn,
            "compressed": compressed,
        }

    def forward(self, x):
        parts = self.descriptor_parts(self.features(x))
        logits = self.classifier(parts["compressed"])
        return parts, logits

    def forward_pair(self, drone, satellite):
        """Run both views through the single shared weight set."""
        n = drone.shape[0]
        parts, logits = self.forward(torch.cat([drone, satellite], dim=0))
        split = lambda t: (t[:n], t[n:])
        per_view = {k: split(v) for k, v in parts.items()}
        return per_view, split(logits)

    @torch.no_grad()
    def embed(self, image) -> Descriptor:
        """Descriptor of a single normalized 3 x H x W image (eval mode)."""
        was_training = self.training
        self.eval()
        try:
            parts, _ = self.forward(image.unsqueeze(0))
        finally:
            self.train(was_training)
        return Descriptor(**{k: v[0].cpu().numpy() for k, v in parts.items()})

    @torch.no_grad()
    def retrieval_descriptors(self, batch) -> np.ndarray:
        """Batched descriptors of the configured kind for matching."""
        parts, _ = self.forward(batch)
        return parts[self.config.descriptor].cpu().numpy()


def save_checkpoint(model: GeoLocNet, path, extra: dict | None = None):
    payload = {"config": asdict(model.config), "state_dict": model.state_dict()}
    payload.update(extra or {})
    torch.save(payload, path)


def load_checkpoint(path, strict: bool = True) -> GeoLocNet:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    try:
        saved = dict(payload["config"])
        saved["hab_stages"] = tuple(saved["hab_stages"])
        saved["pretrained"] = False  # weights come from the checkpoint itself
        config = ModelConfig(**saved)
        model = GeoLocNet(config)
        model.load_state_dict(payload["state_dict"], strict=strict)
    except (KeyError, TypeError, RuntimeError) as exc:
        raise RuntimeError(f"checkpoint/config mismatch: {exc}") from exc
    model.eval()
    return model
