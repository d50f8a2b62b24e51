"""Two-branch shared-weight training loop with SGD step decay and the
center + cross-entropy + deconstruction loss combination."""

from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import torch

from . import losses
from .config import RunConfig
from .data import ImageStore, augment_batch, batch_sampler, scan_dataset
from .model import FEAT_DIM, GeoLocNet, ModelConfig, save_checkpoint

LOG_HEADER = "epoch,loss_total,loss_ce,loss_center,loss_dc,backbone_lr,seconds"

# the correlation loss has 1/std gradients while predictions are still flat,
# so the first steps need a ceiling
CLIP_NORM = 5.0


def model_config_from(cfg: RunConfig, num_classes: int) -> ModelConfig:
    return ModelConfig(
        num_classes=num_classes,
        gem_p=float(cfg["model.gem_p"]),
        gem_p_trainable=bool(cfg["model.gem_p_trainable"]),
        partition_ratio=float(cfg["partition.ratio"]),
        hab_stages=cfg.hab_stages(),
        input_size=int(cfg["model.input_size"]),
        descriptor=str(cfg["model.descriptor"]),
        pretrained=bool(cfg["model.pretrained"]),
    )


def _param_groups(model: GeoLocNet, cfg: RunConfig):
    backbone_ids = {id(p) for p in model.backbone.parameters()}
    backbone = [p for p in model.parameters() if id(p) in backbone_ids]
    head = [p for p in model.parameters() if id(p) not in backbone_ids]
    return [
        {"params": backbone, "lr": float(cfg["optimizer.backbone_lr"])},
        {"params": head, "lr": float(cfg["optimizer.head_lr"])},
    ]


def train_model(cfg: RunConfig, out_dir: str | Path, log=print) -> dict:
    """Train on cfg's dataset directories; writes metrics.csv and best.pt.

    Returns a summary dict with the checkpoint path and per-epoch losses.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    seed = int(cfg["seed"])
    torch.manual_seed(seed)
    dtype = torch.float64 if cfg["train.dtype"] == "float64" else torch.float32
    if dtype is torch.float64:
        torch.use_deterministic_algorithms(True)

    drone_dir = Path(str(cfg["data.drone_dir"]))
    satellite_dir = Path(str(cfg["data.satellite_dir"]))
    manifest = _manifest_from_dirs(drone_dir, satellite_dir)

    model = GeoLocNet(model_config_from(cfg, num_classes=len(manifest.classes)))
    model.to(dtype).train()
    weights = losses.LossWeights(
        w_center=float(cfg["loss.w_center"]),
        w_ce=float(cfg["loss.w_ce"]),
        w_dc=float(cfg["loss.w_dc"]),
        lambda_dc=float(cfg["loss.lambda_dc"]),
    )
    use_triplet = cfg["loss.aux"] == "triplet"
    centers = torch.nn.Parameter(torch.zeros(len(manifest.classes), 2 * FEAT_DIM, dtype=dtype))

    optimizer = torch.optim.SGD(
        _param_groups(model, cfg),
        momentum=float(cfg["optimizer.momentum"]),
        weight_decay=float(cfg["optimizer.weight_decay"]),
    )
    center_optimizer = torch.optim.SGD([centers], lr=float(cfg["optimizer.center_lr"]))
    scheduler = torch.optim.lr_scheduler.StepLR(
        optimizer, step_size=int(cfg["optimizer.step_epochs"]),
        gamma=float(cfg["optimizer.gamma"]))

    store = ImageStore(int(cfg["model.input_size"]), dtype=dtype)
    epochs = int(cfg["train.epochs"])
    batch_size = int(cfg["train.batch_size"])
    augment = bool(cfg["train.augment"])

    history = []
    best_loss = float("inf")
    checkpoint_path = out_dir / "best.pt"
    log_path = out_dir / "metrics.csv"
    log_lines = [LOG_HEADER]

    for epoch in range(1, epochs + 1):
        t0 = time.time()
        sums = {"total": 0.0, "ce": 0.0, "center": 0.0, "dc": 0.0}
        n_steps = 0
        for step, (drone_paths, sat_paths, labels) in enumerate(
                batch_sampler(manifest, batch_size, seed=(seed, epoch))):
            drone = store.batch(drone_paths)
            satellite = store.batch(sat_paths)
            if augment:
                aug_rng = np.random.default_rng((seed, epoch, step))
                drone = augment_batch(drone, aug_rng)
                satellite = augment_batch(satellite, aug_rng)
            labels_t = torch.tensor(labels, dtype=torch.long)
            both_labels = torch.cat([labels_t, labels_t])

            per_view, (logits_d, logits_s) = model.forward_pair(drone, satellite)
            logits = torch.cat([logits_d, logits_s])
            feats = torch.cat(per_view["joint_bn"])

            ce = losses.cross_entropy(logits, both_labels)
            dc = losses.deconstruction_from_probs(torch.softmax(logits, dim=1),
                                                  lam=weights.lambda_dc)
            if use_triplet:
                center_part = feats.new_zeros(())
                aux = losses.triplet_loss(feats, both_labels)
            else:
                center_part = losses.center_loss(feats, both_labels, centers, gamma=1.0)
                aux = feats.new_zeros(())
            try:
                total = losses.total_loss(center_part, ce, dc, weights) + aux
            except ValueError as exc:
                raise RuntimeError(f"diverged at epoch {epoch} step {step}: {exc}") from exc

            optimizer.zero_grad()
            center_optimizer.zero_grad()
            total.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), CLIP_NORM)
            # standard center update: independent of the combination weight and
            # averaged over each class's batch count so lr 0.5 stays stable
            if centers.grad is not None and weights.w_center > 0:
                counts = torch.bincount(both_labels, minlength=centers.shape[0]).to(dtype)
                centers.grad /= (weights.w_center * (1.0 + counts)).unsqueeze(1)
            optimizer.step()
            center_optimizer.step()

            sums["total"] += total.item()
            sums["ce"] += ce.item()
            sums["center"] += center_part.item()
            sums["dc"] += dc.item()
            n_steps += 1

        scheduler.step()
        means = {k: v / n_steps for k, v in sums.items()}
        seconds = time.time() - t0
        lr = optimizer.param_groups[0]["lr"]
        log_lines.append(f"{epoch},{means['total']:.6f},{means['ce']:.6f},"
                         f"{means['center']:.6f},{means['dc']:.6f},{lr:.6g},{seconds:.2f}")
        log_path.write_text("\n".join(log_lines) + "\n")
        history.append(means)
        log(f"epoch {epoch}/{epochs} total {means['total']:.4f} ce {means['ce']:.4f} "
            f"center {means['center']:.4f} dc {means['dc']:.4f} ({seconds:.1f}s)")
        if means["total"] < best_loss:
            best_loss = means["total"]
            save_checkpoint(model, checkpoint_path,
                            extra={"epoch": epoch, "centers": centers.detach().clone()})

    return {
        "checkpoint": checkpoint_path,
        "metrics_csv": log_path,
        "history": history,
        "best_loss": best_loss,
        "classes": manifest.classes,
    }


def _manifest_from_dirs(drone_dir: Path, satellite_dir: Path):
    """Train manifest from two view directories of class folders."""
    from .data import DatasetManifest, collect_view_images

    images: dict[str, dict[str, list[Path]]] = {}
    for view, view_dir in (("drone", drone_dir), ("satellite", satellite_dir)):
        if not view_dir.is_dir():
            raise ValueError(f"directory not found: {view_dir}")
        for class_id, path in collect_view_images(view_dir):
            images.setdefault(class_id, {}).setdefault(view, []).append(path)
    if not images:
        raise ValueError("empty dataset: no class folders found")
    classes = sorted(images)
    for class_id in classes:
        for view in ("drone", "satellite"):
            if view not in images[class_id]:
                raise ValueError(f"class {class_id} missing {view} view")
    return DatasetManifest(split="train", classes=classes, images=images)
