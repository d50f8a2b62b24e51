"""Dataset trees, deterministic toy-scene generation, and paired batching.

Directory layout: <root>/<split>/<view>/<class_id>/<image files> with views
"drone" and "satellite". Toy scenes are seeded geometric landmark layouts:
the satellite render is canonical (one muted, dark-leaning palette), drone
renders add affine jitter (angle, altitude scale, shift) plus per-image
brightness/tint jitter that leans toward underexposure and shadows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image, ImageDraw

VIEWS = ("drone", "satellite")
IMAGE_EXTS = {".png", ".jpg", ".jpeg", ".bmp"}

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


# ---------------------------------------------------------------------------
# manifests

@dataclass
class DatasetManifest:
    split: str
    classes: list[str]
    images: dict[str, dict[str, list[Path]]]   # class -> view -> sorted paths

    def label_of(self, class_id: str) -> int:
        return self.classes.index(class_id)

    def paths(self, class_id: str, view: str) -> list[Path]:
        return self.images.get(class_id, {}).get(view, [])

    def num_images(self) -> int:
        return sum(len(p) for views in self.images.values() for p in views.values())

    def pairs(self) -> list[tuple[Path, Path, int]]:
        """One (drone image, class satellite image, label) triple per drone image."""
        out = []
        for label, class_id in enumerate(self.classes):
            satellites = self.paths(class_id, "satellite")
            if not satellites:
                raise ValueError(f"class {class_id} missing satellite view")
            for drone_path in self.paths(class_id, "drone"):
                out.append((drone_path, satellites[0], label))
        return out


def scan_dataset(root: str | Path, split: str) -> DatasetManifest:
    """Manifest of <root>/<split>/<view>/<class>/<files> in stable order."""
    split_dir = Path(root) / split
    if not split_dir.is_dir():
        raise ValueError(f"empty dataset root: {split_dir} does not exist")
    images: dict[str, dict[str, list[Path]]] = {}
    for view in VIEWS:
        view_dir = split_dir / view
        if not view_dir.is_dir():
            continue
        for class_dir in sorted(view_dir.iterdir()):
            if not class_dir.is_dir():
                continue
            files = sorted(p for p in class_dir.iterdir() if p.suffix.lower() in IMAGE_EXTS)
            if files:
                images.setdefault(class_dir.name, {})[view] = files
    if not images:
        raise ValueError(f"empty dataset root: no images under {split_dir}")
    classes = sorted(images)
    if split == "train":
        for class_id in classes:
            for view in VIEWS:
                if view not in images[class_id]:
                    raise ValueError(f"class {class_id} missing {view} view")
    return DatasetManifest(split=split, classes=classes, images=images)


def save_manifest(manifest: DatasetManifest, path: str | Path):
    lines = []
    for class_id in manifest.classes:
        for view in VIEWS:
            for p in manifest.paths(class_id, view):
                lines.append(f"{class_id}\t{view}\t{p}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_manifest(path: str | Path, split: str = "train") -> DatasetManifest:
    images: dict[str, dict[str, list[Path]]] = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 3 or fields[1] not in VIEWS:
            raise ValueError(f"line {lineno}: expected class<TAB>view<TAB>path")
        class_id, view, p = fields
        images.setdefault(class_id, {}).setdefault(view, []).append(Path(p))
    return DatasetManifest(split=split, classes=sorted(images), images=images)


def collect_view_images(view_dir: str | Path) -> list[tuple[str, Path]]:
    """(class_id, path) pairs under a single-view directory of class folders."""
    view_dir = Path(view_dir)
    if not view_dir.is_dir():
        raise ValueError(f"directory not found: {view_dir}")
    out = []
    for class_dir in sorted(view_dir.iterdir()):
        if not class_dir.is_dir():
            continue
        for p in sorted(class_dir.iterdir()):
            if p.suffix.lower() in IMAGE_EXTS:
                out.append((class_dir.name, p))
    return out


# ---------------------------------------------------------------------------
# toy scenes

@dataclass
class ToySpec:
    num_classes: int = 20
    drone_views_per_class: int = 8
    image_size: int = 256
    seed: int = 7
    style_jitter: float = 1.0
    query_views_per_class: int = 2

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.drone_views_per_class < 1 or self.query_views_per_class < 1:
            raise ValueError("view counts must be >= 1")
        if self.image_size < 64:
            raise ValueError("image_size must be >= 64")
        if self.style_jitter < 0:
            raise ValueError("style_jitter must be >= 0")


def _class_scene(spec: ToySpec, class_idx: int) -> dict:
    """Seeded landmark layout: roads, building blocks, one central marker.

    The palette spreads tones widely with a dark lean, the shared look of the
    satellite set.
    """
    rng = np.random.default_rng((spec.seed, 1000 + class_idx))
    base_gray = rng.uniform(68, 98)
    scene = {
        "base": base_gray * rng.uniform(0.97, 1.05, 3),
        "noise_span": rng.uniform(56, 72),
        "roads": [],
        "buildings": [],
    }
    for _ in range(int(rng.integers(1, 3))):
        scene["roads"].append({
            "angle": rng.uniform(0, math.pi),
            "offset": rng.uniform(-0.25, 0.25),
            "width": rng.uniform(0.02, 0.05),
            "color": np.array([rng.uniform(16, 42)] * 3) + rng.uniform(-4, 4, 3),
        })
    for _ in range(int(rng.integers(2, 5))):
        gray = rng.uniform(95, 235)
        scene["buildings"].append({
            "cx": rng.uniform(-0.30, 0.30), "cy": rng.uniform(-0.30, 0.30),
            "w": rng.uniform(0.10, 0.26), "h": rng.uniform(0.10, 0.26),
            "angle": rng.uniform(0, math.pi),
            "color": np.array([gray, gray * rng.uniform(0.85, 1.0), gray * rng.uniform(0.7, 0.95)]),
        })
    marker_gray = rng.uniform(155, 250)
    scene["marker"] = {
        "kind": ("disc", "cross", "ring", "diamond")[int(rng.integers(0, 4))],
        "size": rng.uniform(0.10, 0.20),
        "angle": rng.uniform(0, math.pi),
        "color": np.array([marker_gray, marker_gray * rng.uniform(0.8, 1.0),
                           marker_gray * rng.uniform(0.6, 0.9)]),
    }
    return scene


def _transform(points, size, angle, scale, shift):
    """Scene coords in [-0.5, 0.5] to pixel coords with rotation/scale/shift."""
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    out = []
    for x, y in points:
        xr = scale * (x * cos_a - y * sin_a) + shift[0] + 0.5
        yr = scale * (x * sin_a + y * cos_a) + shift[1] + 0.5
        out.append((xr * size, yr * size))
    return out


def _rect_points(cx, cy, w, h, angle):
    cos_a, sin_a = math.cos(angle), math.sin(angle)
    pts = []
    for sx, sy in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
        px, py = sx * w / 2, sy * h / 2
        pts.append((cx + px * cos_a - py * sin_a, cy + px * sin_a + py * cos_a))
    return pts


def _poly_circle(cx, cy, r, n=24):
    return [(cx + r * math.cos(2 * math.pi * k / n), cy + r * math.sin(2 * math.pi * k / n))
            for k in range(n)]


def _render(scene, size, angle, scale, shift, texture_rng) -> np.ndarray:
    base = scene["base"]
    span = scene["noise_span"]
    blocks = texture_rng.uniform(-span, span, (size // 8 + 1, size // 8 + 1, 1))
    noise = np.kron(blocks, np.ones((8, 8, 1)))[:size, :size]
    background = np.clip(base[None, None, :] + noise, 2, 255).astype(np.uint8)
    img = Image.fromarray(background)
    draw = ImageDraw.Draw(img)

    def draw_poly(points, color):
        pts = _transform(points, size, angle, scale, shift)
        draw.polygon(pts, fill=tuple(int(c) for c in np.clip(color, 0, 255)))

    for road in scene["roads"]:
        half = road["width"] / 2
        along, across = road["angle"], road["angle"] + math.pi / 2
        ox = road["offset"] * math.cos(across)
        oy = road["offset"] * math.sin(across)
        draw_poly(_rect_points(ox, oy, 2.0, 2 * half, along), road["color"])
    for b in scene["buildings"]:
        draw_poly(_rect_points(b["cx"], b["cy"], b["w"], b["h"], b["angle"]), b["color"])

    marker = scene["marker"]
    r = marker["size"] / 2
    if marker["kind"] == "disc":
        draw_poly(_poly_circle(0, 0, r), marker["color"])
    elif marker["kind"] == "ring":
        draw_poly(_poly_circle(0, 0, r), marker["color"])
        draw_poly(_poly_circle(0, 0, r * 0.55), scene["base"])
    elif marker["kind"] == "cross":
        draw_poly(_rect_points(0, 0, 2.4 * r, 0.7 * r, marker["angle"]), marker["color"])
        draw_poly(_rect_points(0, 0, 0.7 * r, 2.4 * r, marker["angle"]), marker["color"])
    else:  # diamond
        draw_poly(_rect_points(0, 0, 1.9 * r, 1.9 * r, marker["angle"] + math.pi / 4),
                  marker["color"])
    return np.asarray(img)


def _photometric(arr: np.ndarray, gamma: float, gain: float, tint: np.ndarray) -> np.ndarray:
    """Shadow-leaning exposure: per-pixel gamma curve plus gain and tint."""
    x = arr.astype(np.float64) / 255.0
    out = 255.0 * np.power(x, gamma) * (gain * tint)[None, None, :]
    return np.clip(np.rint(out), 0, 255).astype(np.uint8)


def render_satellite(spec: ToySpec, class_idx: int) -> np.ndarray:
    """Canonical view: no jitter, the shared muted palette."""
    rng = np.random.default_rng((spec.seed, 2000 + class_idx))
    return _render(_class_scene(spec, class_idx), spec.image_size,
                   angle=0.0, scale=1.0, shift=(0.0, 0.0), texture_rng=rng)


def render_drone(spec: ToySpec, class_idx: int, view_idx: int, tag: int = 0) -> np.ndarray:
    """Jittered view: affine (angle/altitude/shift) plus shadow-leaning color."""
    rng = np.random.default_rng((spec.seed, 3000 + tag, class_idx, view_idx))
    arr = _render(
        _class_scene(spec, class_idx), spec.image_size,
        angle=math.radians(rng.uniform(-12, 12)),
        scale=rng.uniform(0.82, 1.08),
        shift=(rng.uniform(-0.035, 0.035), rng.uniform(-0.035, 0.035)),
        texture_rng=rng,
    )
    if spec.style_jitter == 0:
        return arr
    gamma = 1.0 + spec.style_jitter * rng.uniform(0.2, 0.7)
    gain = 1.0 - spec.style_jitter * rng.uniform(0.0, 0.1)
    tint = 1.0 + spec.style_jitter * rng.uniform(-0.1, 0.1, 3)
    return _photometric(arr, gamma, gain, tint)


def generate_toy(spec: ToySpec, out_dir: str | Path) -> DatasetManifest:
    """Write the full toy tree (train/query/gallery) and return the train manifest."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValueError(f"cannot create output directory: {exc}") from exc

    def save(arr, path):
        path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(arr).save(path)

    for class_idx in range(spec.num_classes):
        class_id = f"{class_idx:04d}"
        satellite = render_satellite(spec, class_idx)
        save(satellite, out_dir / "train" / "satellite" / class_id / "satellite.png")
        save(satellite, out_dir / "gallery" / "satellite" / class_id / "satellite.png")
        for k in range(spec.drone_views_per_class):
            save(render_drone(spec, class_idx, k, tag=0),
                 out_dir / "train" / "drone" / class_id / f"drone_{k:02d}.png")
        for k in range(spec.query_views_per_class):
            save(render_drone(spec, class_idx, k, tag=1),
                 out_dir / "query" / "drone" / class_id / f"drone_q{k:02d}.png")
    return scan_dataset(out_dir, "train")


# ---------------------------------------------------------------------------
# batching and tensors

def batch_sampler(manifest: DatasetManifest, batch_size: int, seed):
    """Yield one epoch of shuffled class-aligned (drone, satellite, label) batches."""
    pairs = manifest.pairs()
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if batch_size > len(pairs):
        raise ValueError(f"batch_size {batch_size} exceeds dataset size {len(pairs)}")
    order = np.random.default_rng(seed).permutation(len(pairs))
    for start in range(0, len(pairs), batch_size):
        chunk = [pairs[i] for i in order[start:start + batch_size]]
        drone_paths, sat_paths, labels = zip(*chunk)
        yield list(drone_paths), list(sat_paths), list(labels)


def load_image(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"))


class ImageStore:
    """Caches images decoded and resized to the model input size."""

    def __init__(self, size: int, dtype=torch.float32):
        self.size = size
        self.dtype = dtype
        self._cache: dict[Path, np.ndarray] = {}
        self._mean = torch.tensor(IMAGENET_MEAN, dtype=dtype).view(3, 1, 1)
        self._std = torch.tensor(IMAGENET_STD, dtype=dtype).view(3, 1, 1)

    def _array(self, path) -> np.ndarray:
        path = Path(path)
        arr = self._cache.get(path)
        if arr is None:
            with Image.open(path) as img:
                arr = np.asarray(img.convert("RGB").resize((self.size, self.size),
                                                           Image.BILINEAR))
            self._cache[path] = arr
        return arr

    def batch(self, paths) -> torch.Tensor:
        arrays = np.stack([self._array(p) for p in paths])
        x = torch.from_numpy(arrays).to(self.dtype).permute(0, 3, 1, 2) / 255.0
        return (x - self._mean) / self._std


def augment_batch(x: torch.Tensor, rng: np.random.Generator) -> torch.Tensor:
    """Horizontal flip plus small random crop-resize, per image."""
    size = x.shape[-1]
    out = []
    for img in x:
        if rng.random() < 0.5:
            img = torch.flip(img, dims=[-1])
        frac = rng.uniform(0.85, 1.0)
        crop = max(2, int(round(size * frac)))
        if crop < size:
            top = int(rng.integers(0, size - crop + 1))
            left = int(rng.integers(0, size - crop + 1))
            patch = img[:, top:top + crop, left:left + crop]
            img = torch.nn.functional.interpolate(
                patch.unsqueeze(0), size=(size, size), mode="bilinear",
                align_corners=False).squeeze(0)
        out.append(img)
    return torch.stack(out)
