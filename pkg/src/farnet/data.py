"""Synthetic composed-retrieval dataset.

Scenes are single colored shapes on plain backgrounds, rendered
deterministically to binary PPM rasters. A training example is a triplet:
reference scene, a one-attribute edit described by a templated token
sequence, and the target scene carrying that edit. Scenes that differ only
in the edited attribute form a subset group; groups partition the gallery,
which makes within-group recall meaningful.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .numerics import Rng

__all__ = [
    "ATTRIBUTES",
    "DataError",
    "SceneSpec",
    "Triplet",
    "DatasetManifest",
    "Dataset",
    "vocabulary",
    "modification_tokens",
    "render",
    "foreground_mask",
    "write_ppm",
    "read_ppm",
    "fnv1a64",
    "sample_groups",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
    "dataset_from_memory",
    "split_sizes",
]

MANIFEST_VERSION = 1

ATTRIBUTES: dict[str, tuple[str, ...]] = {
    "shape": ("circle", "square", "triangle", "cross"),
    "color": ("red", "green", "blue", "yellow", "white"),
    "size": ("small", "large"),
    "position": ("center", "top", "bottom", "left", "right"),
    "background": ("black", "gray"),
}

_COLORS = {
    "red": (200, 40, 40),
    "green": (40, 180, 60),
    "blue": (50, 80, 210),
    "yellow": (220, 200, 50),
    "white": (240, 240, 240),
    "black": (0, 0, 0),
    "gray": (105, 105, 105),
}

_POSITIONS = {
    "center": (0.5, 0.5),
    "top": (0.5, 0.25),
    "bottom": (0.5, 0.75),
    "left": (0.25, 0.5),
    "right": (0.75, 0.5),
}

# object half-extent as a fraction of the image side; small stays legible at
# 32px while the two sizes remain clearly separated
_SIZES = {"small": 0.17, "large": 0.27}


class DataError(Exception):
    """Dataset generation, loading, or integrity failure."""


@dataclass(frozen=True, order=True)
class SceneSpec:
    shape: str
    color: str
    size: str
    position: str
    background: str

    def __post_init__(self):
        for attr, values in ATTRIBUTES.items():
            if getattr(self, attr) not in values:
                raise DataError(f"invalid {attr}: {getattr(self, attr)!r}")

    def with_attribute(self, attribute: str, value: str) -> "SceneSpec":
        return SceneSpec(**{**self.as_dict(), attribute: value})

    def as_dict(self) -> dict[str, str]:
        return {a: getattr(self, a) for a in ATTRIBUTES}


@dataclass(frozen=True)
class Triplet:
    id: int
    reference_id: int
    target_id: int
    attribute: str
    value: str
    tokens: tuple[str, ...]
    subset_group: int


@dataclass
class DatasetManifest:
    format_version: int
    seed: int
    n_triplets: int
    image_size: int
    vocabulary: dict[str, int]
    gallery: list[dict]        # id, spec, file, checksum, subset_group
    triplets: list[Triplet]
    splits: dict[str, list[int]]


@dataclass
class Dataset:
    """A loaded dataset: manifest plus decoded images and token ids."""

    manifest: DatasetManifest
    images: dict[int, np.ndarray]          # gallery id -> float64 HxWx3 in [0,1]
    specs: dict[int, SceneSpec]
    groups: dict[int, list[int]] = field(default_factory=dict)

    def __post_init__(self):
        if not self.groups:
            for entry in self.manifest.gallery:
                self.groups.setdefault(entry["subset_group"], []).append(entry["id"])

    @property
    def vocabulary(self) -> dict[str, int]:
        return self.manifest.vocabulary

    def token_ids(self, triplet: Triplet) -> list[int]:
        return [self.manifest.vocabulary[t] for t in triplet.tokens]

    def split(self, name: str) -> list[Triplet]:
        if name not in self.manifest.splits:
            raise DataError(f"unknown split {name!r}")
        by_id = {t.id: t for t in self.manifest.triplets}
        return [by_id[i] for i in self.manifest.splits[name]]


# ---------------------------------------------------------------------------
# text


def vocabulary() -> dict[str, int]:
    """Closed templated vocabulary with contiguous ids from 0."""
    words = ["make", "the"]
    words.extend(ATTRIBUTES.keys())
    for values in ATTRIBUTES.values():
        words.extend(values)
    return {w: i for i, w in enumerate(words)}


def modification_tokens(attribute: str, value: str) -> tuple[str, ...]:
    """Deterministic 4-token edit description."""
    if attribute not in ATTRIBUTES:
        raise DataError(f"unknown attribute {attribute!r}")
    if value not in ATTRIBUTES[attribute]:
        raise DataError(f"{value!r} is not a {attribute} value")
    return ("make", "the", attribute, value)


# ---------------------------------------------------------------------------
# rendering


def _shape_mask(spec: SceneSpec, size: int) -> np.ndarray:
    """Boolean foreground mask on pixel centers; pure float comparisons."""
    cy = _POSITIONS[spec.position][1] * size
    cx = _POSITIONS[spec.position][0] * size
    r = _SIZES[spec.size] * size
    ys = (np.arange(size, dtype=np.float64) + 0.5)[:, None]
    xs = (np.arange(size, dtype=np.float64) + 0.5)[None, :]
    dy = ys - cy
    dx = xs - cx
    if spec.shape == "circle":
        return dx * dx + dy * dy <= r * r
    if spec.shape == "square":
        return np.maximum(np.abs(dx), np.abs(dy)) <= r
    if spec.shape == "triangle":
        # apex up: vertices (cx, cy-r), (cx-r, cy+r), (cx+r, cy+r)
        return (dy <= r) & (dy >= -r) & (np.abs(dx) <= (dy + r) / 2.0)
    if spec.shape == "cross":
        third = r / 3.0
        arm_h = (np.abs(dx) <= r) & (np.abs(dy) <= third)
        arm_v = (np.abs(dy) <= r) & (np.abs(dx) <= third)
        return arm_h | arm_v
    raise DataError(f"unknown shape {spec.shape!r}")


def foreground_mask(spec: SceneSpec, size: int) -> np.ndarray:
    """Boolean mask of object pixels, as the renderer draws them."""
    return _shape_mask(spec, size)


def render(spec: SceneSpec, size: int) -> np.ndarray:
    """Rasterize a scene to a uint8 RGB array; bitwise reproducible."""
    if size < 8 or size > 64:
        raise DataError(f"unsupported image size {size}; expected 8..64")
    img = np.empty((size, size, 3), dtype=np.uint8)
    img[:, :] = _COLORS[spec.background]
    mask = _shape_mask(spec, size)
    img[mask] = _COLORS[spec.color]
    return img


def write_ppm(path: Path, img: np.ndarray) -> None:
    """Binary P6, 8-bit, no compression."""
    h, w, c = img.shape
    if c != 3 or img.dtype != np.uint8:
        raise DataError("write_ppm expects uint8 HxWx3")
    with open(path, "wb") as f:
        f.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        f.write(img.tobytes())


def read_ppm(path: Path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    parts = blob.split(b"\n", 3)
    if len(parts) != 4 or parts[0] != b"P6" or parts[2] != b"255":
        raise DataError(f"not a supported P6 file: {path}")
    w, h = (int(x) for x in parts[1].split())
    payload = parts[3]
    if len(payload) != w * h * 3:
        raise DataError(f"truncated pixel data in {path}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3)


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h ^= b
        h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return h


# ---------------------------------------------------------------------------
# generation


@dataclass(frozen=True)
class SceneGroup:
    """Scenes sharing every attribute except one; the subset-recall unit."""

    id: int
    attribute: str
    members: tuple[SceneSpec, ...]


def sample_groups(rng: Rng, n_pairs_needed: int,
                  max_attempts: int = 20000) -> list[SceneGroup]:
    """Draw disjoint one-attribute lines until enough ordered pairs exist.

    A line fixes four attributes and sweeps the fifth through its full value
    set, so every member differs from every other member in exactly that
    attribute. Lines are rejected whenever they would reuse a scene, which
    keeps the gallery duplicate-free and the groups a partition of it.
    """
    attrs = list(ATTRIBUTES)
    used: set[SceneSpec] = set()
    groups: list[SceneGroup] = []
    capacity = 0
    attempts = 0
    while capacity < n_pairs_needed:
        attempts += 1
        if attempts > max_attempts:
            raise DataError(
                f"could not assemble {n_pairs_needed} triplet slots "
                f"(got {capacity}); scene universe exhausted"
            )
        attribute = attrs[rng.randbelow(len(attrs))]
        fixed = {
            a: values[rng.randbelow(len(values))]
            for a, values in ATTRIBUTES.items() if a != attribute
        }
        members = tuple(
            SceneSpec(**{**fixed, attribute: v}) for v in ATTRIBUTES[attribute]
        )
        if any(m in used for m in members):
            continue
        used.update(members)
        groups.append(SceneGroup(id=len(groups), attribute=attribute, members=members))
        g = len(members)
        capacity += g * (g - 1)
    return groups


def split_sizes(n: int, ratios: tuple[float, float, float]) -> tuple[int, int, int]:
    """Floor each share, then hand leftover items to the earliest splits."""
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise DataError(f"split ratios must sum to 1, got {ratios}")
    if any(r < 0 for r in ratios):
        raise DataError(f"split ratios must be nonnegative, got {ratios}")
    sizes = [int(n * r) for r in ratios]
    rest = n - sum(sizes)
    for i in range(rest):
        sizes[i % 3] += 1
    return tuple(sizes)


def generate_dataset(seed: int, n_triplets: int,
                     split_ratios: tuple[float, float, float] = (0.8, 0.1, 0.1),
                     image_size: int = 32) -> tuple[DatasetManifest, dict[int, np.ndarray]]:
    """Build a manifest and rendered images; a pure function of its arguments."""
    if n_triplets < 10:
        raise DataError(f"need at least 10 triplets, got {n_triplets}")
    sizes = split_sizes(n_triplets, tuple(split_ratios))
    rng = Rng(seed, stream=101)
    groups = sample_groups(rng, n_triplets)

    scene_ids: dict[SceneSpec, int] = {}
    gallery: list[dict] = []
    images: dict[int, np.ndarray] = {}
    for group in groups:
        for spec in group.members:
            sid = len(gallery)
            scene_ids[spec] = sid
            img = render(spec, image_size)
            images[sid] = img
            gallery.append({
                "id": sid,
                "spec": spec.as_dict(),
                "file": f"images/{sid:05d}.ppm",
                "checksum": "",          # filled at save time
                "subset_group": group.id,
            })

    pairs: list[tuple[SceneGroup, int, int]] = []
    for group in groups:
        g = len(group.members)
        for i in range(g):
            for j in range(g):
                if i != j:
                    pairs.append((group, i, j))
    rng.shuffle(pairs)
    if len(pairs) < n_triplets:
        raise DataError("insufficient triplet capacity after group sampling")

    triplets: list[Triplet] = []
    for tid, (group, i, j) in enumerate(pairs[:n_triplets]):
        ref, tgt = group.members[i], group.members[j]
        value = getattr(tgt, group.attribute)
        triplets.append(Triplet(
            id=tid,
            reference_id=scene_ids[ref],
            target_id=scene_ids[tgt],
            attribute=group.attribute,
            value=value,
            tokens=modification_tokens(group.attribute, value),
            subset_group=group.id,
        ))

    ids = [t.id for t in triplets]
    n_train, n_val, n_test = sizes
    splits = {
        "train": ids[:n_train],
        "val": ids[n_train:n_train + n_val],
        "test": ids[n_train + n_val:n_train + n_val + n_test],
    }
    manifest = DatasetManifest(
        format_version=MANIFEST_VERSION,
        seed=int(seed),
        n_triplets=n_triplets,
        image_size=image_size,
        vocabulary=vocabulary(),
        gallery=gallery,
        triplets=triplets,
        splits=splits,
    )
    return manifest, images


# ---------------------------------------------------------------------------
# persistence


def _manifest_payload(manifest: DatasetManifest) -> dict:
    return {
        "format_version": manifest.format_version,
        "seed": manifest.seed,
        "n_triplets": manifest.n_triplets,
        "image_size": manifest.image_size,
        "vocabulary": manifest.vocabulary,
        "gallery": manifest.gallery,
        "triplets": [
            {
                "id": t.id,
                "reference_id": t.reference_id,
                "target_id": t.target_id,
                "attribute": t.attribute,
                "value": t.value,
                "tokens": list(t.tokens),
                "subset_group": t.subset_group,
            }
            for t in manifest.triplets
        ],
        "splits": manifest.splits,
    }


def save_dataset(manifest: DatasetManifest, images: dict[int, np.ndarray],
                 out_dir: Path) -> None:
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    for entry in manifest.gallery:
        path = out_dir / entry["file"]
        write_ppm(path, images[entry["id"]])
        entry["checksum"] = f"{fnv1a64(path.read_bytes()):016x}"
    payload = _manifest_payload(manifest)
    (out_dir / "manifest.json").write_text(
        json.dumps(payload, indent=2) + "\n", encoding="utf-8"
    )


def dataset_from_memory(manifest: DatasetManifest,
                        images: dict[int, np.ndarray]) -> Dataset:
    """Wrap freshly generated (uint8) images as a loaded dataset."""
    floats = {i: img.astype(np.float64) / 255.0 for i, img in images.items()}
    specs = {e["id"]: SceneSpec(**e["spec"]) for e in manifest.gallery}
    return Dataset(manifest=manifest, images=floats, specs=specs)


def load_dataset(path: Path) -> Dataset:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise DataError(f"no manifest.json under {path}")
    payload = json.loads(manifest_path.read_text(encoding="utf-8"))
    version = payload.get("format_version")
    if version != MANIFEST_VERSION:
        raise DataError(
            f"unsupported manifest format_version {version!r}; "
            f"this build reads version {MANIFEST_VERSION}"
        )
    gallery = payload["gallery"]
    images: dict[int, np.ndarray] = {}
    specs: dict[int, SceneSpec] = {}
    for entry in gallery:
        file_path = path / entry["file"]
        if not file_path.exists():
            raise DataError(f"missing image file {file_path}")
        blob = file_path.read_bytes()
        if f"{fnv1a64(blob):016x}" != entry["checksum"]:
            raise DataError(f"checksum mismatch for {file_path}")
        images[entry["id"]] = read_ppm(file_path).astype(np.float64) / 255.0
        specs[entry["id"]] = SceneSpec(**entry["spec"])
    triplets = [
        Triplet(
            id=t["id"],
            reference_id=t["reference_id"],
            target_id=t["target_id"],
            attribute=t["attribute"],
            value=t["value"],
            tokens=tuple(t["tokens"]),
            subset_group=t["subset_group"],
        )
        for t in payload["triplets"]
    ]
    manifest = DatasetManifest(
        format_version=version,
        seed=payload["seed"],
        n_triplets=payload["n_triplets"],
        image_size=payload["image_size"],
        vocabulary=payload["vocabulary"],
        gallery=gallery,
        triplets=triplets,
        splits=payload["splits"],
    )
    return Dataset(manifest=manifest, images=images, specs=specs)
