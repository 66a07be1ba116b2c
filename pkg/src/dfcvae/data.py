"""CelebA ingestion: annotation parsing, cropping/resizing and batching."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np
import torch
from PIL import Image

from .errors import ConfigError, DataError, ParseError

CELEBA_ATTRIBUTES = [
    "5_o_Clock_Shadow", "Arched_Eyebrows", "Attractive", "Bags_Under_Eyes", "Bald",
    "Bangs", "Big_Lips", "Big_Nose", "Black_Hair", "Blond_Hair", "Blurry", "Brown_Hair",
    "Bushy_Eyebrows", "Chubby", "Double_Chin", "Eyeglasses", "Goatee", "Gray_Hair",
    "Heavy_Makeup", "High_Cheekbones", "Male", "Mouth_Slightly_Open", "Mustache",
    "Narrow_Eyes", "No_Beard", "Oval_Face", "Pale_Skin", "Pointy_Nose",
    "Receding_Hairline", "Rosy_Cheeks", "Sideburns", "Smiling", "Straight_Hair",
    "Wavy_Hair", "Wearing_Earrings", "Wearing_Hat", "Wearing_Lipstick",
    "Wearing_Necklace", "Wearing_Necktie", "Young",
]

LANDMARK_NAMES = [
    "lefteye_x", "lefteye_y", "righteye_x", "righteye_y", "nose_x", "nose_y",
    "leftmouth_x", "leftmouth_y", "rightmouth_x", "rightmouth_y",
]

N_ATTRIBUTES = 40
ALIGNED_SIZE = (178, 218)  # width, height of img_align_celeba files


# -- annotation files -----------------------------------------------------


@dataclass
class AttributeTable:
    attribute_names: List[str]
    rows: Dict[str, np.ndarray]

    @property
    def ids(self) -> List[str]:
        return list(self.rows)

    def column(self, name: str, ids: Optional[Sequence[str]] = None) -> np.ndarray:
        if name not in self.attribute_names:
            raise ConfigError(f"unknown attribute {name!r}")
        j = self.attribute_names.index(name)
        ids = self.ids if ids is None else ids
        return np.array([self.rows[i][j] for i in ids], dtype=np.int8)

    def matrix(self, ids: Sequence[str]) -> np.ndarray:
        return np.stack([self.rows[i] for i in ids]).astype(np.int8)

    def to_text(self) -> str:
        lines = [str(len(self.rows)), " ".join(self.attribute_names)]
        for image_id, values in self.rows.items():
            lines.append(image_id + " " + " ".join(f"{int(v):2d}" for v in values))
        return "\n".join(lines) + "\n"


def _read_lines(path) -> List[str]:
    try:
        with open(path) as f:
            return f.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _parse_count(lines: List[str], path) -> int:
    if not lines:
        raise ParseError("empty file", path, 1)
    try:
        n = int(lines[0].strip())
    except ValueError:
        raise ParseError(f"first line must be the row count, got {lines[0]!r}", path, 1)
    if n < 0:
        raise ParseError(f"negative row count {n}", path, 1)
    return n


def parse_attribute_text(text: str, path="<text>") -> AttributeTable:
    return _parse_attributes(text.splitlines(), path)


def parse_attribute_file(path) -> AttributeTable:
    """Parse ``list_attr_celeba.txt``: count line, header of 40 names, then
    ``image_id v1 ... v40`` rows with values in {-1, 1}."""
    return _parse_attributes(_read_lines(path), path)


def _parse_attributes(lines: List[str], path) -> AttributeTable:
    n = _parse_count(lines, path)
    if len(lines) < 2:
        raise ParseError("missing header line", path, 2)
    names = lines[1].split()
    if len(names) != N_ATTRIBUTES:
        raise ParseError(f"header has {len(names)} names, expected {N_ATTRIBUTES}", path, 2)
    if len(set(names)) != len(names):
        raise ParseError("header repeats an attribute name", path, 2)
    rows: Dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[2:], start=3):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != N_ATTRIBUTES + 1:
            raise ParseError(
                f"row has {len(parts) - 1} values, expected {N_ATTRIBUTES}", path, lineno
            )
        image_id = parts[0]
        if image_id in rows:
            raise ParseError(f"duplicate image id {image_id!r}", path, lineno)
        try:
            values = np.array([int(v) for v in parts[1:]], dtype=np.int64)
        except ValueError:
            raise ParseError("non-integer attribute value", path, lineno)
        bad = values[(values != 1) & (values != -1)]
        if bad.size:
            raise ParseError(f"attribute value {int(bad[0])} not in {{-1, 1}}", path, lineno)
        rows[image_id] = values.astype(np.int8)
    if len(rows) != n:
        raise ParseError(f"declared {n} rows but found {len(rows)}", path, 1)
    return AttributeTable(names, rows)


@dataclass
class LandmarkTable:
    rows: Dict[str, np.ndarray]  # id -> (5, 2) int array of (x, y)

    def to_text(self) -> str:
        lines = [str(len(self.rows)), " ".join(LANDMARK_NAMES)]
        for image_id, pts in self.rows.items():
            lines.append(image_id + " " + " ".join(str(int(v)) for v in pts.reshape(-1)))
        return "\n".join(lines) + "\n"


def parse_landmark_text(text: str, path="<text>", image_size=ALIGNED_SIZE) -> LandmarkTable:
    return _parse_landmarks(text.splitlines(), path, image_size)


def parse_landmark_file(path, image_size=ALIGNED_SIZE) -> LandmarkTable:
    """Parse ``list_landmarks_align_celeba.txt`` (count, header, then
    ``image_id`` and 10 integer coordinates per row)."""
    return _parse_landmarks(_read_lines(path), path, image_size)


def _parse_landmarks(lines: List[str], path, image_size) -> LandmarkTable:
    n = _parse_count(lines, path)
    if len(lines) < 2 or len(lines[1].split()) != 10:
        raise ParseError("header must name 10 landmark coordinates", path, 2)
    w, h = image_size if image_size is not None else (None, None)
    rows: Dict[str, np.ndarray] = {}
    for lineno, line in enumerate(lines[2:], start=3):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 11:
            raise ParseError(f"row has {len(parts) - 1} coordinates, expected 10", path, lineno)
        if parts[0] in rows:
            raise ParseError(f"duplicate image id {parts[0]!r}", path, lineno)
        try:
            pts = np.array([int(v) for v in parts[1:]], dtype=np.int64).reshape(5, 2)
        except ValueError:
            raise ParseError("non-integer landmark coordinate", path, lineno)
        if (pts < 0).any() or (w is not None and ((pts[:, 0] >= w).any() or (pts[:, 1] >= h).any())):
            raise ParseError("landmark outside the image bounds", path, lineno)
        rows[parts[0]] = pts
    if len(rows) != n:
        raise ParseError(f"declared {n} rows but found {len(rows)}", path, 1)
    return LandmarkTable(rows)


def parse_partition_file(path) -> Dict[str, int]:
    """``list_eval_partition.txt``: ``image_id split`` with split 0/1/2."""
    out = {}
    for lineno, line in enumerate(_read_lines(path), start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 2 or parts[1] not in ("0", "1", "2"):
            raise ParseError("expected 'image_id {0,1,2}'", path, lineno)
        out[parts[0]] = int(parts[1])
    return out


# -- dataset spec ---------------------------------------------------------


@dataclass
class DatasetSpec:
    image_dir: str
    attr_path: Optional[str]
    train_ids: List[str]
    test_ids: List[str]
    landmark_path: Optional[str] = None
    crop: str = "center_148"
    center_crop: int = 148
    landmark_margin: float = 0.4
    image_side: int = 64
    seed: int = 0
    workers: int = 0
    _attributes: Optional[AttributeTable] = field(default=None, repr=False)
    _landmarks: Optional[LandmarkTable] = field(default=None, repr=False)

    def __post_init__(self):
        if self.crop not in ("center_148", "landmark_box"):
            raise ConfigError(f"crop must be center_148 or landmark_box, got {self.crop!r}")
        if self.crop == "landmark_box" and not self.landmark_path and self._landmarks is None:
            raise ConfigError("landmark_box crop requires a landmark file")
        overlap = set(self.train_ids) & set(self.test_ids)
        if overlap:
            raise DataError(f"train and test splits share {len(overlap)} ids, e.g. {min(overlap)}")

    @classmethod
    def from_root(
        cls,
        root: Optional[str] = None,
        image_dir: Optional[str] = None,
        attr_path: Optional[str] = None,
        landmark_path: Optional[str] = None,
        partition_path: Optional[str] = None,
        test_size: int = 20000,
        limit: int = 0,
        check_files: bool = True,
        **kwargs,
    ) -> "DatasetSpec":
        """Resolve CelebA paths and split ids.

        The test split is the lexicographically last ``test_size`` ids unless
        a partition file is given, in which case split 2 is the test set.
        """
        if root is None and image_dir is None:
            raise ConfigError("dataset needs data.root or data.image_dir")
        image_dir = image_dir or os.path.join(root, "img_align_celeba")
        if attr_path is None and root is not None:
            attr_path = os.path.join(root, "list_attr_celeba.txt")
        if landmark_path is None and root is not None:
            candidate = os.path.join(root, "list_landmarks_align_celeba.txt")
            landmark_path = candidate if os.path.exists(candidate) else None
        if partition_path is None and root is not None:
            candidate = os.path.join(root, "list_eval_partition.txt")
            partition_path = candidate if os.path.exists(candidate) else None

        table = parse_attribute_file(attr_path)
        ids = sorted(table.rows)
        if partition_path:
            part = parse_partition_file(partition_path)
            missing = [i for i in ids if i not in part]
            if missing:
                raise DataError(f"partition file lacks {len(missing)} ids, e.g. {missing[0]}")
            train_ids = [i for i in ids if part[i] != 2]
            test_ids = [i for i in ids if part[i] == 2]
        else:
            n_test = min(test_size, max(len(ids) - 1, 0))
            train_ids, test_ids = ids[: len(ids) - n_test], ids[len(ids) - n_test:]
        if limit:
            train_ids, test_ids = train_ids[:limit], test_ids[:limit]
        if check_files:
            present = set(os.listdir(image_dir))
            missing = [i for i in train_ids + test_ids if i not in present]
            if missing:
                raise DataError(f"{len(missing)} ids have no image in {image_dir}, e.g. {missing[0]}")
        return cls(
            image_dir=image_dir,
            attr_path=attr_path,
            landmark_path=landmark_path,
            train_ids=train_ids,
            test_ids=test_ids,
            _attributes=table,
            **kwargs,
        )

    @property
    def attributes(self) -> AttributeTable:
        if self._attributes is None:
            if not self.attr_path:
                raise ConfigError("dataset has no attribute file")
            self._attributes = parse_attribute_file(self.attr_path)
        return self._attributes

    @property
    def landmarks(self) -> LandmarkTable:
        if self._landmarks is None:
            if not self.landmark_path:
                raise ConfigError("landmark_box crop requires a landmark file")
            self._landmarks = parse_landmark_file(self.landmark_path)
        return self._landmarks

    def with_crop(self, crop: str) -> "DatasetSpec":
        from dataclasses import replace

        return replace(self, crop=crop)


# -- image preprocessing --------------------------------------------------


def center_crop_box(width: int, height: int, side: int = 148) -> Tuple[int, int, int, int]:
    """(left, top, right, bottom) of a centered ``side`` square."""
    side = min(side, width, height)
    left = (width - side) // 2
    top = (height - side) // 2
    return left, top, left + side, top + side


def landmark_crop_box(
    points: np.ndarray, width: int, height: int, margin: float = 0.4
) -> Tuple[int, int, int, int]:
    """Tight box around the landmarks, grown by ``margin`` times its width
    (horizontally) and height (vertically) on every side, clipped to the
    image."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    bw, bh = max(x1 - x0, 1.0), max(y1 - y0, 1.0)
    left = int(np.floor(max(x0 - margin * bw, 0)))
    top = int(np.floor(max(y0 - margin * bh, 0)))
    right = int(np.ceil(min(x1 + margin * bw, width)))
    bottom = int(np.ceil(min(y1 + margin * bh, height)))
    return left, top, right, bottom


def image_to_tensor(img: Image.Image) -> torch.Tensor:
    arr = np.asarray(img.convert("RGB"), dtype=np.float32) / 255.0
    return torch.from_numpy(arr.transpose(2, 0, 1).copy())


def tensor_to_image(t: torch.Tensor) -> Image.Image:
    arr = (t.detach().clamp(0, 1).cpu().numpy().transpose(1, 2, 0) * 255.0).round().astype(np.uint8)
    return Image.fromarray(arr)


def crop_and_resize(img: Image.Image, box: Tuple[int, int, int, int], side: int) -> torch.Tensor:
    out = img.convert("RGB").crop(box).resize((side, side), Image.BILINEAR)
    return image_to_tensor(out)


def prepare_image(img: Image.Image, side: int = 64, center_crop: int = 148) -> torch.Tensor:
    """Preprocess an arbitrary image: already-square images are only resized;
    others get the center crop first."""
    w, h = img.size
    if w == h:
        return crop_and_resize(img, (0, 0, w, h), side)
    return crop_and_resize(img, center_crop_box(w, h, center_crop), side)


def _load_one(spec: DatasetSpec, image_id: str) -> torch.Tensor:
    path = os.path.join(spec.image_dir, image_id)
    try:
        with Image.open(path) as img:
            img.load()
            w, h = img.size
            if spec.crop == "center_148":
                box = center_crop_box(w, h, spec.center_crop)
            else:
                if image_id not in spec.landmarks.rows:
                    raise DataError(f"no landmarks for {image_id}")
                box = landmark_crop_box(spec.landmarks.rows[image_id], w, h, spec.landmark_margin)
            return crop_and_resize(img, box, spec.image_side)
    except OSError as exc:
        raise DataError(f"cannot decode image {path}: {exc}") from exc


def load_and_preprocess(
    spec: DatasetSpec, ids: Sequence[str], pool: Optional[ThreadPoolExecutor] = None
) -> torch.Tensor:
    """Decode, crop and resize ``ids`` into a (B, 3, side, side) batch in [0, 1]."""
    if not ids:
        raise DataError("no ids to load")
    if pool is not None:
        images = list(pool.map(lambda i: _load_one(spec, i), ids))
    else:
        images = [_load_one(spec, i) for i in ids]
    return torch.stack(images)


def epoch_order(ids: Sequence[str], epoch_seed: int) -> List[str]:
    perm = np.random.default_rng(epoch_seed).permutation(len(ids))
    return [ids[i] for i in perm]


def batches(
    spec: DatasetSpec,
    batch_size: int,
    epoch_seed: int,
    ids: Optional[Sequence[str]] = None,
    skip: int = 0,
    prefetch: int = 2,
) -> Iterator[Tuple[torch.Tensor, List[str]]]:
    """One shuffled pass over ``ids`` (default: the train split).

    The final short batch is emitted. ``skip`` drops that many leading
    batches (used when resuming mid-epoch). With ``spec.workers > 0``,
    up to ``prefetch`` batches are decoded ahead but always yielded in
    shuffle order.
    """
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    ids = list(spec.train_ids if ids is None else ids)
    if not ids:
        raise DataError("empty dataset")
    order = epoch_order(ids, epoch_seed)
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)][skip:]
    if spec.workers <= 0:
        for chunk in chunks:
            yield load_and_preprocess(spec, chunk), chunk
        return
    with ThreadPoolExecutor(spec.workers) as pool, ThreadPoolExecutor(1) as ahead:
        pending = []
        for chunk in chunks:
            pending.append((ahead.submit(load_and_preprocess, spec, chunk, pool), chunk))
            if len(pending) > prefetch:
                fut, c = pending.pop(0)
                yield fut.result(), c
        for fut, c in pending:
            yield fut.result(), c
