"""Synthetic CelebA-layout fixtures.

Writes ``img_align_celeba/``, ``list_attr_celeba.txt`` and
``list_landmarks_align_celeba.txt`` for procedurally drawn 178x218 faces.
Several attributes (Eyeglasses, Male, Smiling, hair colour, Bald,
Wearing_Hat, lipstick) change what is drawn, so latent codes carry real
signal about them; the rest are random labels. Used for tests and smoke
runs where the real dataset is unavailable.
"""

from __future__ import annotations

import os

import numpy as np
from PIL import Image, ImageDraw, ImageFilter

from .data import ALIGNED_SIZE, CELEBA_ATTRIBUTES, LANDMARK_NAMES

IMAGE_DIR = "img_align_celeba"
ATTR_FILE = "list_attr_celeba.txt"
LANDMARK_FILE = "list_landmarks_align_celeba.txt"

_HAIR = {
    "Black_Hair": (25, 20, 18),
    "Blond_Hair": (220, 190, 110),
    "Brown_Hair": (110, 70, 40),
    "Gray_Hair": (170, 170, 170),
}


def sample_attributes(rng: np.random.Generator) -> dict:
    a = {name: rng.random() < 0.3 for name in CELEBA_ATTRIBUTES}
    a["Male"] = rng.random() < 0.45
    a["Eyeglasses"] = rng.random() < 0.35
    a["Smiling"] = rng.random() < 0.5
    a["Young"] = rng.random() < 0.7
    hair = rng.choice(list(_HAIR))
    for h in _HAIR:
        a[h] = h == hair
    if a["Male"]:
        a["Heavy_Makeup"] = a["Wearing_Lipstick"] = False
        a["No_Beard"] = rng.random() < 0.6
    else:
        a["No_Beard"] = True
        a["Goatee"] = a["Mustache"] = a["Bald"] = a["Sideburns"] = False
        a["Heavy_Makeup"] = rng.random() < 0.5
        a["Wearing_Lipstick"] = a["Heavy_Makeup"] or rng.random() < 0.3
    if a["Bald"]:
        a["Bangs"] = False
    return a


def draw_face(attrs: dict, rng: np.random.Generator):
    """Return (PIL image, (5, 2) landmark array)."""
    w, h = ALIGNED_SIZE
    bg = tuple(int(v) for v in rng.integers(30, 230, size=3))
    img = Image.new("RGB", (w, h), bg)
    d = ImageDraw.Draw(img)

    dx, dy = rng.integers(-4, 5, size=2)
    cx, cy = 89 + dx, 125 + dy
    face_w = 34 if attrs["Male"] else 30
    skin = np.array([225, 190, 160]) if attrs["Pale_Skin"] else np.array([200, 150, 115])
    skin = tuple(int(v) for v in np.clip(skin + rng.integers(-15, 16, size=3), 0, 255))
    hair = next(c for k, c in _HAIR.items() if attrs[k])

    if not attrs["Bald"]:
        d.ellipse([cx - face_w - 10, cy - 62, cx + face_w + 10, cy + (10 if attrs["Male"] else 45)], fill=hair)
    d.ellipse([cx - face_w, cy - 48, cx + face_w, cy + 50], fill=skin)
    if attrs["Bangs"]:
        d.rectangle([cx - face_w + 4, cy - 46, cx + face_w - 4, cy - 28], fill=hair)
    if attrs["Wearing_Hat"]:
        hat = tuple(int(v) for v in rng.integers(0, 255, size=3))
        d.rectangle([cx - face_w - 14, cy - 72, cx + face_w + 14, cy - 38], fill=hat)

    eye_y = cy - 14 + int(rng.integers(-2, 3))
    left_eye = (cx - 19, eye_y)
    right_eye = (cx + 19, eye_y)
    nose = (cx + int(rng.integers(-2, 3)), cy + 9)
    mouth_y = cy + 27
    mw = 17 if attrs["Smiling"] else 13
    left_mouth = (cx - mw, mouth_y)
    right_mouth = (cx + mw, mouth_y)

    for ex, ey in (left_eye, right_eye):
        d.ellipse([ex - 6, ey - 3, ex + 6, ey + 3], fill=(245, 245, 245))
        d.ellipse([ex - 3, ey - 3, ex + 3, ey + 3], fill=(40, 30, 20))
    if attrs["Eyeglasses"]:
        for ex, ey in (left_eye, right_eye):
            d.rectangle([ex - 11, ey - 8, ex + 11, ey + 8], outline=(10, 10, 10), width=3)
        d.line([left_eye[0] + 11, eye_y, right_eye[0] - 11, eye_y], fill=(10, 10, 10), width=3)
    d.line([nose[0], nose[1] - 12, nose[0] - 3, nose[1]], fill=(120, 80, 60), width=2)

    lip = (190, 20, 40) if attrs["Wearing_Lipstick"] else (150, 80, 70)
    if attrs["Smiling"]:
        d.arc([left_mouth[0], mouth_y - 10, right_mouth[0], mouth_y + 8], 10, 170, fill=lip, width=4)
    else:
        d.line([left_mouth, right_mouth], fill=lip, width=4)
    if attrs["Mouth_Slightly_Open"]:
        d.ellipse([cx - 5, mouth_y - 1, cx + 5, mouth_y + 5], fill=(60, 20, 20))
    if attrs["Male"] and not attrs["No_Beard"]:
        d.chord([cx - face_w, cy + 10, cx + face_w, cy + 52], 0, 180, fill=tuple(int(v * 0.6) for v in hair))
    if attrs["Mustache"]:
        d.rectangle([cx - 12, mouth_y - 9, cx + 12, mouth_y - 5], fill=hair)
    if not attrs["Young"]:
        d.line([cx - 14, cy - 30, cx + 14, cy - 30], fill=(140, 100, 80), width=1)

    if attrs["Blurry"]:
        img = img.filter(ImageFilter.GaussianBlur(1.5))
    noise = rng.normal(0, 6, size=(h, w, 3))
    arr = np.clip(np.asarray(img, dtype=np.float64) + noise, 0, 255).astype(np.uint8)
    landmarks = np.array([left_eye, right_eye, nose, left_mouth, right_mouth], dtype=np.int64)
    return Image.fromarray(arr), landmarks


def make_celeba_fixture(root: str, n: int, seed: int = 0, ext: str = "jpg") -> str:
    """Write ``n`` synthetic images and annotation files under ``root``."""
    rng = np.random.default_rng(seed)
    image_dir = os.path.join(root, IMAGE_DIR)
    os.makedirs(image_dir, exist_ok=True)
    attr_lines = [str(n), " ".join(CELEBA_ATTRIBUTES)]
    lm_lines = [str(n), " ".join(LANDMARK_NAMES)]
    for k in range(1, n + 1):
        image_id = f"{k:06d}.{ext}"
        attrs = sample_attributes(rng)
        img, lm = draw_face(attrs, rng)
        if ext == "jpg":
            img.save(os.path.join(image_dir, image_id), quality=95)
        else:
            img.save(os.path.join(image_dir, image_id))
        attr_lines.append(image_id + " " + " ".join(" 1" if attrs[a] else "-1" for a in CELEBA_ATTRIBUTES))
        lm_lines.append(image_id + " " + " ".join(str(int(v)) for v in lm.reshape(-1)))
    with open(os.path.join(root, ATTR_FILE), "w") as f:
        f.write("\n".join(attr_lines) + "\n")
    with open(os.path.join(root, LANDMARK_FILE), "w") as f:
        f.write("\n".join(lm_lines) + "\n")
    return root
