"""Latent-space tools: interpolation, attribute vectors and their arithmetic,
correlation between attribute vectors, and embedding export.

All operations use the posterior mean as "the" latent code of an image.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence

import numpy as np

from .archive import save_archive
from .data import DatasetSpec, load_and_preprocess, tensor_to_image
from .errors import ContractError, DataError
from .model import Encoder, encode


@dataclass
class AttributeVector:
    name: str
    vector: np.ndarray
    n_pos: int
    n_neg: int

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if not np.isfinite(self.vector).all():
            raise ContractError(f"attribute vector {self.name!r} is not finite")
        if self.n_pos < 1 or self.n_neg < 1:
            raise ContractError("attribute vector needs at least one positive and one negative")

    def save(self, path: str) -> None:
        save_archive(
            {"vector": self.vector},
            path,
            {"name": self.name, "n_pos": str(self.n_pos), "n_neg": str(self.n_neg)},
        )

    @classmethod
    def load(cls, path: str) -> "AttributeVector":
        from safetensors import safe_open
        from safetensors.numpy import load_file

        with safe_open(path, framework="np") as f:
            meta = f.metadata() or {}
        vec = load_file(path)["vector"]
        return cls(meta.get("name", os.path.basename(path)), vec, int(meta["n_pos"]), int(meta["n_neg"]))


def interpolate(z_left, z_right, alphas: Iterable[float]) -> List[np.ndarray]:
    """``(1 - a) * z_left + a * z_right`` for each ``a``."""
    left = np.asarray(z_left, dtype=np.float64)
    right = np.asarray(z_right, dtype=np.float64)
    if left.shape != right.shape:
        raise ContractError(f"latent shapes differ: {left.shape} vs {right.shape}")
    out = []
    for a in alphas:
        # exact endpoints regardless of rounding in the affine blend
        if a == 0:
            out.append(left.copy())
        elif a == 1:
            out.append(right.copy())
        else:
            out.append((1.0 - a) * left + a * right)
    return out


def alpha_steps(start: float, stop: float, step: float) -> List[float]:
    """Inclusive range, e.g. ``alpha_steps(0, 1, 0.1)`` gives 11 values."""
    if step == 0:
        raise ContractError("step must be nonzero")
    n = int(round((stop - start) / step))
    return [round(start + i * step, 12) for i in range(n + 1)]


def attribute_vector_from_latents(
    name: str, pos_latents: np.ndarray, neg_latents: np.ndarray
) -> AttributeVector:
    pos = np.asarray(pos_latents, dtype=np.float64)
    neg = np.asarray(neg_latents, dtype=np.float64)
    if len(pos) == 0 or len(neg) == 0:
        raise ContractError("both positive and negative sets must be nonempty")
    return AttributeVector(name, pos.mean(axis=0) - neg.mean(axis=0), len(pos), len(neg))


def encode_ids(
    encoder: Encoder, data: DatasetSpec, ids: Sequence[str], batch_size: int = 256
) -> np.ndarray:
    """Posterior means for ``ids`` (eval mode), shape (len(ids), latent_dim)."""
    if not ids:
        raise DataError("no ids to encode")
    dtype = next(encoder.parameters()).dtype
    chunks = []
    for i in range(0, len(ids), batch_size):
        x = load_and_preprocess(data, ids[i:i + batch_size]).to(dtype)
        mu, _ = encode(encoder, x, mode="eval")
        chunks.append(mu.double().numpy())
    return np.concatenate(chunks)


def attribute_vector(
    encoder: Encoder,
    pos_ids: Sequence[str],
    neg_ids: Sequence[str],
    data: DatasetSpec,
    name: str,
) -> AttributeVector:
    """Mean latent of ``pos_ids`` minus mean latent of ``neg_ids``."""
    if not pos_ids or not neg_ids:
        raise ContractError("both positive and negative id lists must be nonempty")
    return attribute_vector_from_latents(
        name, encode_ids(encoder, data, list(pos_ids)), encode_ids(encoder, data, list(neg_ids))
    )


def select_attribute_ids(
    data: DatasetSpec,
    attribute: str,
    n: int,
    seed: int,
    pool: Optional[Sequence[str]] = None,
):
    """Draw up to ``n`` ids with the attribute (+1) and ``n`` without (-1),
    uniformly without replacement."""
    pool = list(data.train_ids if pool is None else pool)
    labels = data.attributes.column(attribute, pool)
    rng = np.random.default_rng(seed)
    pos = [pool[i] for i in np.flatnonzero(labels == 1)]
    neg = [pool[i] for i in np.flatnonzero(labels == -1)]
    if not pos or not neg:
        raise DataError(f"attribute {attribute!r} has no positive or no negative examples")
    pos = [pos[i] for i in sorted(rng.choice(len(pos), min(n, len(pos)), replace=False))]
    neg = [neg[i] for i in sorted(rng.choice(len(neg), min(n, len(neg)), replace=False))]
    return pos, neg


def apply_attribute(z, attr: AttributeVector, alphas: Iterable[float]) -> List[np.ndarray]:
    """``z + a * attr.vector`` for each ``a``; negative ``a`` subtracts."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape != attr.vector.shape:
        raise ContractError(f"latent shape {z.shape} vs attribute vector {attr.vector.shape}")
    return [z + a * attr.vector for a in alphas]


@dataclass
class CorrelationMatrix:
    names: List[str]
    values: np.ndarray

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["attribute", *self.names])
            for name, row in zip(self.names, self.values):
                w.writerow([name, *(repr(float(v)) for v in row)])


def pearson_correlation(attrs: Sequence[AttributeVector]) -> CorrelationMatrix:
    """Pairwise Pearson coefficients, treating each vector's components as
    paired samples."""
    if len(attrs) < 2:
        raise ContractError("need at least two attribute vectors")
    dims = {a.vector.shape for a in attrs}
    if len(dims) != 1:
        raise ContractError(f"attribute vectors have different shapes: {sorted(dims)}")
    m = np.stack([a.vector for a in attrs])
    centered = m - m.mean(axis=1, keepdims=True)
    norms = np.sqrt((centered**2).sum(axis=1))
    for a, nrm in zip(attrs, norms):
        if nrm == 0:
            raise ContractError(f"attribute vector {a.name!r} has zero variance")
    unit = centered / norms[:, None]
    values = np.clip(unit @ unit.T, -1.0, 1.0)
    values = (values + values.T) / 2
    np.fill_diagonal(values, 1.0)
    return CorrelationMatrix([a.name for a in attrs], values)


def export_embedding_inputs(
    encoder: Encoder,
    ids: Sequence[str],
    data: DatasetSpec,
    out_dir: str,
    thumbnails: bool = True,
) -> str:
    """Write ``latents.csv`` (image_id plus one column per latent dim) and a
    ``thumbnails/`` directory of the preprocessed inputs. Returns the CSV path."""
    ids = list(ids)
    if not ids:
        raise DataError("refusing to export an empty id list")
    latents = encode_ids(encoder, data, ids)
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "latents.csv")
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["image_id", *(f"mu_{j}" for j in range(latents.shape[1]))])
        for image_id, row in zip(ids, latents):
            w.writerow([image_id, *(repr(float(v)) for v in row)])
    if thumbnails:
        thumb_dir = os.path.join(out_dir, "thumbnails")
        os.makedirs(thumb_dir, exist_ok=True)
        for i in range(0, len(ids), 256):
            chunk = ids[i:i + 256]
            for image_id, img in zip(chunk, load_and_preprocess(data, chunk)):
                stem = os.path.splitext(image_id)[0]
                tensor_to_image(img).save(os.path.join(thumb_dir, f"{stem}.png"))
    return path


def read_embedding_csv(path: str):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    ids = [r[0] for r in rows[1:]]
    return ids, np.array([[float(v) for v in r[1:]] for r in rows[1:]])
