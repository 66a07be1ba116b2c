"""Linear hinge-loss attribute classifiers over latent codes."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

import numpy as np

from .errors import ContractError, DataError


@dataclass
class LinearClassifier:
    """Decision function ``((x[keep] - mean) / std) @ weight + bias``."""

    weight: np.ndarray
    bias: float
    attribute_name: str
    mean: np.ndarray
    std: np.ndarray
    keep: np.ndarray  # boolean mask over input dims; zero-variance dims dropped
    lam: float
    epochs: int
    seed: int

    def decision_function(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)[:, self.keep]
        return ((x - self.mean) / self.std) @ self.weight + self.bias

    def predict(self, features: np.ndarray) -> np.ndarray:
        return np.where(self.decision_function(features) >= 0, 1, -1).astype(np.int8)

    @property
    def dropped_dims(self) -> List[int]:
        return [int(i) for i in np.flatnonzero(~self.keep)]


def _standardize(x: np.ndarray):
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    keep = std > 0
    return keep, mean[keep], std[keep]


def _pegasos(z: np.ndarray, y: np.ndarray, lam: float, epochs: int, seed: int) -> np.ndarray:
    """Stochastic subgradient descent on
    ``lam/2 |w|^2 + mean(max(0, 1 - y * z @ w))`` for every label column.

    ``z`` is (N, d) with a trailing constant column for the bias; ``y`` is
    (N, K). Every column sees the same seeded sample order, so each result
    equals training that column alone. Iterates are projected onto the ball
    of radius ``1/sqrt(lam)``, which contains the optimum, and the returned
    (K, d) weights average the second half of the iterates, which discards
    the very large early steps of the ``1/(lam t)`` schedule.
    """
    n, d = z.shape
    k = y.shape[1]
    w = np.zeros((k, d))
    w_sum = np.zeros((k, d))
    radius = 1.0 / np.sqrt(lam)
    total = n * epochs
    start = total // 2
    rng = np.random.default_rng(seed)
    t = 0
    for _ in range(epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (lam * t)
            yi = y[i]
            violated = yi * (w @ z[i]) < 1.0
            w *= 1.0 - eta * lam
            if violated.any():
                w[violated] += eta * np.outer(yi[violated], z[i])
            norms = np.linalg.norm(w, axis=1)
            over = norms > radius
            if over.any():
                w[over] *= (radius / norms[over])[:, None]
            if t > start:
                w_sum += w
    return w_sum / (total - start)


def train_attribute_classifiers(
    features: np.ndarray,
    labels: np.ndarray,
    names: Sequence[str],
    lam: float = 1e-4,
    epochs: int = 20,
    seed: int = 0,
) -> List[LinearClassifier]:
    """One classifier per label column of ``labels`` (N, K) in {-1, +1}."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if y.ndim == 1:
        y = y[:, None]
    if x.ndim != 2 or len(x) != len(y):
        raise ContractError(f"features {x.shape} and labels {y.shape} do not pair up")
    if y.shape[1] != len(names):
        raise ContractError(f"{y.shape[1]} label columns but {len(names)} names")
    if len(x) < 2:
        raise ContractError("need at least two training samples")
    if not np.isin(y, (-1.0, 1.0)).all():
        raise ContractError("labels must be -1 or +1")
    for j, name in enumerate(names):
        if len(np.unique(y[:, j])) < 2:
            raise ContractError(
                f"labels for {name!r} contain a single class; drop this attribute or add "
                "examples of the other class (no majority-vote fallback is provided)"
            )
    if lam <= 0 or epochs < 1:
        raise ContractError("lam must be positive and epochs >= 1")
    keep, mean, std = _standardize(x)
    z = np.hstack([(x[:, keep] - mean) / std, np.ones((len(x), 1))])
    w = _pegasos(z, y, lam, epochs, seed)
    return [
        LinearClassifier(w[j, :-1].copy(), float(w[j, -1]), name, mean, std, keep, lam, epochs, seed)
        for j, name in enumerate(names)
    ]


def train_linear_svm(
    features: np.ndarray,
    labels: np.ndarray,
    lam: float = 1e-4,
    epochs: int = 20,
    seed: int = 0,
    name: str = "attribute",
) -> LinearClassifier:
    return train_attribute_classifiers(features, np.asarray(labels).reshape(-1, 1), [name], lam, epochs, seed)[0]


@dataclass
class AccuracyReport:
    accuracies: Dict[str, float]  # percent

    @property
    def average(self) -> float:
        return float(np.mean(list(self.accuracies.values())))

    def to_csv(self, path: str) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["attribute", "accuracy"])
            for name, acc in self.accuracies.items():
                w.writerow([name, f"{acc:.4f}"])
            w.writerow(["Average", f"{self.average:.4f}"])

    @classmethod
    def from_csv(cls, path: str) -> "AccuracyReport":
        with open(path, newline="") as f:
            rows = list(csv.reader(f))[1:]
        return cls({r[0]: float(r[1]) for r in rows if r[0] != "Average"})


def accuracy(predicted: np.ndarray, truth: np.ndarray) -> float:
    predicted, truth = np.asarray(predicted), np.asarray(truth)
    if predicted.shape != truth.shape or predicted.size == 0:
        raise ContractError("predictions and labels must be nonempty and equally shaped")
    return float((predicted == truth).mean() * 100.0)


def evaluate(
    classifiers: Sequence[LinearClassifier],
    features: np.ndarray,
    labels: np.ndarray,
) -> AccuracyReport:
    """Accuracy (percent) of each classifier against the matching label column."""
    labels = np.asarray(labels)
    if labels.ndim == 1:
        labels = labels[:, None]
    if labels.shape[1] != len(classifiers):
        raise ContractError(f"{len(classifiers)} classifiers but {labels.shape[1]} label columns")
    return AccuracyReport(
        {c.attribute_name: accuracy(c.predict(features), labels[:, j]) for j, c in enumerate(classifiers)}
    )


def check_disjoint(train_ids: Sequence[str], test_ids: Sequence[str]) -> None:
    overlap = set(train_ids) & set(test_ids)
    if overlap:
        raise DataError(f"train and test ids overlap on {len(overlap)} ids, e.g. {min(overlap)}")


def save_classifiers(classifiers: Sequence[LinearClassifier], path: str) -> None:
    from .archive import save_archive

    tensors = {}
    for c in classifiers:
        p = c.attribute_name
        tensors[f"{p}.weight"] = c.weight
        tensors[f"{p}.bias"] = np.array([c.bias])
        tensors[f"{p}.mean"] = c.mean
        tensors[f"{p}.std"] = c.std
        tensors[f"{p}.keep"] = c.keep.astype(np.uint8)
    c0 = classifiers[0]
    meta = {
        "attributes": ",".join(c.attribute_name for c in classifiers),
        "lambda": repr(c0.lam), "epochs": str(c0.epochs), "seed": str(c0.seed),
    }
    save_archive(tensors, path, meta)


def load_classifiers(path: str) -> List[LinearClassifier]:
    from safetensors import safe_open
    from safetensors.numpy import load_file

    with safe_open(path, framework="np") as f:
        meta = f.metadata()
    t = load_file(path)
    out = []
    for name in meta["attributes"].split(","):
        out.append(
            LinearClassifier(
                t[f"{name}.weight"], float(t[f"{name}.bias"][0]), name, t[f"{name}.mean"],
                t[f"{name}.std"], t[f"{name}.keep"].astype(bool), float(meta["lambda"]),
                int(meta["epochs"]), int(meta["seed"]),
            )
        )
    return out


def predict_attributes_pipeline(
    encoder,
    data,
    names: Optional[Sequence[str]] = None,
    lam: float = 1e-4,
    epochs: int = 20,
    seed: int = 0,
    train_ids: Optional[Sequence[str]] = None,
    test_ids: Optional[Sequence[str]] = None,
):
    """Encode landmark-cropped faces, train one classifier per attribute on
    the train split and score it on the disjoint test split."""
    from .latent import encode_ids

    train_ids = list(data.train_ids if train_ids is None else train_ids)
    test_ids = list(data.test_ids if test_ids is None else test_ids)
    check_disjoint(train_ids, test_ids)
    table = data.attributes
    names = list(table.attribute_names if names is None else names)
    cols = [table.attribute_names.index(n) for n in names]
    crop_data = data.with_crop("landmark_box") if data.landmark_path else data
    x_train = encode_ids(encoder, crop_data, train_ids)
    x_test = encode_ids(encoder, crop_data, test_ids)
    y_train = table.matrix(train_ids)[:, cols]
    y_test = table.matrix(test_ids)[:, cols]
    classifiers = train_attribute_classifiers(x_train, y_train, names, lam, epochs, seed)
    return classifiers, evaluate(classifiers, x_test, y_test)
