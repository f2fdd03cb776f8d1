"""Datasets: synthetic sinusoid mixtures, CSV ingestion, scaling and splitting."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from isvae.spectral import ValidationError, dct2_batch

# Frequencies (Hz) of the cosine components in each of the eight synthetic clusters.
CLUSTER_FREQS: list[list[float]] = [
    [80, 130, 495],
    [180, 390, 596],
    [80, 130, 230, 390],
    [130, 230, 430, 530],
    [80, 180, 315, 495],
    [230, 390, 495, 596],
    [180, 230, 430, 530],
    [80, 315, 495, 596],
]


@dataclass
class Dataset:
    signals: np.ndarray
    labels: np.ndarray | None = None
    domain: str = "time"
    name: str = ""

    def __post_init__(self):
        self.signals = np.asarray(self.signals, dtype=np.float64)
        if self.signals.ndim != 2 or self.signals.shape[0] < 1:
            raise ValidationError(f"signals must be an (N>=1, D) matrix, got {self.signals.shape}")
        if self.domain not in ("time", "spectrum"):
            raise ValidationError(f"unknown domain {self.domain!r}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.signals.shape[0],):
                raise ValidationError("labels must have one entry per signal")
            if np.any(self.labels < 0):
                raise ValidationError("labels must be nonnegative")

    def __len__(self) -> int:
        return self.signals.shape[0]

    @property
    def D(self) -> int:
        return self.signals.shape[1]

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.intp)
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.signals[idx], labels, self.domain, self.name)


@dataclass
class SyntheticSpec:
    n_signals: int = 1000
    length_d: int = 600
    sampling_freq: float = 600.0
    cluster_freqs: list[list[float]] = field(default_factory=lambda: [list(f) for f in CLUSTER_FREQS])
    noise_mean: float = 0.05
    noise_var: float = 0.25
    seed: int = 0

    def validate(self) -> None:
        n_clusters = len(self.cluster_freqs)
        if n_clusters < 1 or any(len(f) == 0 for f in self.cluster_freqs):
            raise ValidationError("every cluster needs at least one frequency")
        if self.n_signals < 1 or self.n_signals % n_clusters:
            raise ValidationError(f"n_signals={self.n_signals} is not divisible by {n_clusters} clusters")
        if self.length_d < 2 or self.sampling_freq <= 0 or self.noise_var < 0:
            raise ValidationError("invalid length, sampling frequency or noise variance")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> SyntheticSpec:
        return cls(**json.loads(text))


@dataclass
class SplitSpec:
    train_frac: float = 0.75
    test_frac: float = 0.125
    val_frac: float = 0.125
    seed: int = 0

    def validate(self) -> None:
        if abs(self.train_frac + self.test_frac + self.val_frac - 1.0) > 1e-9:
            raise ValidationError("split fractions must sum to 1")
        if min(self.train_frac, self.test_frac, self.val_frac) < 0:
            raise ValidationError("split fractions must be nonnegative")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> SplitSpec:
        return cls(**json.loads(text))


def cluster_prototypes(spec: SyntheticSpec) -> np.ndarray:
    """Noise-free signal of each cluster, shape (n_clusters, length_d)."""
    n = np.arange(spec.length_d, dtype=np.float64)
    return np.stack(
        [
            np.sum([np.cos(2 * np.pi * f * n / spec.sampling_freq) for f in freqs], axis=0)
            for freqs in spec.cluster_freqs
        ]
    )


def generate_synthetic(spec: SyntheticSpec | None = None) -> Dataset:
    """Sinusoid-mixture signals, evenly allocated to clusters, plus i.i.d. Gaussian noise.

    Noise is drawn per sample with mean ``noise_mean`` and variance ``noise_var``.
    Signals are ordered by cluster; labels are 0-based.
    """
    spec = spec or SyntheticSpec()
    spec.validate()
    protos = cluster_prototypes(spec)
    per_cluster = spec.n_signals // len(protos)
    labels = np.repeat(np.arange(len(protos)), per_cluster)
    rng = np.random.default_rng(spec.seed)
    noise = rng.normal(spec.noise_mean, np.sqrt(spec.noise_var), size=(spec.n_signals, spec.length_d))
    return Dataset(protos[labels] + noise, labels, "time", "synthetic")


def to_spectrum(dataset: Dataset, norm: str | None = None) -> Dataset:
    """Row-wise DCT-II.

    ``norm="ortho"`` multiplies the coefficients by ``sqrt(2/D)``, which keeps
    spectra of unit-variance signals at unit scale.
    """
    if dataset.domain != "time":
        raise ValidationError("dataset is already in the spectral domain")
    spectra = dct2_batch(dataset.signals)
    if norm == "ortho":
        spectra *= np.sqrt(2.0 / dataset.D)
    elif norm is not None:
        raise ValidationError(f"unknown spectrum normalization {norm!r}")
    return Dataset(spectra, dataset.labels, "spectrum", dataset.name)


@dataclass
class StandardScaler:
    mean: np.ndarray
    std: np.ndarray

    STD_FLOOR = 1e-8

    @classmethod
    def fit(cls, x: np.ndarray) -> StandardScaler:
        x = np.asarray(x, dtype=np.float64)
        std = x.std(axis=0)
        return cls(x.mean(axis=0), np.where(std < cls.STD_FLOOR, 1.0, std))

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse_transform(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=np.float64) * self.std + self.mean


def standard_scale(train: Dataset, others: list[Dataset] = ()) -> tuple[Dataset, list[Dataset], StandardScaler]:
    """Standardize every dataset with statistics computed on ``train`` only."""
    for ds in others:
        if ds.D != train.D:
            raise ValidationError(f"dimension mismatch: {ds.D} vs {train.D}")
    scaler = StandardScaler.fit(train.signals)
    scaled = [replace(ds, signals=scaler.transform(ds.signals)) for ds in others]
    return replace(train, signals=scaler.transform(train.signals)), scaled, scaler


def split_sizes(n: int, spec: SplitSpec) -> tuple[int, int, int]:
    n_val = int(round(n * spec.val_frac))
    n_test = int(round(n * spec.test_frac))
    return n - n_val - n_test, n_val, n_test


def split_indices(n: int, spec: SplitSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    spec.validate()
    if n < 8:
        raise ValidationError(f"need at least 8 rows to split, got {n}")
    n_train, n_val, _ = split_sizes(n, spec)
    perm = np.random.default_rng(spec.seed).permutation(n)
    return perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]


def split(dataset: Dataset, spec: SplitSpec | None = None) -> tuple[Dataset, Dataset, Dataset]:
    """Shuffled (train, val, test) partition; rounding remainders go to train."""
    tr, va, te = split_indices(len(dataset), spec or SplitSpec())
    return dataset.subset(tr), dataset.subset(va), dataset.subset(te)


def read_csv(path, name: str | None = None) -> Dataset:
    """Read ``x0,...,x{D-1}[,label]`` rows into a time-domain dataset."""
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [r for r in reader if r]
    has_label = header[-1].strip() == "label"
    n_feat = len(header) - int(has_label)
    expected = [f"x{i}" for i in range(n_feat)]
    if [h.strip() for h in header[:n_feat]] != expected:
        raise ValidationError(f"{path}: header must be x0..x{n_feat - 1}[,label]")
    if any(len(r) != len(header) for r in rows):
        raise ValidationError(f"{path}: ragged rows")
    data = np.array([[float(v) for v in r[:n_feat]] for r in rows], dtype=np.float64)
    labels = None
    if has_label:
        labels = np.array([int(r[-1]) for r in rows], dtype=np.int64)
    return Dataset(data, labels, "time", name or path.stem)


def write_csv(dataset: Dataset, path) -> None:
    path = Path(path)
    header = [f"x{i}" for i in range(dataset.D)]
    if dataset.labels is not None:
        header.append("label")
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for i, row in enumerate(dataset.signals):
            vals = [repr(float(v)) for v in row]
            if dataset.labels is not None:
                vals.append(str(int(dataset.labels[i])))
            w.writerow(vals)
