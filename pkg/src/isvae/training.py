"""ELBO optimization, the filter-centre stability stopping rule, per-epoch
traces and feature extraction from trained checkpoints."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from isvae.clustering import kmeans
from isvae.datagen import Dataset
from isvae.metrics import v_measure
from isvae.model import Checkpoint, ISVAE, ModelConfig, build_model, elbo
from isvae.spectral import ValidationError, band_energies, mean_periodogram

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 300
    batch_size: int = 64
    learning_rate: float = 1e-3
    seed: int = 0
    stop_window: int = 30
    stop_tol: float = 0.02
    log_every: int = 10
    stop_early: bool = False
    kl_warmup_epochs: int = 30
    dtype: str = "float32"

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate <= 0 or self.stop_window < 2:
            raise ValidationError("invalid training configuration")


@dataclass
class EpochRecord:
    epoch: int
    elbo: float
    recon: float
    kl: float
    f0_mean: np.ndarray
    f0_class_mean: np.ndarray | None = None  # (n_classes, J)
    val_vscore: float | None = None


@dataclass
class TrainingTrace:
    records: list[EpochRecord] = field(default_factory=list)
    classes: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.records)

    def f0_means(self) -> np.ndarray:
        return np.array([r.f0_mean for r in self.records])

    def val_vscores(self) -> np.ndarray:
        return np.array([np.nan if r.val_vscore is None else r.val_vscore for r in self.records])

    def write_csv(self, path) -> None:
        if not self.records:
            return
        J = 0 if self.records[0].f0_mean is None else len(self.records[0].f0_mean)
        has_val = any(r.val_vscore is not None for r in self.records)
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "elbo", "recon", "kl", *(f"f0_mean_{j}" for j in range(J))] + (["val_vscore"] if has_val else []))
            for r in self.records:
                row = [r.epoch, repr(r.elbo), repr(r.recon), repr(r.kl), *(repr(float(v)) for v in (r.f0_mean if J else ()))]
                if has_val:
                    row.append("" if r.val_vscore is None else repr(r.val_vscore))
                w.writerow(row)

    def write_class_csv(self, path) -> bool:
        """Per-class filter-centre evolution; returns False when no labels were seen."""
        if not self.records or self.records[0].f0_class_mean is None:
            return False
        J = len(self.records[0].f0_mean)
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "class", *(f"f0_mean_{j}" for j in range(J))])
            for r in self.records:
                for cls, row in zip(self.classes, r.f0_class_mean):
                    w.writerow([r.epoch, int(cls), *(repr(float(v)) for v in row)])
        return True


def should_stop(trace, window: int, tol: float) -> bool:
    """True when every filter's dataset-mean centre has varied by less than
    ``tol`` (max - min) over the last ``window`` epochs."""
    means = trace.f0_means() if isinstance(trace, TrainingTrace) else np.asarray(trace)
    if len(means) < window:
        return False
    tail = means[-window:]
    return bool(np.max(tail.max(axis=0) - tail.min(axis=0)) < tol)


def stop_epoch(trace: TrainingTrace, window: int, tol: float) -> int | None:
    """First epoch (1-based) at which :func:`should_stop` fires."""
    means = trace.f0_means()
    for e in range(window, len(means) + 1):
        if should_stop(means[:e], window, tol):
            return e
    return None


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    trace: TrainingTrace
    best_checkpoint: Checkpoint | None = None
    best_epoch: int | None = None
    stop_epoch: int | None = None
    stop_checkpoint: Checkpoint | None = None

    def __iter__(self):
        return iter((self.checkpoint, self.trace))


def _dtype(name: str) -> torch.dtype:
    return {"float32": torch.float32, "float64": torch.float64}[name]


@torch.no_grad()
def compute_f0(model: ISVAE, spectra: np.ndarray, batch_size: int = 512) -> np.ndarray:
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(spectra, dtype=dtype)
    out = [model.filter_bank(x[i : i + batch_size]).f0 for i in range(0, len(x), batch_size)]
    return torch.cat(out).double().numpy()


@torch.no_grad()
def compute_latent_mean(model, spectra: np.ndarray) -> np.ndarray:
    dtype = next(model.parameters()).dtype
    x = torch.as_tensor(spectra, dtype=dtype)
    f = model.filter_bank(x).f0 if isinstance(model, ISVAE) else x
    return model.encoder(f).mean.double().numpy()


def validation_vscore(f0: np.ndarray, labels: np.ndarray, seed: int = 0) -> float:
    k = len(np.unique(labels))
    pred = kmeans(f0, k, seed=seed, n_init=4).labels
    return v_measure(labels, pred)


def train(
    model_config: ModelConfig,
    train_config: TrainConfig,
    train_set: Dataset,
    val_set: Dataset | None = None,
    variant: str = "isvae",
    callback=None,
) -> TrainResult:
    """Minimize the negative ELBO with Adam.

    ``variant="vae"`` trains the full-spectrum baseline instead (no filter
    bank, so no f0 statistics are recorded; its validation V-score uses the
    posterior mean of z). For the attentive decoder the
    mean periodogram is computed from ``train_set`` only and frozen.
    ``callback(epoch, model, record)`` runs after each epoch's bookkeeping.
    """
    if train_set.domain != "spectrum" or (val_set is not None and val_set.domain != "spectrum"):
        raise ValidationError("training requires spectral-domain datasets")
    if train_set.D != model_config.D:
        raise ValidationError(f"dataset D={train_set.D} does not match model D={model_config.D}")
    dtype = _dtype(train_config.dtype)
    seed = train_config.seed

    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = build_model(model_config, variant).to(dtype)
    is_fb = isinstance(model, ISVAE)
    if is_fb:
        model.set_periodogram(mean_periodogram(train_set.signals))

    gen = torch.Generator().manual_seed(seed + 1)
    opt = torch.optim.Adam(model.parameters(), lr=train_config.learning_rate)
    x_all = torch.as_tensor(train_set.signals, dtype=dtype)
    n = x_all.shape[0]

    classes = None if train_set.labels is None else np.unique(train_set.labels)
    use_val = val_set is not None and val_set.labels is not None
    trace = TrainingTrace(classes=classes if is_fb else None)
    result = TrainResult(Checkpoint.from_model(model, variant), trace)
    best_v = -math.inf

    for epoch in range(1, train_config.epochs + 1):
        # KL weight ramps linearly to 1; the recorded ELBO is always unweighted
        beta = min(1.0, epoch / train_config.kl_warmup_epochs) if train_config.kl_warmup_epochs else 1.0
        model.train()
        perm = torch.randperm(n, generator=gen)
        sums = np.zeros(3)
        for b, start in enumerate(range(0, n, train_config.batch_size)):
            xb = x_all[perm[start : start + train_config.batch_size]]
            noise = torch.randn((xb.shape[0], model_config.K), generator=gen, dtype=dtype)
            out = model(xb, noise)
            terms = elbo(xb, out.mean_xhat, out.post, model_config.nu)
            loss = -(terms.recon_loglik - beta * terms.kl).mean()
            if not torch.isfinite(loss):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {b}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            m = xb.shape[0]
            sums += m * np.array([terms.elbo.mean().item(), terms.recon_loglik.mean().item(), terms.kl.mean().item()])
        sums /= n

        model.eval()
        f0_mean = class_mean = val_v = None
        if is_fb:
            f0 = compute_f0(model, train_set.signals)
            f0_mean = f0.mean(axis=0)
            if classes is not None:
                class_mean = np.stack([f0[train_set.labels == c].mean(axis=0) for c in classes])
            if use_val:
                val_v = validation_vscore(compute_f0(model, val_set.signals), val_set.labels, seed)
        elif use_val:
            val_v = validation_vscore(compute_latent_mean(model, val_set.signals), val_set.labels, seed)
        rec = EpochRecord(epoch, float(sums[0]), float(sums[1]), float(sums[2]), f0_mean, class_mean, val_v)
        trace.records.append(rec)

        if val_v is not None and val_v > best_v:
            best_v = val_v
            result.best_checkpoint = Checkpoint.from_model(model, variant)
            result.best_epoch = epoch
        if is_fb and result.stop_epoch is None and should_stop(trace, train_config.stop_window, train_config.stop_tol):
            result.stop_epoch = epoch
            result.stop_checkpoint = Checkpoint.from_model(model, variant)
        if callback is not None:
            callback(epoch, model, rec)
        if train_config.log_every and epoch % train_config.log_every == 0:
            log.info("epoch %d elbo %.4g kl %.4g val_v %s", epoch, rec.elbo, rec.kl, val_v)
        if train_config.stop_early and result.stop_epoch is not None:
            break

    result.checkpoint = Checkpoint.from_model(model, variant)
    return result


@dataclass
class Features:
    f0: np.ndarray | None  # (N, J)
    z: np.ndarray  # (N, K)
    extended: np.ndarray | None  # (N, 2J)


@torch.no_grad()
def extract_features(checkpoint: Checkpoint, dataset: Dataset, seed: int = 0, z_mode: str = "sample") -> Features:
    """Basic f0, latent z (one posterior sample per signal, or the mean) and
    the extended configuration [f0, band energies]. Parameters are not touched."""
    if dataset.domain != "spectrum":
        raise ValidationError("feature extraction requires a spectral-domain dataset")
    cfg = checkpoint.config
    if dataset.D != cfg.D:
        raise ValidationError(f"dataset D={dataset.D} does not match model D={cfg.D}")
    model = checkpoint.to_model(torch.float64).eval()
    x = torch.as_tensor(dataset.signals, dtype=torch.float64)
    gen = torch.Generator().manual_seed(seed)
    if isinstance(model, ISVAE):
        f0_t = model.filter_bank(x).f0
        post = model.encoder(f0_t)
        f0 = f0_t.numpy()
        extended = np.concatenate([f0, band_energies(dataset.signals, f0, cfg.sigma)], axis=1)
    else:
        post = model.encoder(x)
        f0 = extended = None
    if z_mode == "mean":
        z = post.mean
    else:
        noise = torch.randn(post.mean.shape, generator=gen, dtype=torch.float64)
        z = post.mean + torch.exp(0.5 * post.log_var) * noise
    return Features(f0, z.numpy(), extended)
