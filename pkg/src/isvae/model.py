"""The filter-bank VAE: sequential attentive Gaussian filter bank, Gaussian
encoder on the filter centres, vanilla or attentive decoder, and ELBO terms.
A plain VAE over the full spectrum is included as a baseline.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import torch
from torch import nn

from isvae.spectral import ValidationError

LOG_VAR_CLAMP = 10.0


@dataclass
class ModelConfig:
    D: int
    J: int = 2
    sigma: float = 15.0
    K: int = 2
    decoder_kind: str = "vanilla"
    cnn_channels: int = 3
    cnn_kernel: int = 3
    attention_hidden: list[int] = field(default_factory=lambda: [36, 20, 10])
    encoder_hidden: list[int] = field(default_factory=lambda: [32, 32])
    decoder_hidden: list[int] = field(default_factory=lambda: [70, 150, 300])
    nu: float = 1.0

    def __post_init__(self):
        if self.J < 1 or self.K < 1 or self.D < 4:
            raise ValidationError("need J >= 1, K >= 1, D >= 4")
        if self.sigma <= 0 or self.nu <= 0:
            raise ValidationError("sigma and nu must be positive")
        if self.decoder_kind not in ("vanilla", "attentive"):
            raise ValidationError(f"unknown decoder kind {self.decoder_kind!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ModelConfig:
        return cls(**d)


# Hidden layer sizes per dataset family.
PRESETS = {
    "synthetic": dict(attention_hidden=[36, 20, 10], decoder_hidden=[70, 150, 300]),
    "har": dict(attention_hidden=[6, 5], decoder_hidden=[50]),
    "active_har": dict(attention_hidden=[6, 5], decoder_hidden=[20, 40, 80]),
    "soda": dict(attention_hidden=[5, 5], decoder_hidden=[20, 40, 80]),
}


def preset_config(name: str, D: int, **overrides) -> ModelConfig:
    return ModelConfig(D=D, **{**PRESETS[name], **overrides})


def mlp(sizes: list[int], out_act: nn.Module | None = None) -> nn.Sequential:
    layers: list[nn.Module] = []
    for i in range(len(sizes) - 1):
        layers.append(nn.Linear(sizes[i], sizes[i + 1]))
        if i < len(sizes) - 2:
            layers.append(nn.ReLU())
    if out_act is not None:
        layers.append(out_act)
    return nn.Sequential(*layers)


def gaussian_bank(centers: torch.Tensor, sigma: float, D: int) -> torch.Tensor:
    """Filter taps for ``centers`` of shape (...,), returning (..., D)."""
    d = torch.arange(D, dtype=centers.dtype, device=centers.device)
    return torch.exp(-((d - centers.unsqueeze(-1) * D) ** 2) / (2.0 * sigma**2))


class AttentionBranch(nn.Module):
    """Conv1d -> max-pool -> ReLU -> MLP -> sigmoid scalar in [0, 1]."""

    def __init__(self, D: int, channels: int, kernel: int, hidden: list[int]):
        super().__init__()
        self.conv = nn.Conv1d(1, channels, kernel, padding=kernel // 2)
        self.pool = nn.MaxPool1d(3, stride=2)
        pooled = (D - 3) // 2 + 1
        self.head = mlp([channels * pooled, *hidden, 1], nn.Sigmoid())

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = torch.relu(self.pool(self.conv(x.unsqueeze(1))))
        return self.head(h.flatten(1)).squeeze(-1)


class FilterBankOutput(NamedTuple):
    f0: torch.Tensor  # (B, J)
    residuals: list[torch.Tensor]  # J tensors (B, D), branch inputs
    filtered: list[torch.Tensor]  # J tensors (B, D), h_j * x


class FilterBank(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.D, self.sigma = cfg.D, cfg.sigma
        self.branches = nn.ModuleList(
            AttentionBranch(cfg.D, cfg.cnn_channels, cfg.cnn_kernel, cfg.attention_hidden)
            for _ in range(cfg.J)
        )

    def forward(self, x: torch.Tensor) -> FilterBankOutput:
        if x.shape[-1] != self.D:
            raise ValidationError(f"spectrum length {x.shape[-1]} does not match D={self.D}")
        residual = x
        f0, residuals, filtered = [], [], []
        for branch in self.branches:
            residuals.append(residual)
            f = branch(residual)
            y = gaussian_bank(f, self.sigma, self.D) * x
            residual = residual - y
            f0.append(f)
            filtered.append(y)
        return FilterBankOutput(torch.stack(f0, dim=-1), residuals, filtered)


class GaussianPosterior(NamedTuple):
    mean: torch.Tensor
    log_var: torch.Tensor


class Encoder(nn.Module):
    def __init__(self, in_dim: int, hidden: list[int], K: int):
        super().__init__()
        self.K = K
        self.net = mlp([in_dim, *hidden, 2 * K])

    def forward(self, f0: torch.Tensor) -> GaussianPosterior:
        out = self.net(f0)
        mean, log_var = out[..., : self.K], out[..., self.K :]
        return GaussianPosterior(mean, log_var.clamp(-LOG_VAR_CLAMP, LOG_VAR_CLAMP))


def reparameterize(post: GaussianPosterior, noise: torch.Tensor) -> torch.Tensor:
    return post.mean + torch.exp(0.5 * post.log_var) * noise


class VanillaDecoder(nn.Module):
    def __init__(self, K: int, hidden: list[int], D: int):
        super().__init__()
        self.net = mlp([K, *hidden, D])

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return self.net(z)


class AttentiveDecoder(nn.Module):
    """Predicts filter centres from z, filters the mean periodogram with them,
    and maps (filtered periodogram, z) to the reconstruction mean."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.D, self.J, self.sigma = cfg.D, cfg.J, cfg.sigma
        self.freq_net = mlp([cfg.K, cfg.J, cfg.J, cfg.J], nn.Sigmoid())
        self.out_net = mlp([cfg.D + cfg.K, *cfg.decoder_hidden, cfg.D])
        self.register_buffer("periodogram", torch.zeros(cfg.D))

    def filtered_periodogram(self, f0_hat: torch.Tensor) -> torch.Tensor:
        return (gaussian_bank(f0_hat, self.sigma, self.D) * self.periodogram).sum(dim=-2)

    def forward(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        f0_hat = self.freq_net(z)
        x_filt = self.filtered_periodogram(f0_hat)
        return self.out_net(torch.cat([x_filt, z], dim=-1)), f0_hat


class ElboTerms(NamedTuple):
    recon_loglik: torch.Tensor
    kl: torch.Tensor
    elbo: torch.Tensor


def kl_to_standard_normal(post: GaussianPosterior) -> torch.Tensor:
    """KL(N(mean, diag exp(log_var)) || N(0, I)), summed over the last axis."""
    return 0.5 * torch.sum(post.mean**2 + torch.exp(post.log_var) - 1.0 - post.log_var, dim=-1)


def elbo(x: torch.Tensor, mean_xhat: torch.Tensor, post: GaussianPosterior, nu: float) -> ElboTerms:
    D = x.shape[-1]
    recon = -torch.sum((x - mean_xhat) ** 2, dim=-1) / (2.0 * nu) - 0.5 * D * math.log(2 * math.pi * nu)
    kl = kl_to_standard_normal(post)
    return ElboTerms(recon, kl, recon - kl)


class ForwardResult(NamedTuple):
    mean_xhat: torch.Tensor
    post: GaussianPosterior
    z: torch.Tensor
    f0: torch.Tensor | None
    f0_hat: torch.Tensor | None


class ISVAE(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.filter_bank = FilterBank(cfg)
        self.encoder = Encoder(cfg.J, cfg.encoder_hidden, cfg.K)
        if cfg.decoder_kind == "vanilla":
            self.decoder = VanillaDecoder(cfg.K, cfg.decoder_hidden, cfg.D)
        else:
            self.decoder = AttentiveDecoder(cfg)

    def set_periodogram(self, p_x) -> None:
        if isinstance(self.decoder, AttentiveDecoder):
            p = torch.as_tensor(np.asarray(p_x), dtype=self.decoder.periodogram.dtype)
            if p.shape != (self.cfg.D,):
                raise ValidationError(f"periodogram must have length {self.cfg.D}")
            self.decoder.periodogram.copy_(p)

    def decode(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor | None]:
        if isinstance(self.decoder, AttentiveDecoder):
            return self.decoder(z)
        return self.decoder(z), None

    def forward(self, x: torch.Tensor, noise: torch.Tensor | None = None) -> ForwardResult:
        fb = self.filter_bank(x)
        post = self.encoder(fb.f0)
        if noise is None:
            noise = torch.randn_like(post.mean)
        z = reparameterize(post, noise)
        mean_xhat, f0_hat = self.decode(z)
        return ForwardResult(mean_xhat, post, z, fb.f0, f0_hat)


class VanillaVAE(nn.Module):
    """Baseline: the encoder sees the full spectrum, no filter bank."""

    def __init__(self, cfg: ModelConfig, encoder_hidden: list[int] | None = None):
        super().__init__()
        self.cfg = cfg
        hidden = encoder_hidden if encoder_hidden is not None else list(reversed(cfg.decoder_hidden))
        self.encoder = Encoder(cfg.D, hidden, cfg.K)
        self.decoder = VanillaDecoder(cfg.K, cfg.decoder_hidden, cfg.D)

    def forward(self, x: torch.Tensor, noise: torch.Tensor | None = None) -> ForwardResult:
        if x.shape[-1] != self.cfg.D:
            raise ValidationError(f"spectrum length {x.shape[-1]} does not match D={self.cfg.D}")
        post = self.encoder(x)
        if noise is None:
            noise = torch.randn_like(post.mean)
        z = reparameterize(post, noise)
        return ForwardResult(self.decoder(z), post, z, None, None)


def build_model(cfg: ModelConfig, variant: str = "isvae") -> nn.Module:
    if variant == "isvae":
        return ISVAE(cfg)
    if variant == "vae":
        return VanillaVAE(cfg)
    raise ValidationError(f"unknown model variant {variant!r}")


# -- checkpoints ------------------------------------------------------------


@dataclass
class Checkpoint:
    """Immutable snapshot: model config, variant name and flat float arrays per layer."""

    config: ModelConfig
    variant: str
    arrays: dict[str, np.ndarray]

    @classmethod
    def from_model(cls, model: nn.Module, variant: str = "isvae") -> Checkpoint:
        arrays = {}
        for k, v in model.state_dict().items():
            a = v.detach().cpu().numpy().copy()
            a.setflags(write=False)
            arrays[k] = a
        return cls(model.cfg, variant, arrays)

    def to_model(self, dtype: torch.dtype | None = None) -> nn.Module:
        model = build_model(self.config, self.variant)
        state = {k: torch.from_numpy(np.array(v)) for k, v in self.arrays.items()}
        if dtype is not None:
            model = model.to(dtype)
            state = {k: v.to(dtype) for k, v in state.items()}
        model.load_state_dict(state)
        return model

    def save(self, path) -> None:
        """Write an ``.npz`` archive; arrays are stored raw so values round-trip bit-exactly."""
        meta = json.dumps({"config": self.config.to_dict(), "variant": self.variant})
        payload = {f"param/{k}": np.asarray(v) for k, v in self.arrays.items()}
        with open(path, "wb") as fh:
            np.savez(fh, __meta__=np.frombuffer(meta.encode("utf-8"), dtype=np.uint8), **payload)

    @classmethod
    def load(cls, path) -> Checkpoint:
        with np.load(Path(path), allow_pickle=False) as z:
            meta = json.loads(bytes(z["__meta__"]).decode("utf-8"))
            arrays = {}
            for k in z.files:
                if k.startswith("param/"):
                    a = z[k].copy()
                    a.setflags(write=False)
                    arrays[k[len("param/") :]] = a
        return cls(ModelConfig.from_dict(meta["config"]), meta["variant"], arrays)

    def equals(self, other: Checkpoint) -> bool:
        return (
            self.config == other.config
            and self.variant == other.variant
            and self.arrays.keys() == other.arrays.keys()
            and all(
                self.arrays[k].dtype == other.arrays[k].dtype and np.array_equal(self.arrays[k], other.arrays[k])
                for k in self.arrays
            )
        )
