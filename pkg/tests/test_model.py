import math

import numpy as np
import pytest
import torch
from torch import nn

from isvae.model import (
    ISVAE,
    AttentiveDecoder,
    Checkpoint,
    Encoder,
    FilterBank,
    GaussianPosterior,
    ModelConfig,
    PRESETS,
    VanillaDecoder,
    VanillaVAE,
    build_model,
    elbo,
    kl_to_standard_normal,
    preset_config,
    reparameterize,
)
from isvae.spectral import ValidationError, gaussian_filter, gaussian_taps

F64 = torch.float64


def small_cfg(**kw):
    base = dict(D=16, J=2, sigma=2.0, K=2, attention_hidden=[5, 4], encoder_hidden=[6], decoder_hidden=[7, 9])
    base.update(kw)
    return ModelConfig(**base)


def seeded(module_fn, seed=0):
    torch.manual_seed(seed)
    return module_fn().to(F64)


def central_diff(fn, x, eps=1e-5):
    """Jacobian of ``fn`` (tensor -> tensor) at ``x`` by central differences."""
    x = x.detach().clone()
    out_size = fn(x).numel()
    jac = torch.zeros(out_size, x.numel(), dtype=F64)
    flat = x.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + eps
        hi = fn(x).detach().reshape(-1).clone()
        flat[i] = orig - eps
        lo = fn(x).detach().reshape(-1).clone()
        flat[i] = orig
        jac[:, i] = (hi - lo) / (2 * eps)
    return jac


def autograd_jac(fn, x):
    return torch.autograd.functional.jacobian(fn, x.detach().clone()).reshape(-1, x.numel())


def rel(a, b):
    return (torch.linalg.norm(a - b) / torch.linalg.norm(b).clamp_min(1e-12)).item()


def check_input_grad(fn, make_x, n_points=5, tol=1e-4):
    for p in range(n_points):
        x = make_x(p)
        assert rel(autograd_jac(fn, x), central_diff(fn, x)) <= tol


def check_param_grad(module, loss_fn, n_points=5, tol=1e-3):
    """Gradient of a scalar loss w.r.t. every parameter, at several random parameter points."""
    params = [p for p in module.parameters()]
    for point in range(n_points):
        torch.manual_seed(100 + point)
        with torch.no_grad():
            for p in params:
                p.add_(0.05 * torch.randn_like(p))
        module.zero_grad()
        loss_fn().backward()
        for p in params:
            analytic = p.grad.detach().reshape(-1).clone()
            numeric = torch.zeros_like(analytic)
            flat = p.data.view(-1)
            for i in range(flat.numel()):
                orig = flat[i].item()
                flat[i] = orig + 1e-5
                with torch.no_grad():
                    hi = loss_fn().item()
                flat[i] = orig - 1e-5
                with torch.no_grad():
                    lo = loss_fn().item()
                flat[i] = orig
                numeric[i] = (hi - lo) / 2e-5
            if torch.linalg.norm(numeric) < 1e-9:
                assert torch.linalg.norm(analytic) < 1e-6
            else:
                assert rel(analytic, numeric) <= tol


class TestConfig:
    def test_validation(self):
        for bad in (dict(J=0), dict(K=0), dict(sigma=0.0), dict(nu=-1.0), dict(decoder_kind="x")):
            with pytest.raises(ValidationError):
                small_cfg(**bad)

    def test_presets(self):
        cfg = preset_config("har", D=112, J=4, sigma=6.0)
        assert cfg.attention_hidden == PRESETS["har"]["attention_hidden"] and cfg.J == 4
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg


class TestFilterBank:
    def test_single_filter_residual(self, rng):
        fb = seeded(lambda: FilterBank(small_cfg(J=1)))
        x = torch.tensor(rng.normal(size=(3, 16)))
        out = fb(x)
        assert len(out.residuals) == 1 and torch.equal(out.residuals[0], x)

    def test_stub_attention_residual(self, rng):
        cfg = small_cfg(D=40, sigma=3.0)
        fb = seeded(lambda: FilterBank(cfg))

        class Half(nn.Module):
            def forward(self, x):
                return torch.full(x.shape[:1], 0.5, dtype=x.dtype)

        fb.branches = nn.ModuleList([Half(), Half()])
        x = rng.normal(size=(4, 40))
        out = fb(torch.tensor(x))
        taps = gaussian_filter(0.5, 3.0, 40).taps
        expected = x * (1 - taps)
        assert np.max(np.abs(out.residuals[1].numpy() - expected)) <= 1e-10
        assert np.allclose(out.f0.numpy(), 0.5)

    def test_telescoping(self, rng):
        fb = seeded(lambda: FilterBank(small_cfg(J=4)), seed=3)
        x = torch.tensor(rng.normal(size=(5, 16)))
        out = fb(x)
        assert torch.equal(out.residuals[0], x)
        for j in range(3):
            assert torch.allclose(out.residuals[j + 1] - out.residuals[j], -out.filtered[j], atol=1e-14)
            taps = torch.tensor(gaussian_taps(out.f0[:, j].detach().numpy(), 2.0, 16))
            assert torch.allclose(out.filtered[j], taps * x, atol=1e-14)

    def test_f0_range(self, rng):
        cfg = small_cfg(J=3)
        fb = seeded(lambda: FilterBank(cfg), seed=1)
        x = torch.tensor(rng.normal(scale=rng.uniform(0.01, 100), size=(1000, 16)))
        with torch.no_grad():
            f0 = fb(x).f0
        assert f0.shape == (1000, 3)
        assert torch.all((f0 >= 0) & (f0 <= 1))

    def test_dimension_mismatch(self):
        fb = seeded(lambda: FilterBank(small_cfg()))
        with pytest.raises(ValidationError):
            fb(torch.zeros(2, 15, dtype=F64))

    def test_input_gradient(self, rng):
        fb = seeded(lambda: FilterBank(small_cfg(J=2)), seed=2)
        check_input_grad(lambda x: fb(x[None]).f0[0], lambda p: torch.tensor(rng.normal(size=16)))

    def test_parameter_gradient(self, rng):
        fb = seeded(lambda: FilterBank(small_cfg(J=2, D=12, attention_hidden=[3])), seed=2)
        x = torch.tensor(rng.normal(size=(3, 12)))
        check_param_grad(fb, lambda: (fb(x).f0 ** 2).sum() + fb(x).filtered[1].sum())


class TestEncoder:
    def test_zero_final_layer(self, rng):
        enc = seeded(lambda: Encoder(3, [5], 4))
        with torch.no_grad():
            enc.net[-1].weight.zero_()
            enc.net[-1].bias.zero_()
        post = enc(torch.tensor(rng.uniform(size=(7, 3))))
        assert torch.all(post.mean == 0) and torch.all(post.log_var == 0)

    @pytest.mark.parametrize("J,K", [(1, 1), (2, 2), (4, 3), (6, 8)])
    def test_shapes(self, J, K):
        post = seeded(lambda: Encoder(J, [8], K))(torch.rand(5, J, dtype=F64))
        assert post.mean.shape == (5, K) and post.log_var.shape == (5, K)

    def test_log_var_clamped(self):
        enc = seeded(lambda: Encoder(1, [], 1))
        with torch.no_grad():
            enc.net[-1].weight.fill_(1000.0)
        post = enc(torch.ones(1, 1, dtype=F64))
        assert post.log_var.item() == 10.0

    def test_gradient(self, rng):
        enc = seeded(lambda: Encoder(3, [6, 5], 2), seed=4)
        check_input_grad(lambda f: enc(f[None]).mean[0], lambda p: torch.tensor(rng.uniform(size=3)))
        check_input_grad(lambda f: enc(f[None]).log_var[0], lambda p: torch.tensor(rng.uniform(size=3)))
        f = torch.tensor(rng.uniform(size=(4, 3)))
        check_param_grad(enc, lambda: enc(f).mean.pow(2).sum() + enc(f).log_var.sum())


class TestReparameterize:
    def test_examples(self):
        post = GaussianPosterior(torch.tensor([1.0, -2.0]), torch.tensor([0.3, 0.0]))
        assert torch.equal(reparameterize(post, torch.zeros(2)), post.mean)
        post0 = GaussianPosterior(torch.tensor([1.0, -2.0]), torch.zeros(2))
        assert torch.equal(reparameterize(post0, torch.tensor([1.0, 0.0])), torch.tensor([2.0, -2.0]))

    def test_monte_carlo(self):
        g = torch.Generator().manual_seed(0)
        mean = torch.tensor([0.5, -1.0, 2.0], dtype=F64)
        log_var = torch.tensor([0.0, -1.0, 1.2], dtype=F64)
        n = 100_000
        z = reparameterize(GaussianPosterior(mean, log_var), torch.randn(n, 3, generator=g, dtype=F64))
        var = torch.exp(log_var)
        se_mean = torch.sqrt(var / n)
        assert torch.all((z.mean(0) - mean).abs() < 3 * se_mean)
        # var of the sample variance of a Gaussian is 2 sigma^4 / (n - 1)
        se_var = torch.sqrt(2 * var**2 / (n - 1))
        assert torch.all((z.var(0) - var).abs() < 3 * se_var)
        cov = torch.cov(z.T)
        off = cov - torch.diag(torch.diag(cov))
        bound = 3 * torch.sqrt(var[:, None] * var[None, :] / n)
        assert torch.all(off.abs() < bound + torch.eye(3) * 1e9)


class TestDecoders:
    def test_vanilla_zero_output_layer(self):
        dec = seeded(lambda: VanillaDecoder(2, [5, 6], 10))
        with torch.no_grad():
            dec.net[-1].weight.zero_()
            dec.net[-1].bias.zero_()
        assert torch.all(dec(torch.randn(4, 2, dtype=F64)) == 0)

    @pytest.mark.parametrize("K,D", [(1, 8), (2, 16), (5, 33)])
    def test_vanilla_shape(self, K, D):
        assert seeded(lambda: VanillaDecoder(K, [4], D))(torch.zeros(3, K, dtype=F64)).shape == (3, D)

    def test_vanilla_gradient(self, rng):
        dec = seeded(lambda: VanillaDecoder(2, [5, 6], 8), seed=5)
        check_input_grad(lambda z: dec(z[None])[0], lambda p: torch.tensor(rng.normal(size=2)))
        z = torch.tensor(rng.normal(size=(3, 2)))
        check_param_grad(dec, lambda: dec(z).pow(2).sum())

    def test_attentive_zero_periodogram(self, rng):
        dec = seeded(lambda: AttentiveDecoder(small_cfg(decoder_kind="attentive")))
        f0_hat = torch.tensor(rng.uniform(size=(5, 2)))
        assert torch.all(dec.filtered_periodogram(f0_hat) == 0)

    def test_attentive_unit_periodogram(self):
        cfg = small_cfg(J=1, D=30, sigma=4.0, decoder_kind="attentive")
        dec = seeded(lambda: AttentiveDecoder(cfg))
        dec.periodogram.fill_(1.0)
        out = dec.filtered_periodogram(torch.tensor([[0.5]], dtype=F64))
        assert np.array_equal(out[0].numpy(), gaussian_filter(0.5, 4.0, 30).taps)

    def test_attentive_outputs(self, rng):
        cfg = small_cfg(J=3, decoder_kind="attentive")
        dec = seeded(lambda: AttentiveDecoder(cfg))
        dec.periodogram.copy_(torch.tensor(rng.uniform(size=16)))
        z = torch.tensor(rng.normal(size=(6, 2)))
        mean_xhat, f0_hat = dec(z)
        assert mean_xhat.shape == (6, 16) and f0_hat.shape == (6, 3)
        assert torch.all((f0_hat >= 0) & (f0_hat <= 1))
        again, _ = dec(z)
        assert torch.equal(mean_xhat, again)
        # the reconstruction net sees [filtered periodogram, z]
        expected = dec.out_net(torch.cat([dec.filtered_periodogram(f0_hat), z], dim=-1))
        assert torch.equal(mean_xhat, expected)

    def test_attentive_gradient(self, rng):
        cfg = small_cfg(J=2, decoder_kind="attentive")
        dec = seeded(lambda: AttentiveDecoder(cfg), seed=6)
        dec.periodogram.copy_(torch.tensor(rng.uniform(0.5, 2.0, size=16)))
        check_input_grad(lambda z: dec(z[None])[0][0], lambda p: torch.tensor(rng.normal(size=2)))
        z = torch.tensor(rng.normal(size=(3, 2)))
        check_param_grad(dec, lambda: dec(z)[0].pow(2).sum())


class TestKlAndElbo:
    def test_kl_examples(self):
        assert kl_to_standard_normal(GaussianPosterior(torch.zeros(3), torch.zeros(3))).item() == 0.0
        mean = torch.tensor([1.0, 0.0, 0.0])
        assert kl_to_standard_normal(GaussianPosterior(mean, torch.zeros(3))).item() == pytest.approx(0.5)

    @pytest.mark.parametrize("K", [1, 4, 8])
    def test_kl_monte_carlo(self, K):
        g = torch.Generator().manual_seed(K)
        mean = torch.randn(K, generator=g, dtype=F64)
        log_var = 0.8 * torch.randn(K, generator=g, dtype=F64)
        std = torch.exp(0.5 * log_var)
        z = mean + std * torch.randn(1_000_000, K, generator=g, dtype=F64)
        log_q = (-0.5 * ((z - mean) / std) ** 2 - torch.log(std) - 0.5 * math.log(2 * math.pi)).sum(-1)
        log_p = (-0.5 * z**2 - 0.5 * math.log(2 * math.pi)).sum(-1)
        mc = (log_q - log_p).mean().item()
        exact = kl_to_standard_normal(GaussianPosterior(mean, log_var)).item()
        assert abs(mc - exact) <= 0.01 * exact

    def test_kl_nonnegative(self):
        g = torch.Generator().manual_seed(1)
        post = GaussianPosterior(3 * torch.randn(5000, 4, generator=g), 5 * torch.randn(5000, 4, generator=g))
        assert torch.all(kl_to_standard_normal(post) >= -1e-9)

    def test_elbo_constant(self):
        post = GaussianPosterior(torch.zeros(2, dtype=F64), torch.zeros(2, dtype=F64))
        x = torch.tensor([0.3, -1.0], dtype=F64)
        terms = elbo(x, x.clone(), post, 1.0)
        assert terms.elbo.item() == pytest.approx(-math.log(2 * math.pi), abs=1e-12)
        shifted = GaussianPosterior(torch.tensor([1.0, 0.0], dtype=F64), post.log_var)
        assert terms.elbo.item() - elbo(x, x, shifted, 1.0).elbo.item() == pytest.approx(0.5, abs=1e-12)

    def test_elbo_formula_oracle(self, rng):
        D, K, nu = 13, 3, 0.7
        x, xh = rng.normal(size=D), rng.normal(size=D)
        mu, lv = rng.normal(size=K), rng.normal(size=K)
        recon = 0.0
        for d in range(D):
            recon -= (x[d] - xh[d]) ** 2 / (2 * nu)
        recon -= D / 2 * math.log(2 * math.pi * nu)
        kl = 0.0
        for k in range(K):
            kl += 0.5 * (mu[k] ** 2 + math.exp(lv[k]) - 1 - lv[k])
        t = elbo(*(torch.tensor(a) for a in (x, xh)), GaussianPosterior(torch.tensor(mu), torch.tensor(lv)), nu)
        assert t.recon_loglik.item() == pytest.approx(recon, rel=1e-10)
        assert t.kl.item() == pytest.approx(kl, rel=1e-10)
        assert t.elbo.item() == pytest.approx(recon - kl, rel=1e-10)
        assert t.elbo.item() <= t.recon_loglik.item()


class TestWholeModels:
    @pytest.mark.parametrize("kind", ["vanilla", "attentive"])
    def test_isvae_forward(self, rng, kind):
        cfg = small_cfg(decoder_kind=kind, J=3, K=2)
        model = seeded(lambda: ISVAE(cfg))
        model.set_periodogram(rng.uniform(size=16))
        out = model(torch.tensor(rng.normal(size=(4, 16))), torch.zeros(4, 2, dtype=F64))
        assert out.mean_xhat.shape == (4, 16) and out.f0.shape == (4, 3)
        assert torch.equal(out.z, out.post.mean)
        assert (out.f0_hat is None) == (kind == "vanilla")

    @pytest.mark.parametrize("kind", ["vanilla", "attentive"])
    def test_isvae_loss_gradient(self, rng, kind):
        cfg = small_cfg(D=10, J=2, decoder_kind=kind, attention_hidden=[3], encoder_hidden=[4], decoder_hidden=[5])
        model = seeded(lambda: ISVAE(cfg), seed=7)
        model.set_periodogram(rng.uniform(size=10))
        x = torch.tensor(rng.normal(size=(3, 10)))
        noise = torch.tensor(rng.normal(size=(3, 2)))
        check_param_grad(model, lambda: -elbo(x, (o := model(x, noise)).mean_xhat, o.post, 1.0).elbo.sum())

    def test_vanilla_vae(self, rng):
        cfg = small_cfg(K=3)
        model = seeded(lambda: VanillaVAE(cfg), seed=8)
        out = model(torch.tensor(rng.normal(size=(2, 16))))
        assert out.mean_xhat.shape == (2, 16) and out.post.mean.shape == (2, 3) and out.post.log_var.shape == (2, 3)
        assert out.f0 is None
        with pytest.raises(ValidationError):
            model(torch.zeros(1, 5, dtype=F64))

    def test_vanilla_vae_gradient(self, rng):
        cfg = small_cfg(D=8, K=2, decoder_hidden=[4])
        model = seeded(lambda: VanillaVAE(cfg, encoder_hidden=[5]), seed=9)
        x = torch.tensor(rng.normal(size=(3, 8)))
        noise = torch.tensor(rng.normal(size=(3, 2)))
        check_input_grad(lambda v: model(v[None], noise[:1]).mean_xhat[0], lambda p: torch.tensor(rng.normal(size=8)))
        check_param_grad(model, lambda: -elbo(x, (o := model(x, noise)).mean_xhat, o.post, 1.0).elbo.sum())

    def test_build_model(self):
        assert isinstance(build_model(small_cfg(), "isvae"), ISVAE)
        assert isinstance(build_model(small_cfg(), "vae"), VanillaVAE)
        with pytest.raises(ValidationError):
            build_model(small_cfg(), "gan")

    def test_bad_periodogram(self):
        model = ISVAE(small_cfg(decoder_kind="attentive"))
        with pytest.raises(ValidationError):
            model.set_periodogram(np.ones(3))


class TestCheckpoint:
    @pytest.mark.parametrize("variant,kind", [("isvae", "vanilla"), ("isvae", "attentive"), ("vae", "vanilla")])
    def test_roundtrip(self, tmp_path, rng, variant, kind):
        torch.manual_seed(0)
        model = build_model(small_cfg(decoder_kind=kind), variant)
        if variant == "isvae":
            model.set_periodogram(rng.uniform(size=16))
        ck = Checkpoint.from_model(model, variant)
        ck.save(tmp_path / "m.npz")
        back = Checkpoint.load(tmp_path / "m.npz")
        assert ck.equals(back)
        rebuilt = back.to_model()
        x = torch.randn(3, 16)
        noise = torch.zeros(3, 2)
        assert torch.equal(model(x, noise).mean_xhat, rebuilt(x, noise).mean_xhat)

    def test_immutable(self):
        ck = Checkpoint.from_model(ISVAE(small_cfg()))
        arr = next(iter(ck.arrays.values()))
        with pytest.raises(ValueError):
            arr[...] = 0

    def test_snapshot_independent_of_model(self):
        model = ISVAE(small_cfg())
        ck = Checkpoint.from_model(model)
        before = {k: v.copy() for k, v in ck.arrays.items()}
        with torch.no_grad():
            for p in model.parameters():
                p.add_(1.0)
        assert all(np.array_equal(before[k], ck.arrays[k]) for k in before)
