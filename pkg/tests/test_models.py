import numpy as np
import pytest
import torch

from obfnet.core import ImageTensor, StructuralError
from obfnet.models import (
    ROLE_DEOBFUSCATOR,
    ROLE_OBFUSCATOR,
    AutoencoderSpec,
    ConfigurationError,
    ModelIOError,
    Stage,
    build_autoencoder,
    forward,
    load_model,
    save_model,
)

TINY = AutoencoderSpec(
    encoder_stages=(Stage(8, 2), Stage(16, 1)), input_height=8, input_width=8
)


class TestSpec:
    def test_scaled_channels(self):
        spec = AutoencoderSpec()
        assert spec.scaled_channels() == (32, 64, 128, 256)
        half = AutoencoderSpec(width_multiplier=0.5)
        assert half.scaled_channels() == (16, 32, 64, 128)
        tiny = AutoencoderSpec(width_multiplier=0.1)
        # channel floor of 8 everywhere the scaled count would drop below it
        assert tiny.scaled_channels() == (8, 8, 13, 26)

    def test_stride_product(self):
        assert AutoencoderSpec().stride_product == 8

    def test_alpha_validation(self):
        for bad in (0.0, -0.5, 1.5):
            with pytest.raises(ConfigurationError):
                AutoencoderSpec(width_multiplier=bad)

    def test_resolution_must_divide(self):
        with pytest.raises(ConfigurationError):
            AutoencoderSpec(input_height=100, input_width=96)

    def test_stride_values(self):
        with pytest.raises(ConfigurationError):
            AutoencoderSpec(encoder_stages=(Stage(8, 3),))

    def test_dict_roundtrip(self):
        spec = AutoencoderSpec(width_multiplier=0.5, input_height=64, input_width=96)
        assert AutoencoderSpec.from_dict(spec.to_dict()) == spec


class TestBuildForward:
    def test_deterministic_init(self):
        a = build_autoencoder(TINY, ROLE_OBFUSCATOR, seed=5)
        b = build_autoencoder(TINY, ROLE_OBFUSCATOR, seed=5)
        c = build_autoencoder(TINY, ROLE_OBFUSCATOR, seed=6)
        assert a.parameter_checksum() == b.parameter_checksum()
        assert a.parameter_checksum() != c.parameter_checksum()

    def test_role_validation(self):
        with pytest.raises(ConfigurationError):
            build_autoencoder(TINY, "attacker", seed=0)

    def test_forward_shape_and_range(self, rng):
        model = build_autoencoder(TINY, ROLE_OBFUSCATOR, seed=0)
        imgs = [ImageTensor(rng.random((8, 8, 3), dtype=np.float32)) for _ in range(3)]
        outs = forward(model, imgs)
        assert len(outs) == 3
        for o in outs:
            assert o.resolution == (8, 8)
            assert 0.0 <= float(o.values.min()) and float(o.values.max()) <= 1.0

    def test_forward_resolution_mismatch(self, rng):
        model = build_autoencoder(TINY, ROLE_OBFUSCATOR, seed=0)
        with pytest.raises(StructuralError):
            forward(model, [ImageTensor(rng.random((16, 16, 3), dtype=np.float32))])

    def test_eval_forward_deterministic(self, rng):
        model = build_autoencoder(TINY, ROLE_OBFUSCATOR, seed=0).eval()
        img = ImageTensor(rng.random((8, 8, 3), dtype=np.float32))
        (a,) = forward(model, [img])
        (b,) = forward(model, [img])
        assert np.array_equal(a.values, b.values)

    def test_mode_tracking(self):
        model = build_autoencoder(TINY, ROLE_OBFUSCATOR, seed=0)
        assert model.mode == "eval"
        assert model.train().mode == "train"
        assert model.eval().mode == "eval"


def test_gradients_match_finite_differences(rng):
    """Autograd vs central differences on a tiny double-precision model."""
    torch.manual_seed(0)
    model = build_autoencoder(TINY, ROLE_OBFUSCATOR, seed=0)
    module = model.module.double().train()
    x = torch.from_numpy(rng.random((1, 3, 8, 8))).double()

    def loss_fn():
        return (module(x) ** 2).sum()

    loss = loss_fn()
    loss.backward()
    params = [p for p in module.parameters() if p.grad is not None]
    flat = torch.cat([p.detach().reshape(-1) for p in params])
    grads = torch.cat([p.grad.reshape(-1) for p in params])
    eps = 1e-6
    picks = rng.choice(len(flat), size=10, replace=False)
    offsets = np.cumsum([0] + [p.numel() for p in params])
    for k in picks:
        pi = int(np.searchsorted(offsets, k, side="right") - 1)
        local = int(k - offsets[pi])
        with torch.no_grad():
            orig = params[pi].reshape(-1)[local].item()
            params[pi].reshape(-1)[local] = orig + eps
            up = loss_fn().item()
            params[pi].reshape(-1)[local] = orig - eps
            down = loss_fn().item()
            params[pi].reshape(-1)[local] = orig
        fd = (up - down) / (2 * eps)
        ad = grads[k].item()
        assert abs(fd - ad) <= 1e-3 * max(1.0, abs(ad)), (k, fd, ad)


class TestModelIO:
    def test_roundtrip(self, tmp_path):
        model = build_autoencoder(TINY, ROLE_DEOBFUSCATOR, seed=3)
        save_model(model, tmp_path / "m.model")
        back = load_model(tmp_path / "m.model")
        assert back.role == ROLE_DEOBFUSCATOR
        assert back.spec == TINY
        assert back.parameter_checksum() == model.parameter_checksum()

    def test_role_mismatch(self, tmp_path):
        model = build_autoencoder(TINY, ROLE_DEOBFUSCATOR, seed=3)
        save_model(model, tmp_path / "m.model")
        with pytest.raises(ModelIOError):
            load_model(tmp_path / "m.model", expected_role=ROLE_OBFUSCATOR)

    def test_bad_magic(self, tmp_path):
        (tmp_path / "junk.model").write_bytes(b"NOTAMODEL" + b"\0" * 64)
        with pytest.raises(ModelIOError):
            load_model(tmp_path / "junk.model")

    def test_corruption_detected(self, tmp_path):
        model = build_autoencoder(TINY, ROLE_OBFUSCATOR, seed=3)
        save_model(model, tmp_path / "m.model")
        raw = bytearray((tmp_path / "m.model").read_bytes())
        raw[-1] ^= 0xFF
        (tmp_path / "m.model").write_bytes(bytes(raw))
        with pytest.raises(ModelIOError):
            load_model(tmp_path / "m.model")
