import numpy as np
import pytest
import torch

import oracles
from presspose.errors import ConfigError, ShapeError
from presspose.polishnet import (
    PolishNet,
    PolishNetConfig,
    init_polishnet,
    load_checkpoint,
    polish_image,
    save_checkpoint,
)

TOY = PolishNetConfig(
    encoder_blocks=2,
    decoder_blocks=2,
    convs_per_block=1,
    channel_widths=(3, 4),
    working_size=(16, 16),
)


def param_count_oracle(cfg: PolishNetConfig) -> int:
    """Walk the declared layer shapes independently of the module."""
    k2 = cfg.kernel * cfg.kernel
    total = 0
    prev = cfg.in_channels
    for width in cfg.channel_widths:
        chans = [prev] + [width] * cfg.convs_per_block
        for cin, cout in zip(chans, chans[1:]):
            total += cout * cin * k2 + cout
        total += 2 * width  # norm scale + shift
        prev = width
    widths = list(cfg.channel_widths)
    outs = list(reversed(widths[:-1])) + [cfg.out_channels]
    prev = widths[-1]
    for out in outs:
        chans = [prev] * cfg.convs_per_block + [out]
        for cin, cout in zip(chans, chans[1:]):
            total += cout * cin * k2 + cout
        total += 2 * out
        prev = out
    return total


class TestConfig:
    def test_default_needs_more_than_24_pixels(self):
        with pytest.raises(ConfigError):
            PolishNetConfig(working_size=(20, 20))

    def test_default_shrink_is_24_round_trip(self):
        cfg = PolishNetConfig(working_size=(256, 128))
        assert cfg.total_shrink == 12
        assert cfg.num_convs == 6

    def test_width_list_must_match_blocks(self):
        with pytest.raises(ConfigError):
            PolishNetConfig(channel_widths=(8, 8), working_size=(64, 32))

    def test_even_kernel_rejected(self):
        with pytest.raises(ConfigError):
            PolishNetConfig(kernel=4, working_size=(64, 32))

    def test_json_round_trip(self):
        cfg = PolishNetConfig(channel_widths=(4, 5, 6), working_size=(64, 32))
        assert PolishNetConfig.from_json(cfg.to_json()) == cfg


class TestInit:
    def test_same_seed_bitwise_identical(self):
        a = init_polishnet(TOY, seed=42).named_arrays()
        b = init_polishnet(TOY, seed=42).named_arrays()
        assert set(a) == set(b)
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_different_seeds_differ(self):
        a = init_polishnet(TOY, seed=0).named_arrays()
        b = init_polishnet(TOY, seed=1).named_arrays()
        assert any((a[n] != b[n]).any() for n in a if n.endswith("weight"))

    def test_parameter_count_matches_shape_walk(self):
        for cfg in (
            TOY,
            PolishNetConfig(channel_widths=(4, 6, 8), working_size=(64, 32)),
            PolishNetConfig(
                encoder_blocks=1, decoder_blocks=1, convs_per_block=3,
                channel_widths=(5,), working_size=(32, 32),
            ),
        ):
            assert init_polishnet(cfg).num_parameters() == param_count_oracle(cfg)

    def test_norm_initialized_to_identity(self):
        arrays = init_polishnet(TOY, seed=0).named_arrays()
        np.testing.assert_array_equal(arrays["enc0.norm.weight"], np.ones(3, dtype=np.float32))
        np.testing.assert_array_equal(arrays["enc0.norm.bias"], np.zeros(3, dtype=np.float32))
        np.testing.assert_array_equal(arrays["enc0.norm.running_var"], np.ones(3, dtype=np.float32))


class TestForward:
    @pytest.mark.parametrize(
        "cfg",
        [
            PolishNetConfig(channel_widths=(4, 5, 6), working_size=(64, 32)),
            PolishNetConfig(channel_widths=(2, 3, 4), working_size=(256, 128)),
            PolishNetConfig(channel_widths=(2, 2, 2), working_size=(128, 256)),
            TOY,
        ],
    )
    def test_spatial_shape_preserved(self, cfg):
        net = init_polishnet(cfg, seed=0)
        h, w = cfg.working_size
        x = torch.rand(1, 3, h, w)
        with torch.no_grad():
            out = net(x)
        assert out.shape == (1, 3, h, w)

    def test_output_in_unit_interval(self, rng):
        net = init_polishnet(TOY, seed=3)
        image = rng.uniform(0, 1, size=(16, 16, 3))
        out = polish_image(net, image, mode="eval")
        assert out.min() > 0.0 and out.max() < 1.0

    def test_eval_mode_deterministic(self, rng):
        net = init_polishnet(TOY, seed=3)
        image = rng.uniform(0, 1, size=(16, 16, 3))
        a = polish_image(net, image, mode="eval")
        b = polish_image(net, image, mode="eval")
        np.testing.assert_array_equal(a, b)

    def test_shape_mismatch_raises(self, rng):
        net = init_polishnet(TOY, seed=0)
        with pytest.raises(ShapeError):
            polish_image(net, rng.uniform(0, 1, size=(18, 16, 3)))

    def test_bad_mode_rejected(self, rng):
        net = init_polishnet(TOY, seed=0)
        with pytest.raises(ValueError):
            polish_image(net, rng.uniform(0, 1, size=(16, 16, 3)), mode="test")


def _randomize(net: PolishNet, rng) -> None:
    """Random but valid parameters (positive running variance)."""
    arrays = net.named_arrays()
    new = {}
    for name, value in arrays.items():
        if name.endswith("running_var"):
            new[name] = rng.uniform(0.5, 2.0, size=value.shape).astype(np.float32)
        elif name.endswith("norm.weight"):
            new[name] = rng.uniform(0.5, 1.5, size=value.shape).astype(np.float32)
        else:
            new[name] = rng.uniform(-0.5, 0.5, size=value.shape).astype(np.float32)
    net.load_arrays(new)


def _oracle_forward(net: PolishNet, x: np.ndarray, training: bool) -> np.ndarray:
    """Straight-line numpy re-computation of the whole network."""
    cfg = net.config
    batch = [np.asarray(img, dtype=np.float64) for img in x]
    for kind, blocks in (("enc", net.encoder), ("dec", net.decoder)):
        for block in blocks:
            for conv in block.convs:
                w = conv.weight.detach().numpy().astype(np.float64)
                b = conv.bias.detach().numpy().astype(np.float64)
                if kind == "enc":
                    batch = [oracles.conv2d_valid_oracle(img, w, b) for img in batch]
                else:
                    batch = [oracles.deconv2d_full_oracle(img, w, b) for img in batch]
            stacked = np.stack(batch)
            norm = block.norm
            gamma = norm.weight.detach().numpy().astype(np.float64)
            beta = norm.bias.detach().numpy().astype(np.float64)
            if training:
                stacked = oracles.batchnorm_oracle(stacked, gamma, beta, cfg.bn_eps)
            else:
                stacked = oracles.batchnorm_oracle(
                    stacked, gamma, beta, cfg.bn_eps,
                    mean=norm.running_mean.detach().numpy().astype(np.float64),
                    var=norm.running_var.detach().numpy().astype(np.float64),
                )
            stacked = oracles.leaky_relu_oracle(stacked, cfg.leaky_slope)
            batch = list(stacked)
    return 1.0 / (1.0 + np.exp(-np.stack(batch)))


class TestForwardOracle:
    def test_one_channel_wide_config_matches_dense_oracle(self, rng):
        cfg = PolishNetConfig(channel_widths=(1, 1, 1), working_size=(28, 28))
        net = init_polishnet(cfg, seed=7, dtype=torch.float64)
        _randomize(net, rng)
        x = rng.uniform(0, 1, size=(2, 3, 28, 28))
        xt = torch.from_numpy(x)

        net.eval()
        with torch.no_grad():
            got_eval = net(xt).numpy()
        np.testing.assert_allclose(got_eval, _oracle_forward(net, x, training=False), rtol=1e-10)

        net.train(True)
        with torch.no_grad():
            got_train = net(xt).numpy()
        np.testing.assert_allclose(got_train, _oracle_forward(net, x, training=True), rtol=1e-10)

    def test_toy_config_matches_dense_oracle(self, rng):
        net = init_polishnet(TOY, seed=1, dtype=torch.float64)
        _randomize(net, rng)
        x = rng.uniform(0, 1, size=(1, 3, 16, 16))
        net.eval()
        with torch.no_grad():
            got = net(torch.from_numpy(x)).numpy()
        np.testing.assert_allclose(got, _oracle_forward(net, x, training=False), rtol=1e-10)


class TestGradients:
    def test_autograd_matches_central_differences(self, rng):
        net = init_polishnet(TOY, seed=2, dtype=torch.float64)
        x = torch.from_numpy(rng.uniform(0, 1, size=(1, 3, 16, 16)))
        probe = torch.from_numpy(rng.uniform(-1, 1, size=(1, 3, 16, 16)))
        net.train(True)

        def scalar():
            return (net(x) * probe).sum()

        loss = scalar()
        loss.backward()
        analytic = torch.cat([p.grad.reshape(-1) for p in net.parameters()]).numpy()
        h = 1e-6
        fd = np.zeros_like(analytic)
        i = 0
        with torch.no_grad():
            for p in net.parameters():
                flat = p.reshape(-1)
                for j in range(flat.numel()):
                    orig = flat[j].item()
                    flat[j] = orig + h
                    up = scalar().item()
                    flat[j] = orig - h
                    down = scalar().item()
                    flat[j] = orig
                    fd[i] = (up - down) / (2 * h)
                    i += 1
        rel = np.linalg.norm(analytic - fd) / np.linalg.norm(fd)
        assert rel <= 1e-3

    def test_lipschitz_bounded_on_pixel_perturbation(self, rng):
        net = init_polishnet(TOY, seed=4)
        image = rng.uniform(0, 1, size=(16, 16, 3))
        base = polish_image(net, image, mode="eval")
        eps = 1e-3
        bumped = image.copy()
        bumped[8, 8, 1] += eps
        delta = np.abs(polish_image(net, bumped, mode="eval") - base).max()
        ratio = delta / eps
        assert np.isfinite(ratio)
        assert ratio < 1e4


class TestCheckpoint:
    def test_save_load_bitwise_forward(self, tmp_path, rng):
        cfg = PolishNetConfig(channel_widths=(3, 4, 5), working_size=(64, 32))
        net = init_polishnet(cfg, seed=9)
        # exercise non-trivial running stats before saving
        net.train(True)
        with torch.no_grad():
            net(torch.rand(4, 3, 64, 32))
        net.eval()
        save_checkpoint(net, tmp_path / "ck.ppnc")
        loaded = load_checkpoint(tmp_path / "ck.ppnc")
        assert loaded.config == cfg
        x = torch.rand(2, 3, 64, 32)
        with torch.no_grad():
            a = net(x)
            b = loaded(x)
        assert torch.equal(a, b)

    def test_checkpoint_arrays_round_trip(self, tmp_path):
        net = init_polishnet(TOY, seed=5)
        save_checkpoint(net, tmp_path / "ck.ppnc")
        loaded = load_checkpoint(tmp_path / "ck.ppnc")
        a, b = net.named_arrays(), loaded.named_arrays()
        for name in a:
            np.testing.assert_array_equal(a[name], b[name])

    def test_checksum_tracks_parameters(self):
        net = init_polishnet(TOY, seed=5)
        before = net.checksum()
        with torch.no_grad():
            next(net.parameters()).add_(0.1)
        assert net.checksum() != before
