"""Tests for architectures, dataset synthesis, training, and evaluation."""

import csv
import os

import numpy as np
import pytest

from lact import dwt, io, models, nn, tomo
from lact.models import (
    ArchSpec,
    Checkpoint,
    DatasetManifest,
    TrainConfig,
    build_arch,
    evaluate,
    infer,
    infer_image,
    infer_wavelet,
    load_checkpoint,
    make_dataset,
    sample_patches,
    save_checkpoint,
    train,
)


def _tiny_dataset(tmp_path, n_images=5, n=32, arc=120.0, seed=3, n_val=1):
    return make_dataset(n_images, n, arc, seed=seed,
                        out_dir=str(tmp_path / "ds"), n_val=n_val,
                        n_angles=48)


class TestArchSpec:
    def test_io_channels(self):
        assert ArchSpec("wavelet_unet").io_channels == 15
        assert ArchSpec("image_unet").io_channels == 1
        assert ArchSpec("image_plain").io_channels == 1
        assert ArchSpec("wavelet_unet", dwt_levels=3).io_channels == 7

    def test_invalid(self):
        with pytest.raises(ValueError):
            ArchSpec("mlp")
        with pytest.raises(ValueError):
            ArchSpec("image_unet", depth=0)


class TestBuildArch:
    def test_unet_channel_doubling(self):
        net = build_arch(ArchSpec("wavelet_unet", depth=3, base_channels=16))
        assert net.in_channels == 15
        assert net.out_channels == 15
        by_name = {l.name: l for l in net.layers}
        assert by_name["enc0_0_conv"].in_channels == 15
        for i, want in enumerate((16, 32, 64)):
            assert by_name[f"enc{i}_1_conv"].out_channels == want
        assert by_name["mid_0_conv"].out_channels == 128

    def test_unet_decoder_concat_arithmetic(self):
        net = build_arch(ArchSpec("image_unet", depth=2, base_channels=8))
        by_name = {l.name: l for l in net.layers}
        # unpooled mid (32) + skip from stage 1 (16)
        assert by_name["dec1_0_conv"].in_channels == 32 + 16
        assert by_name["dec0_0_conv"].in_channels == 16 + 8
        assert by_name["out"].out_channels == 1

    def test_plain_has_no_pooling(self):
        net = build_arch(ArchSpec("image_plain", depth=3, base_channels=8))
        kinds = {l.kind for l in net.layers}
        assert "maxpool2" not in kinds
        assert "avgunpool2" not in kinds
        n_convs = sum(l.kind == "conv3x3" for l in net.layers)
        assert n_convs == 2 * 3 + 2

    def test_unet_forward_shape(self):
        arch = ArchSpec("wavelet_unet", depth=2, base_channels=4)
        net = build_arch(arch)
        params, _, bn = nn.init_params(net, seed=1)
        x = np.zeros((1, 15, 16, 16))
        y, _ = nn.forward(net, params, x, bn_state=bn)
        assert y.shape == (1, 15, 16, 16)


class TestTrainConfig:
    def test_lr_schedule_endpoints(self):
        cfg = TrainConfig(epochs=30)
        assert cfg.lr_at(0) == pytest.approx(1e-3)
        assert cfg.lr_at(29) == pytest.approx(1e-5)
        mids = [cfg.lr_at(e) for e in range(30)]
        assert all(a > b for a, b in zip(mids, mids[1:]))

    def test_log_linear_midpoint(self):
        cfg = TrainConfig(epochs=3, lr_start=1e-3, lr_end=1e-5)
        assert cfg.lr_at(1) == pytest.approx(1e-4)

    def test_invalid_lr(self):
        with pytest.raises(ValueError):
            TrainConfig(lr_start=1e-5, lr_end=1e-3)


class TestMakeDataset:
    def test_files_split_and_manifest(self, tmp_path):
        man = _tiny_dataset(tmp_path, n_images=5, n_val=2)
        assert len(man.entries) == 5
        assert len(man.split("train")) == 3
        assert len(man.split("val")) == 2
        # val ids are the trailing block
        assert [e["id"] for e in man.split("val")] == [3, 4]
        for e in man.entries:
            assert os.path.exists(e["full"])
            assert os.path.exists(e["limited"])
        reloaded = DatasetManifest.load(str(tmp_path / "ds" / "manifest.json"))
        assert reloaded == man

    def test_limited_is_worse_than_full(self, tmp_path):
        from lact import metrics
        man = _tiny_dataset(tmp_path, n_images=3, n_val=1)
        lim, full = models.load_pair(man.entries[0])
        assert metrics.psnr(lim, full) < 30.0
        assert not np.array_equal(lim, full)

    def test_deterministic_bytes(self, tmp_path):
        make_dataset(3, 32, 120.0, seed=9, out_dir=str(tmp_path / "a"),
                     n_val=1, n_angles=48)
        make_dataset(3, 32, 120.0, seed=9, out_dir=str(tmp_path / "b"),
                     n_val=1, n_angles=48)
        for i in range(3):
            for tag in ("full", "limited"):
                pa = tmp_path / "a" / f"{i:04d}_{tag}.lact"
                pb = tmp_path / "b" / f"{i:04d}_{tag}.lact"
                assert pa.read_bytes() == pb.read_bytes()

    def test_val_size_validated(self, tmp_path):
        with pytest.raises(ValueError):
            make_dataset(2, 32, 120.0, seed=1, out_dir=str(tmp_path), n_val=2)


class TestSamplePatches:
    def test_shapes_and_alignment(self):
        rng = np.random.default_rng(0)
        inp = rng.standard_normal((3, 32, 32))
        tgt = rng.standard_normal((1, 32, 32))
        xb, yb = sample_patches(inp, tgt, 8, 5, seed=42)
        assert xb.shape == (5, 3, 8, 8)
        assert yb.shape == (5, 1, 8, 8)
        # each input patch occurs verbatim in the source image
        found = False
        for r in range(25):
            for c in range(25):
                if np.array_equal(inp[:, r:r + 8, c:c + 8], xb[0]):
                    assert np.array_equal(tgt[:, r:r + 8, c:c + 8], yb[0])
                    found = True
        assert found

    def test_deterministic(self):
        inp = np.random.default_rng(1).standard_normal((1, 16, 16))
        a = sample_patches(inp, inp, 4, 3, seed=7)
        b = sample_patches(inp, inp, 4, 3, seed=7)
        c = sample_patches(inp, inp, 4, 3, seed=8)
        assert np.array_equal(a[0], b[0])
        assert not np.array_equal(a[0], c[0])

    def test_full_size_patch(self):
        inp = np.random.default_rng(2).standard_normal((1, 8, 8))
        xb, _ = sample_patches(inp, inp, 8, 2, seed=0)
        assert np.array_equal(xb[0], inp)

    def test_oversize_rejected(self):
        with pytest.raises(ValueError):
            sample_patches(np.zeros((1, 8, 8)), np.zeros((1, 8, 8)), 16, 1, 0)


def _quick_train(man, kind="image_plain", epochs=2, seed=5, **arch_kw):
    arch = ArchSpec(kind, depth=1, base_channels=4, **arch_kw)
    cfg = TrainConfig(epochs=epochs, batch_size=4, patch_size=16,
                      patches_per_image=2, seed=seed, arc_deg=man.arc_deg)
    return arch, cfg, train(arch, cfg, man)


class TestTraining:
    def test_smoke_and_log(self, tmp_path):
        man = _tiny_dataset(tmp_path)
        arch, cfg, (ckpt, log) = _quick_train(man)
        assert len(log) == 2
        assert np.isfinite(ckpt.val_psnr)
        assert ckpt.arch == arch
        assert ckpt.scales is not None

    def test_deterministic_repeat(self, tmp_path):
        man = _tiny_dataset(tmp_path)
        _, _, (c1, l1) = _quick_train(man)
        _, _, (c2, l2) = _quick_train(man)
        assert l1 == l2
        for name, p in c1.params.items():
            for key in p:
                assert np.array_equal(p[key], c2.params[name][key])

    def test_loss_decreases_when_overfitting(self, tmp_path):
        man = _tiny_dataset(tmp_path, n_images=3, n_val=1)
        _, _, (_, log) = _quick_train(man, epochs=12)
        losses = [row["train_loss"] for row in log]
        assert losses[-1] < losses[0]

    def test_csv_log_written(self, tmp_path):
        man = _tiny_dataset(tmp_path)
        arch = ArchSpec("image_plain", depth=1, base_channels=4)
        cfg = TrainConfig(epochs=2, batch_size=4, patch_size=16, seed=1,
                          arc_deg=man.arc_deg)
        path = str(tmp_path / "log.csv")
        train(arch, cfg, man, log_path=path)
        with open(path) as f:
            rows = list(csv.DictReader(f))
        assert len(rows) == 2
        assert set(rows[0]) == {"epoch", "lr", "train_loss", "val_psnr"}

    def test_empty_train_split_rejected(self, tmp_path):
        man = _tiny_dataset(tmp_path)
        man.entries = [e for e in man.entries if e["split"] == "val"]
        with pytest.raises(ValueError):
            _quick_train(man)

    def test_wavelet_training_runs(self, tmp_path):
        man = _tiny_dataset(tmp_path, n_images=3, n_val=1)
        arch = ArchSpec("wavelet_unet", depth=1, base_channels=4)
        cfg = TrainConfig(epochs=1, batch_size=2, patch_size=16,
                          patches_per_image=1, seed=2, arc_deg=man.arc_deg)
        ckpt, log = train(arch, cfg, man)
        assert ckpt.scales.shape == (15,)
        assert np.isfinite(log[0]["train_loss"])


class TestInference:
    def _zero_head_ckpt(self, kind, n):
        """A checkpoint whose residual prediction is exactly zero."""
        arch = ArchSpec(kind, depth=1, base_channels=4)
        net = build_arch(arch)
        params, mom, bn = nn.init_params(net, seed=3, dtype=np.float32)
        params["out"]["w"][:] = 0
        params["out"]["b"][:] = 0
        return Checkpoint(arch=arch, params=params, momentum=mom,
                          bn_state=bn, epoch=0, seed=3,
                          scales=np.ones(arch.io_channels, np.float32))

    def test_zero_residual_is_identity_image(self):
        ckpt = self._zero_head_ckpt("image_plain", 32)
        x = np.random.default_rng(4).standard_normal((32, 32))
        assert np.allclose(infer_image(ckpt, x), x)

    def test_zero_residual_is_identity_wavelet(self):
        ckpt = self._zero_head_ckpt("wavelet_unet", 32)
        x = np.random.default_rng(5).standard_normal((32, 32))
        # identity up to perfect-reconstruction error of the transform
        assert np.abs(infer_wavelet(ckpt, x) - x).max() <= 1e-5

    def test_true_residual_recovers_ground_truth(self):
        # if the net predicted the artifact exactly, restoration would be
        # exact; emulate with a hand-built stack subtraction
        rng = np.random.default_rng(6)
        full = rng.standard_normal((32, 32))
        lim = full + 0.1 * rng.standard_normal((32, 32))
        bank = dwt.build_filter_bank(32, 4)
        stack = dwt.decompose(lim, bank)
        art = dwt.decompose(lim - full, bank)
        rec = dwt.recompose(dwt.CoefficientStack(
            channels=stack.channels - art.channels, meta=stack.meta), bank)
        assert np.abs(rec - full).max() <= 1e-10

    def test_kind_routing(self):
        ck_img = self._zero_head_ckpt("image_plain", 32)
        ck_wav = self._zero_head_ckpt("wavelet_unet", 32)
        x = np.zeros((32, 32))
        with pytest.raises(ValueError):
            infer_wavelet(ck_img, x)
        with pytest.raises(ValueError):
            infer_image(ck_wav, x)
        assert infer(ck_img, x).shape == (32, 32)
        assert infer(ck_wav, x).shape == (32, 32)

    def test_accepts_image_objects(self):
        ckpt = self._zero_head_ckpt("image_plain", 32)
        img = tomo.Image(n=32, pixel_size=1.0,
                         data=np.random.default_rng(7).random((32, 32)))
        assert np.allclose(infer(ckpt, img), img.data)


class TestCheckpointRoundTrip:
    def test_bytes_and_values(self, tmp_path):
        man = _tiny_dataset(tmp_path)
        _, _, (ckpt, _) = _quick_train(man)
        p1 = str(tmp_path / "a.ckpt")
        p2 = str(tmp_path / "b.ckpt")
        save_checkpoint(p1, ckpt)
        back = load_checkpoint(p1)
        assert back.arch == ckpt.arch
        assert back.epoch == ckpt.epoch
        assert back.seed == ckpt.seed
        assert back.val_psnr == pytest.approx(ckpt.val_psnr)
        for name, p in ckpt.params.items():
            for key in p:
                assert np.array_equal(back.params[name][key], p[key])
        for name, p in ckpt.bn_state.items():
            for key in p:
                assert np.array_equal(back.bn_state[name][key], p[key])
        assert np.array_equal(back.scales, ckpt.scales)
        save_checkpoint(p2, back)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_inference_identical_after_reload(self, tmp_path):
        man = _tiny_dataset(tmp_path)
        _, _, (ckpt, _) = _quick_train(man)
        path = str(tmp_path / "c.ckpt")
        save_checkpoint(path, ckpt)
        back = load_checkpoint(path)
        lim, _ = models.load_pair(man.entries[0])
        assert np.array_equal(infer(ckpt, lim), infer(back, lim))


class TestEvaluate:
    def test_fbp_and_network_rows(self, tmp_path):
        man = _tiny_dataset(tmp_path, n_images=4, n_val=2)
        _, _, (ckpt, _) = _quick_train(man)
        csv_path = str(tmp_path / "eval.csv")
        rows, means = evaluate(man, ["fbp", "image_plain"],
                               checkpoints={"image_plain": ckpt},
                               csv_path=csv_path)
        assert len(rows) == 2 * 2
        assert set(means) == {"fbp", "image_plain"}
        for m in means.values():
            assert set(m) == {"psnr_db", "nrmse", "ssim"}
        with open(csv_path) as f:
            lines = list(csv.reader(f))
        assert lines[0] == ["slice", "method", "psnr_db", "nrmse", "ssim"]
        assert sum(1 for l in lines if l[0] == "mean") == 2

    def test_tv_method_runs(self, tmp_path):
        man = _tiny_dataset(tmp_path, n_images=2, n_val=1)
        _, means = evaluate(man, ["tv"],
                            tv_params=tomo.TvParams(n_iters=3, n_tv_steps=2))
        assert np.isfinite(means["tv"]["psnr_db"])

    def test_missing_checkpoint_rejected(self, tmp_path):
        man = _tiny_dataset(tmp_path, n_images=2, n_val=1)
        with pytest.raises(ValueError):
            evaluate(man, ["image_unet"])
