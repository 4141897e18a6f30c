"""Architectures, dataset synthesis, patch training, and evaluation.

Three residual architectures are supported:
  wavelet_unet - U-Net on the 15-channel directional wavelet stack
  image_unet   - the same U-Net on the single-channel image
  image_plain  - fixed-resolution conv chain (small receptive field)

All networks regress the artifact (limited minus full-arc reconstruction);
restoration subtracts the prediction, in the wavelet domain for
wavelet_unet and in the image domain otherwise.
"""

import copy
import csv
import json
import os
from dataclasses import dataclass, field, asdict

import numpy as np

from . import dwt, io, metrics, tomo
from .nn import (LayerSpec, NetworkSpec, backward, forward, init_params,
                 mse_loss, sgd_step)
from .rng import SplitMix64, derive_seed

ARCH_KINDS = ("wavelet_unet", "image_unet", "image_plain")


@dataclass
class ArchSpec:
    kind: str
    depth: int = 3
    base_channels: int = 16
    convs_per_stage: int = 2
    dwt_levels: int = 4

    def __post_init__(self):
        if self.kind not in ARCH_KINDS:
            raise ValueError(f"unknown architecture {self.kind!r}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")

    @property
    def io_channels(self):
        if self.kind == "wavelet_unet":
            return sum([1] + [2 ** s for s in range(1, self.dwt_levels)])
        return 1


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 8
    patch_size: int = 32
    patches_per_image: int = 2
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    weight_decay: float = 1e-4
    momentum: float = 0.9
    seed: int = 0
    arc_deg: float = 120.0

    def __post_init__(self):
        if not (self.lr_start >= self.lr_end > 0):
            raise ValueError("need lr_start >= lr_end > 0")

    def lr_at(self, epoch):
        """Log-linear decay from lr_start to lr_end across epochs."""
        if self.epochs <= 1:
            return self.lr_end
        t = epoch / (self.epochs - 1)
        return float(self.lr_start * (self.lr_end / self.lr_start) ** t)


@dataclass
class Checkpoint:
    arch: ArchSpec
    params: dict
    momentum: dict
    bn_state: dict
    epoch: int
    seed: int
    val_psnr: float = float("nan")
    # per-channel RMS of the training inputs; the network sees normalized
    # stacks and its outputs are rescaled back at inference
    scales: np.ndarray = None
    # target normalization (may differ from the input scales: wavelet
    # targets share one global scale so the loss stays proportional to
    # image-domain MSE)
    out_scales: np.ndarray = None

    def network(self):
        return build_arch(self.arch)


@dataclass
class DatasetManifest:
    n: int
    arc_deg: float
    n_angles: int
    seed: int
    entries: list = field(default_factory=list)

    def split(self, tag):
        return [e for e in self.entries if e["split"] == tag]

    def save(self, path):
        with open(path, "w") as f:
            json.dump(asdict(self), f, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            d = json.load(f)
        return cls(**d)


# ---------------------------------------------------------------------------
# architectures

def _block(layers, name, cin, cout, src):
    layers.append(LayerSpec(f"{name}_conv", "conv3x3", cin, cout, [src]))
    layers.append(LayerSpec(f"{name}_bn", "batchnorm", inputs=[f"{name}_conv"]))
    layers.append(LayerSpec(f"{name}_relu", "relu", inputs=[f"{name}_bn"]))
    return f"{name}_relu"


def build_arch(spec):
    """NetworkSpec for the requested architecture."""
    c_io = spec.io_channels
    b = spec.base_channels
    layers = []
    if spec.kind == "image_plain":
        src = "input"
        cin = c_io
        for i in range(2 * spec.depth + 2):
            src = _block(layers, f"body{i}", cin, b, src)
            cin = b
        layers.append(LayerSpec("out", "conv1x1", cin, c_io, [src]))
        return NetworkSpec(layers=layers, in_channels=c_io)

    # U-Net: channels double at every pool, skip-concat on the way up
    src = "input"
    cin = c_io
    skips = []
    for i in range(spec.depth):
        ch = b * 2 ** i
        for j in range(spec.convs_per_stage):
            src = _block(layers, f"enc{i}_{j}", cin, ch, src)
            cin = ch
        skips.append(src)
        layers.append(LayerSpec(f"pool{i}", "maxpool2", inputs=[src]))
        src = f"pool{i}"
    ch = b * 2 ** spec.depth
    for j in range(spec.convs_per_stage):
        src = _block(layers, f"mid_{j}", cin, ch, src)
        cin = ch
    for i in range(spec.depth - 1, -1, -1):
        ch = b * 2 ** i
        layers.append(LayerSpec(f"up{i}", "avgunpool2", inputs=[src]))
        layers.append(LayerSpec(f"cat{i}", "concat",
                                inputs=[f"up{i}", skips[i]]))
        src = f"cat{i}"
        cin = cin + ch
        for j in range(spec.convs_per_stage):
            src = _block(layers, f"dec{i}_{j}", cin, ch, src)
            cin = ch
    layers.append(LayerSpec("out", "conv1x1", cin, c_io, [src]))
    return NetworkSpec(layers=layers, in_channels=c_io)


# ---------------------------------------------------------------------------
# dataset synthesis

def make_dataset(n_images, n, arc_deg, seed, out_dir, n_val=None,
                 n_angles=None, k_ellipses=8, window="ramlak"):
    """Synthesize (full-arc FBP, limited-arc FBP) training pairs.

    Ground truth is the FULL-arc reconstruction, so the residual is purely
    the limited-angle artifact. The last n_val phantom ids form the
    validation split (train/val ids disjoint by construction).
    """
    if n_val is None:
        n_val = max(1, n_images // 9)
    if n_val >= n_images:
        raise ValueError("n_val must leave at least one training image")
    os.makedirs(out_dir, exist_ok=True)
    geom = tomo.default_geometry(n, arc_deg=180.0, n_angles=n_angles)
    manifest = DatasetManifest(n=n, arc_deg=float(arc_deg),
                               n_angles=geom.n_angles, seed=int(seed))
    for i in range(n_images):
        sub = derive_seed(seed, i)
        ph = tomo.random_phantom(n, sub, k=k_ellipses)
        sino = tomo.forward_project(ph, geom)
        full = tomo.fbp(sino, n, window=window)
        lim = tomo.fbp(tomo.restrict_angles(sino, 0.0, arc_deg), n,
                       window=window)
        fp = os.path.join(out_dir, f"{i:04d}_full.lact")
        lp = os.path.join(out_dir, f"{i:04d}_limited.lact")
        io.write_tensor(fp, full.data)
        io.write_tensor(lp, lim.data)
        manifest.entries.append({
            "id": i, "seed": int(sub), "full": fp, "limited": lp,
            "arc_deg": float(arc_deg),
            "split": "val" if i >= n_images - n_val else "train",
        })
    manifest.save(os.path.join(out_dir, "manifest.json"))
    return manifest


def load_pair(entry):
    return io.read_tensor(entry["limited"]), io.read_tensor(entry["full"])


# ---------------------------------------------------------------------------
# patch sampling

def sample_patches(inp, target, patch, count, seed):
    """Random aligned patches from a (C, H, W) input/target pair.

    Corners come from splitmix64(seed); windows never leave the image.
    """
    c, h, w = inp.shape
    if patch > h or patch > w:
        raise ValueError("patch larger than image")
    g = SplitMix64(seed)
    xb = np.empty((count, c, patch, patch), dtype=inp.dtype)
    yb = np.empty((count, target.shape[0], patch, patch), dtype=target.dtype)
    for i in range(count):
        r = g.randint(h - patch + 1)
        cc = g.randint(w - patch + 1)
        xb[i] = inp[:, r:r + patch, cc:cc + patch]
        yb[i] = target[:, r:r + patch, cc:cc + patch]
    return xb, yb


def _stacks_for(arch, limited, full, bank):
    """(input, residual-target) planes for one image pair, (C, H, W).

    Wavelet stacks are cut from whole-image decompositions so the
    frequency-domain channel windows stay aligned with the patches.
    """
    if arch.kind == "wavelet_unet":
        lim = dwt.decompose(limited, bank).channels
        art = dwt.decompose(limited - full, bank).channels
        return lim, art
    return limited[None], (limited - full)[None]


# ---------------------------------------------------------------------------
# training

def train(arch, cfg, manifest, log_path=None, dtype=np.float32,
          progress=None):
    """SGD training of the residual network; returns (Checkpoint, log).

    The checkpoint holds the parameters with the best validation PSNR.
    Fully deterministic for a given (arch, cfg, manifest, seed).
    """
    train_entries = manifest.split("train")
    val_entries = manifest.split("val")
    if not train_entries:
        raise ValueError("manifest has no training entries")
    net = build_arch(arch)
    params, mom, bn_state = init_params(net, cfg.seed, dtype=dtype)
    # zero-init the head: the untrained net predicts a zero residual, so
    # restoration starts exactly at the FBP baseline
    params["out"]["w"][:] = 0
    bank = dwt.build_filter_bank(manifest.n, arch.dwt_levels) \
        if arch.kind == "wavelet_unet" else None

    pairs = []
    for e in train_entries:
        lim, full = load_pair(e)
        inp, tgt = _stacks_for(arch, lim, full, bank)
        pairs.append((inp.astype(dtype), tgt.astype(dtype)))
    scales = np.sqrt(np.mean(
        np.stack([(i ** 2).mean(axis=(1, 2)) for i, _ in pairs]), axis=0))
    scales = np.maximum(scales, 1e-8).astype(dtype)
    if arch.kind == "wavelet_unet":
        # one global target scale: recompose is a plain channel sum over
        # near-orthogonal bands, so the channel-summed squared error is
        # the image-domain MSE. Per-channel target scaling is wrong here:
        # it lets the nearly unpredictable missing-wedge channels
        # dominate the gradient.
        g = np.sqrt(np.mean([(t ** 2).mean() for _, t in pairs]))
        out_scales = np.full_like(scales, max(g, 1e-8))
    else:
        out_scales = scales
    pairs = [(i / scales[:, None, None], t / out_scales[:, None, None])
             for i, t in pairs]

    log = []
    best = None
    step_seed = derive_seed(cfg.seed, 0xBA7C4)
    for epoch in range(cfg.epochs):
        lr = cfg.lr_at(epoch)
        order = np.arange(len(pairs)).repeat(cfg.patches_per_image)
        shuf = SplitMix64(derive_seed(step_seed, epoch))
        for i in range(len(order) - 1, 0, -1):  # Fisher-Yates
            j = shuf.randint(i + 1)
            order[i], order[j] = order[j], order[i]
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xs, ys = [], []
            for t, pi in enumerate(idx):
                inp, tgt = pairs[pi]
                xb, yb = sample_patches(
                    inp, tgt, cfg.patch_size, 1,
                    derive_seed(step_seed, epoch, start + t))
                xs.append(xb)
                ys.append(yb)
            x = np.concatenate(xs)
            y = np.concatenate(ys)
            pred, cache = forward(net, params, x, mode="train",
                                  bn_state=bn_state)
            loss, dy = mse_loss(pred, y)
            # sum, not mean, over output channels: the elementwise mean
            # would shrink every gradient (and so every convergence time
            # constant) by the channel count, stalling the 15-channel
            # network relative to the single-channel ones at the same lr
            nc = y.shape[1]
            loss, dy = loss * nc, dy * nc
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"NaN/Inf loss at epoch {epoch} step {start}: lr={lr}")
            grads, _ = backward(net, params, cache, dy)
            sgd_step(params, grads, mom, lr, cfg.momentum, cfg.weight_decay)
            losses.append(loss)
        train_loss = float(np.mean(losses))
        val_psnr = _validate(arch, net, params, bn_state, val_entries, bank,
                             dtype, scales, out_scales)
        log.append({"epoch": epoch, "lr": lr, "train_loss": train_loss,
                    "val_psnr": val_psnr})
        if progress:
            progress(log[-1])
        if best is None or val_psnr >= best.val_psnr:
            best = Checkpoint(arch=arch,
                              params=copy.deepcopy(params),
                              momentum=copy.deepcopy(mom),
                              bn_state=copy.deepcopy(bn_state),
                              epoch=epoch, seed=cfg.seed,
                              val_psnr=val_psnr, scales=scales.copy(),
                              out_scales=out_scales.copy())
    if log_path:
        with open(log_path, "w", newline="") as f:
            wtr = csv.DictWriter(f, ["epoch", "lr", "train_loss", "val_psnr"])
            wtr.writeheader()
            wtr.writerows(log)
    return best, log


def _validate(arch, net, params, bn_state, val_entries, bank, dtype, scales,
              out_scales):
    if not val_entries:
        return float("nan")
    vals = []
    for e in val_entries:
        lim, full = load_pair(e)
        rest = _infer_net(arch, net, params, bn_state, lim, bank, dtype,
                          scales, out_scales)
        vals.append(metrics.psnr(rest, full))
    return float(np.mean(vals))


def _infer_net(arch, net, params, bn_state, limited, bank, dtype=np.float32,
               scales=None, out_scales=None):
    inp, _ = _stacks_for(arch, limited, np.zeros_like(limited), bank)
    if scales is None:
        scales = np.ones(inp.shape[0], dtype)
    if out_scales is None:
        out_scales = scales
    x = (inp / scales.astype(np.float64)[:, None, None])[None].astype(dtype)
    pred, _ = forward(net, params, x, mode="eval", bn_state=bn_state)
    resid = (pred[0] * out_scales[:, None, None]).astype(np.float64)
    if arch.kind == "wavelet_unet":
        stack = dwt.decompose(limited, bank)
        restored = dwt.CoefficientStack(channels=stack.channels - resid,
                                        meta=stack.meta)
        return dwt.recompose(restored, bank)
    return limited - resid[0]


def infer_wavelet(ckpt, limited, bank=None):
    """decompose -> predict 15-channel artifact -> subtract -> recompose."""
    if ckpt.arch.kind != "wavelet_unet":
        raise ValueError("checkpoint is not a wavelet_unet")
    data = limited.data if isinstance(limited, tomo.Image) else limited
    if bank is None:
        bank = dwt.build_filter_bank(data.shape[0], ckpt.arch.dwt_levels)
    return _infer_net(ckpt.arch, ckpt.network(), ckpt.params, ckpt.bn_state,
                      data, bank, scales=ckpt.scales,
                      out_scales=ckpt.out_scales)


def infer_image(ckpt, limited):
    """restored = limited - predicted residual, single channel."""
    if ckpt.arch.kind == "wavelet_unet":
        raise ValueError("checkpoint is a wavelet_unet; use infer_wavelet")
    data = limited.data if isinstance(limited, tomo.Image) else limited
    return _infer_net(ckpt.arch, ckpt.network(), ckpt.params, ckpt.bn_state,
                      data, None, scales=ckpt.scales,
                      out_scales=ckpt.out_scales)


def infer(ckpt, limited, bank=None):
    if ckpt.arch.kind == "wavelet_unet":
        return infer_wavelet(ckpt, limited, bank)
    return infer_image(ckpt, limited)


# ---------------------------------------------------------------------------
# checkpoint (de)serialization

def save_checkpoint(path, ckpt):
    tensors = {}
    for group, d in (("param", ckpt.params), ("mom", ckpt.momentum),
                     ("bn", ckpt.bn_state)):
        for layer, sub in d.items():
            for key, arr in sub.items():
                tensors[f"{group}/{layer}/{key}"] = arr
    if ckpt.scales is not None:
        tensors["scale/input/rms"] = ckpt.scales
    if ckpt.out_scales is not None:
        tensors["scale/output/rms"] = ckpt.out_scales
    meta = {"arch": asdict(ckpt.arch), "epoch": ckpt.epoch,
            "seed": ckpt.seed, "val_psnr": ckpt.val_psnr}
    io.write_checkpoint(path, tensors, meta)


def load_checkpoint(path):
    tensors, meta = io.read_checkpoint(path)
    groups = {"param": {}, "mom": {}, "bn": {}, "scale": {}}
    for name, arr in tensors.items():
        group, layer, key = name.split("/")
        groups[group].setdefault(layer, {})[key] = arr
    scales = groups["scale"].get("input", {}).get("rms")
    out_scales = groups["scale"].get("output", {}).get("rms")
    return Checkpoint(arch=ArchSpec(**meta["arch"]),
                      params=groups["param"], momentum=groups["mom"],
                      bn_state=groups["bn"], epoch=meta["epoch"],
                      seed=meta["seed"], val_psnr=meta["val_psnr"],
                      scales=None if scales is None
                      else scales.astype(np.float32),
                      out_scales=None if out_scales is None
                      else out_scales.astype(np.float32))


# ---------------------------------------------------------------------------
# evaluation

def _tv_reconstruction(entry, manifest, tv_params):
    """Re-simulate the limited sinogram from the phantom seed and run
    POCS-TV (images alone do not carry the projection data)."""
    n = manifest.n
    geom = tomo.default_geometry(n, arc_deg=180.0, n_angles=manifest.n_angles)
    ph = tomo.random_phantom(n, entry["seed"], k=8)
    sino = tomo.restrict_angles(tomo.forward_project(ph, geom),
                                0.0, entry["arc_deg"])
    img, _ = tomo.pocs_tv(sino, n, tv_params)
    return img.data


def evaluate(manifest, methods, checkpoints=None, tv_params=None,
             split="val", csv_path=None):
    """Per-slice PSNR/NRMSE/SSIM of each method against the full-arc image.

    methods: ordered names from {fbp, tv, wavelet_unet, image_unet,
    image_plain}; network methods need a checkpoint in `checkpoints`.
    Returns (rows, means) where means maps method -> metric dict.
    """
    checkpoints = checkpoints or {}
    banks = {}
    rows = []
    for e in manifest.split(split):
        lim, full = load_pair(e)
        for m in methods:
            if m == "fbp":
                rest = lim
            elif m == "tv":
                rest = _tv_reconstruction(e, manifest,
                                          tv_params or tomo.TvParams())
            else:
                ck = checkpoints.get(m)
                if ck is None:
                    raise ValueError(f"no checkpoint for method {m!r}")
                if ck.arch.kind == "wavelet_unet":
                    bank = banks.setdefault(
                        manifest.n,
                        dwt.build_filter_bank(manifest.n,
                                              ck.arch.dwt_levels))
                    rest = infer_wavelet(ck, lim, bank)
                else:
                    rest = infer_image(ck, lim)
            rows.append(metrics.MetricsRow(
                slice_id=str(e["id"]), method=m,
                psnr_db=metrics.psnr(rest, full),
                nrmse=metrics.nrmse(rest, full),
                ssim=metrics.ssim(rest, full)))
    means = {}
    for m in methods:
        sel = [r for r in rows if r.method == m]
        means[m] = {"psnr_db": float(np.mean([r.psnr_db for r in sel])),
                    "nrmse": float(np.mean([r.nrmse for r in sel])),
                    "ssim": float(np.mean([r.ssim for r in sel]))}
    if csv_path:
        with open(csv_path, "w", newline="") as f:
            wtr = csv.writer(f)
            wtr.writerow(["slice", "method", "psnr_db", "nrmse", "ssim"])
            for r in rows:
                wtr.writerow([r.slice_id, r.method, f"{r.psnr_db:.6f}",
                              f"{r.nrmse:.6f}", f"{r.ssim:.6f}"])
            for m in methods:
                mm = means[m]
                wtr.writerow(["mean", m, f"{mm['psnr_db']:.6f}",
                              f"{mm['nrmse']:.6f}", f"{mm['ssim']:.6f}"])
    return rows, means
