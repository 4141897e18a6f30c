"""Command-line surface tying the pipeline together.

Subcommands: phantom, project, fbp, tv, dataset, train, infer, eval,
spectrum. Each accepts --config <json> (flat dotted keys, e.g.
"train.epochs") plus flags that override the config. Exit codes: 0 ok,
1 usage error, 2 runtime failure.
"""

import argparse
import json
import sys

import numpy as np

from . import dwt, io, models, spectrum, tomo


class UsageError(ValueError):
    pass


def _load_config(path):
    try:
        with open(path) as f:
            cfg = json.load(f)
    except FileNotFoundError:
        raise UsageError(f"config file not found: {path}")
    except json.JSONDecodeError as e:
        raise UsageError(f"malformed config {path}: {e}")
    if not isinstance(cfg, dict):
        raise UsageError("config must be a JSON object with dotted keys")
    return cfg


def _cfg(args, key, default=None, cast=None):
    """Flag value if given, else dotted config key, else default."""
    flag = key.split(".")[-1].replace("-", "_")
    v = getattr(args, flag, None)
    if v is None:
        v = (args._config or {}).get(key, default)
    if v is not None and cast is not None:
        v = cast(v)
    return v


def _read_image(path):
    arr = io.read_tensor(path)
    n = arr.shape[0]
    return tomo.Image(n=n, pixel_size=1.0, data=arr)


def _export(args, data, out):
    io.write_tensor(out, data)
    if getattr(args, "png", None):
        io.write_png(args.png, data)


def cmd_phantom(args):
    n = _cfg(args, "grid", 128, int)
    kind = _cfg(args, "phantom.kind", "shepp_logan")
    if kind == "shepp_logan":
        img = tomo.shepp_logan(n)
    elif kind == "random":
        img = tomo.random_phantom(n, _cfg(args, "seed", 0, int),
                                  k=_cfg(args, "phantom.ellipses", 8, int))
    else:
        raise UsageError(f"unknown phantom kind {kind!r}")
    _export(args, img.data, args.out)
    return 0


def cmd_project(args):
    img = _read_image(args.image)
    geom = tomo.default_geometry(
        img.n, arc_deg=_cfg(args, "arc", 180.0, float),
        n_angles=_cfg(args, "project.n_angles", None,
                      lambda v: None if v is None else int(v)))
    sino = tomo.forward_project(img, geom)
    _export(args, sino.data, args.out)
    return 0


def _sino_from_file(args, path, arc):
    data = io.read_tensor(path)
    geom = tomo.default_geometry(
        _cfg(args, "grid", int(round(data.shape[1] / np.sqrt(2))), int),
        arc_deg=arc, n_angles=data.shape[0])
    geom = tomo.Geometry(n_angles=data.shape[0], angle_start_deg=0.0,
                         angle_end_deg=arc, n_det=data.shape[1],
                         det_spacing=geom.det_spacing)
    return tomo.Sinogram(geometry=geom, data=data)


def cmd_fbp(args):
    n = _cfg(args, "grid", 128, int)
    sino = _sino_from_file(args, args.sino, _cfg(args, "arc", 180.0, float))
    lo = _cfg(args, "restrict.lo", None, float)
    hi = _cfg(args, "restrict.hi", None, float)
    if lo is not None and hi is not None:
        sino = tomo.restrict_angles(sino, lo, hi)
    img = tomo.fbp(sino, n, window=_cfg(args, "fbp.window", "ramlak"))
    _export(args, img.data, args.out)
    return 0


def cmd_tv(args):
    n = _cfg(args, "grid", 128, int)
    sino = _sino_from_file(args, args.sino, _cfg(args, "arc", 180.0, float))
    params = tomo.TvParams(
        n_iters=_cfg(args, "tv.n_iters", 50, int),
        sart_relax=_cfg(args, "tv.sart_relax", 1.0, float),
        n_tv_steps=_cfg(args, "tv.n_tv_steps", 10, int),
        tv_step_scale=_cfg(args, "tv.tv_step_scale", 0.2, float))
    img, log = tomo.pocs_tv(sino, n, params)
    _export(args, img.data, args.out)
    if getattr(args, "log", None):
        with open(args.log, "w") as f:
            json.dump(log, f)
    return 0


def cmd_dataset(args):
    models.make_dataset(
        n_images=_cfg(args, "dataset.n_images", 20, int),
        n=_cfg(args, "grid", 128, int),
        arc_deg=_cfg(args, "arc", 120.0, float),
        seed=_cfg(args, "seed", 0, int),
        out_dir=args.out,
        n_val=_cfg(args, "dataset.n_val", None,
                   lambda v: None if v is None else int(v)),
        n_angles=_cfg(args, "dataset.n_angles", None,
                      lambda v: None if v is None else int(v)))
    return 0


def _arch_from(args):
    return models.ArchSpec(
        kind=_cfg(args, "arch", "wavelet_unet"),
        depth=_cfg(args, "train.depth", 5, int),
        base_channels=_cfg(args, "train.base_channels", 12, int))


def cmd_train(args):
    manifest = models.DatasetManifest.load(args.manifest)
    arch = _arch_from(args)
    cfg = models.TrainConfig(
        epochs=_cfg(args, "epochs", 30, int),
        batch_size=_cfg(args, "train.batch_size", 4, int),
        patch_size=_cfg(args, "train.patch_size", 96, int),
        patches_per_image=_cfg(args, "train.patches_per_image", 1, int),
        lr_start=_cfg(args, "train.lr_start", 1e-3, float),
        lr_end=_cfg(args, "train.lr_end", 1e-5, float),
        weight_decay=_cfg(args, "train.weight_decay", 1e-4, float),
        momentum=_cfg(args, "train.momentum", 0.9, float),
        seed=_cfg(args, "seed", 0, int),
        arc_deg=manifest.arc_deg)
    ckpt, _ = models.train(arch, cfg, manifest,
                           log_path=getattr(args, "log", None))
    models.save_checkpoint(args.out, ckpt)
    return 0


def cmd_infer(args):
    ckpt = models.load_checkpoint(args.checkpoint)
    img = _read_image(args.image)
    restored = models.infer(ckpt, img)
    _export(args, restored, args.out)
    return 0


def cmd_eval(args):
    manifest = models.DatasetManifest.load(args.manifest)
    methods = [m.strip() for m in
               _cfg(args, "eval.methods", "fbp").split(",") if m.strip()]
    ckpts = {}
    for spec in (getattr(args, "ckpt", None) or []):
        name, _, path = spec.partition("=")
        if not path:
            raise UsageError("--ckpt expects method=path")
        ckpts[name] = models.load_checkpoint(path)
    tv_params = tomo.TvParams(n_iters=_cfg(args, "tv.n_iters", 30, int))
    models.evaluate(manifest, methods, checkpoints=ckpts,
                    tv_params=tv_params, csv_path=args.out)
    return 0


def cmd_spectrum(args):
    limited = _read_image(args.limited)
    full = _read_image(args.full)
    spec, logspec = spectrum.artifact_spectrum(limited, full)
    arc = _cfg(args, "arc", 120.0, float)
    mask = spectrum.wedge_mask(limited.n, 0.0, arc)
    ratio = spectrum.wedge_energy_ratio(spec, mask)
    io.write_tensor(args.out, spec)
    if getattr(args, "png", None):
        io.write_png(args.png, logspec)
    print(json.dumps({"wedge_energy_ratio": ratio,
                      "wedge_area_fraction":
                          float(mask.data.sum() / (mask.n ** 2 - 1))}))
    return 0


def _build_parser():
    p = argparse.ArgumentParser(prog="lact",
                                description="limited-angle CT toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, handler, **kw):
        sp = sub.add_parser(name, **kw)
        sp.add_argument("--config", default=None, help="JSON config file")
        sp.add_argument("--threads", type=int, default=None,
                        help="worker threads (all kernels are serial; "
                             "only 1 is supported)")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--grid", type=int, default=None)
        sp.add_argument("--arc", type=float, default=None)
        fn(sp)
        sp.set_defaults(handler=handler)
        return sp

    add("phantom", lambda sp: (
        sp.add_argument("--kind", dest="kind", default=None),
        sp.add_argument("--out", required=True),
        sp.add_argument("--png", default=None)),
        cmd_phantom, help="synthesize a phantom image")
    add("project", lambda sp: (
        sp.add_argument("--image", required=True),
        sp.add_argument("--out", required=True),
        sp.add_argument("--png", default=None)),
        cmd_project, help="forward-project an image")
    add("fbp", lambda sp: (
        sp.add_argument("--sino", required=True),
        sp.add_argument("--out", required=True),
        sp.add_argument("--png", default=None)),
        cmd_fbp, help="filtered backprojection")
    add("tv", lambda sp: (
        sp.add_argument("--sino", required=True),
        sp.add_argument("--out", required=True),
        sp.add_argument("--png", default=None),
        sp.add_argument("--log", default=None)),
        cmd_tv, help="POCS-TV reconstruction")
    add("dataset", lambda sp: (
        sp.add_argument("--out", required=True),),
        cmd_dataset, help="synthesize a training dataset")
    add("train", lambda sp: (
        sp.add_argument("--manifest", required=True),
        sp.add_argument("--arch", default=None,
                        choices=list(models.ARCH_KINDS)),
        sp.add_argument("--epochs", type=int, default=None),
        sp.add_argument("--out", required=True),
        sp.add_argument("--log", default=None)),
        cmd_train, help="train a residual network")
    add("infer", lambda sp: (
        sp.add_argument("--checkpoint", required=True),
        sp.add_argument("--image", required=True),
        sp.add_argument("--out", required=True),
        sp.add_argument("--png", default=None)),
        cmd_infer, help="restore a limited-angle image")
    add("eval", lambda sp: (
        sp.add_argument("--manifest", required=True),
        sp.add_argument("--methods", dest="methods", default=None),
        sp.add_argument("--ckpt", action="append", default=None,
                        metavar="METHOD=PATH"),
        sp.add_argument("--out", required=True)),
        cmd_eval, help="metrics table over a dataset split")
    add("spectrum", lambda sp: (
        sp.add_argument("--limited", required=True),
        sp.add_argument("--full", required=True),
        sp.add_argument("--out", required=True),
        sp.add_argument("--png", default=None)),
        cmd_spectrum, help="artifact spectrum and wedge energy")
    return p


def cli_main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else 1
    try:
        args._config = _load_config(args.config) if args.config else None
        threads = _cfg(args, "threads", 1, int)
        if threads != 1:
            raise UsageError("only --threads 1 is supported")
        return args.handler(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (FileNotFoundError, io.FormatError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except RuntimeError as e:
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


def main():
    sys.exit(cli_main())
