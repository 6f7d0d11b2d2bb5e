"""``rism`` command line: simulate | tune-cfar | train | eval | infer | render.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numeric failure.
``RISM_THREADS`` caps the BLAS thread pool.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import shutil
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from .cfar import Baseline, CfarConfig, tune
from .config import RunConfig
from .dataset import DatasetIOError, SimConfig, atomic_write_text, load_dataset, make_dataset, write_dataset
from .evaluation import UntrainedMethodError, compare_methods
from .grids import build_polar_cart_map, resample_polar_to_cart
from .inference import FREE, OCCUPIED, UNKNOWN, analytic_marginal, mc_marginal, uncertainty_segment
from .nn.network import IsmOutput
from .nn.weights import WeightFileError, load_weights
from .raster import to_u8, write_f32, write_pgm
from .training import DeepIsm, NumericError, TrainConfig, Trainer, features, train
from .vloss import LossConfig

logger = logging.getLogger("rism")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
RESULT_COLUMNS = ("method", "iou_occupied", "iou_free", "mean_iou")
BASELINE_KINDS = ("cfar1d", "cfar2d", "static")
ALL_METHODS = ("deep",) + BASELINE_KINDS


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


def _csv_floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _csv_ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _methods(text: str) -> list[str]:
    names = [m.strip() for m in text.split(",") if m.strip()]
    bad = [m for m in names if m not in ALL_METHODS]
    if bad or not names:
        raise argparse.ArgumentTypeError(f"methods must be drawn from {','.join(ALL_METHODS)}")
    return names


def _pmap(sim: SimConfig):
    return build_polar_cart_map(
        sim.num_azimuths, sim.num_range_bins, sim.range_resolution, sim.height, sim.width, sim.cell_size
    )


def _load(path: str):
    try:
        return load_dataset(path)
    except DatasetIOError as exc:
        raise DataError(str(exc)) from exc


def _prepare_out_dir(path: Path, force: bool) -> None:
    if path.exists() and not path.is_dir():
        raise DataError(f"{path} exists and is not a directory")
    if path.is_dir() and any(path.iterdir()):
        if not force:
            raise DataError(f"{path} is not empty; pass --force to overwrite")
        shutil.rmtree(path)
    path.mkdir(parents=True, exist_ok=True)


# -- commands -------------------------------------------------------------


def cmd_simulate(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    out = Path(args.out)
    _prepare_out_dir(out, args.force)
    sim = SimConfig(complexity=args.complexity, test_fraction=args.test_fraction)
    ds = make_dataset(args.n, sim, args.seed)
    run = RunConfig(sim=sim, master_seed=args.seed, data_dir=str(out))
    write_dataset(ds, out, extra={"run_config": run.to_dict()})
    occ = sum(int(s.labels.occupancy.sum()) for s in ds.samples)
    print(f"wrote {len(ds)} samples ({len(ds.train_indices)} train / {len(ds.test_indices)} test) to {out}")
    print(f"occupied label cells: {occ}")
    return EXIT_OK


def cmd_tune_cfar(args) -> int:
    ds = _load(args.data)
    pmap = _pmap(ds.config)
    kinds = [m for m in args.methods if m in BASELINE_KINDS]
    results = {}
    for kind in kinds:
        res = tune(kind, ds.train, pmap)
        cfg = asdict(res.config) if isinstance(res.config, CfarConfig) else res.config
        results[kind] = {"config": cfg, "train_mean_iou": res.mean_iou, "evaluated": res.evaluated}
        print(f"{Baseline.NAMES[kind]}: {cfg} train mean IoU {res.mean_iou:.4f}")
    atomic_write_text(args.out, json.dumps(results, sort_keys=True, indent=2) + "\n")
    return EXIT_OK


def _train_config(args) -> TrainConfig:
    loss = LossConfig(args.omega, args.alpha, args.prior_gamma, args.samples_l)
    return TrainConfig(
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        seed=args.seed,
        augment=not args.no_augment,
        eval_samples=args.eval_samples,
        loss=loss,
    )


def cmd_train(args) -> int:
    ds = _load(args.data)
    out = Path(args.out)
    if args.resume:
        try:
            trainer = Trainer.resume(out)
        except FileNotFoundError as exc:
            raise DataError(f"cannot resume from {out}: {exc.filename} missing") from exc
        trainer.cfg = replace(trainer.cfg, epochs=args.epochs)
        trainer.fit(ds.train)
    else:
        _prepare_out_dir(out, args.force)
        run = RunConfig(sim=ds.config, master_seed=ds.master_seed, data_dir=str(args.data), out_dir=str(out))
        ch = tuple(args.channels)
        net_cfg = run.network_for_sim(encoder_channels=ch, decoder_channels=ch)
        tcfg = _train_config(args)
        run = replace(run, network=net_cfg, train=tcfg)
        out.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out / "run_config.json", run.to_json())
        trainer = train(ds.train, net_cfg, tcfg, out)
    last = trainer.rows[-1]
    print(f"trained {trainer.epochs_done} epochs; final loss {last['loss']:.6g} "
          f"(likelihood {last['likelihood']:.6g}, kl {last['kl']:.6g}); weights in {out}")
    return EXIT_OK


def _weights(path: str):
    try:
        return load_weights(path)
    except FileNotFoundError as exc:
        raise DataError(f"weight file {path} not found") from exc
    except WeightFileError as exc:
        raise DataError(str(exc)) from exc


def _check_dims(net, sim: SimConfig) -> None:
    c = net.config
    got = (c.num_azimuths, c.num_range_bins, c.height, c.width)
    want = (sim.num_azimuths, sim.num_range_bins, sim.height, sim.width)
    if got != want:
        raise DataError(f"network dims {got} do not match dataset dims {want}")


def cmd_eval(args) -> int:
    ds = _load(args.data)
    pmap = _pmap(ds.config)
    tuned = {}
    if any(m in BASELINE_KINDS for m in args.methods):
        if not args.baselines or not Path(args.baselines).exists():
            raise DataError("baseline methods requested but no tuned configs found; run tune-cfar and pass --baselines")
        tuned = json.loads(Path(args.baselines).read_text())
    methods = []
    for name in args.methods:
        if name == "deep":
            if not args.weights:
                raise DataError("method 'deep' needs --weights")
            net = _weights(args.weights)
            _check_dims(net, ds.config)
            methods.append(DeepIsm(net))
        else:
            if name not in tuned:
                raise DataError(f"no tuned config for {name} in {args.baselines}")
            raw = tuned[name]["config"]
            cfg = CfarConfig(**raw) if isinstance(raw, dict) else float(raw)
            methods.append(Baseline(name, pmap, cfg))
    reports = compare_methods(ds.test, methods)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(RESULT_COLUMNS)
    for r in reports:
        writer.writerow([r.method, f"{r.iou_occupied:.6f}", f"{r.iou_free:.6f}", f"{r.mean_iou:.6f}"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    atomic_write_text(out / "results.csv", buf.getvalue())
    width = max(len(r.method) for r in reports)
    print(f"{'method':<{width}}  occupied  free    mean")
    for r in reports:
        print(f"{r.method:<{width}}  {r.iou_occupied:.4f}    {r.iou_free:.4f}  {r.mean_iou:.4f}")
    return EXIT_OK


_SEG_GREY = {FREE: 0, OCCUPIED: 255, UNKNOWN: 128}


def _segment_image(labels: np.ndarray) -> np.ndarray:
    img = np.zeros(labels.shape, dtype=np.uint8)
    for code, grey in _SEG_GREY.items():
        img[labels == code] = grey
    return img


def cmd_infer(args) -> int:
    ds = _load(args.data)
    net = _weights(args.weights)
    _check_dims(net, ds.config)
    for idx in args.index:
        if not 0 <= idx < len(ds):
            raise DataError(f"sample index {idx} out of range (dataset has {len(ds)} samples)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for idx in args.index:
        sample = ds.samples[idx]
        pred = net.predict(features(sample.scan.power)[None, None])
        mu, gamma = pred.mu[0, 0], pred.gamma[0, 0]
        single = IsmOutput(mu, gamma)
        p = analytic_marginal(single).p
        stem = out / f"sample_{idx:05d}"
        for name, values, img in (
            ("p", p, to_u8(p, 0.0, 1.0)),
            ("mu", mu, to_u8(mu)),
            ("gamma", gamma, to_u8(gamma)),
        ):
            write_f32(f"{stem}_{name}.f32", values)
            write_pgm(f"{stem}_{name}.pgm", img)
        for g in args.gamma_max:
            seg = uncertainty_segment(single, g)
            write_pgm(f"{stem}_seg_gmax{g:g}.pgm", _segment_image(seg.labels))
        if args.mc_samples:
            p_mc = mc_marginal(single, args.mc_samples, seed=(args.seed, idx)).p
            write_f32(f"{stem}_p_mc.f32", p_mc)
            print(f"sample {idx}: max |mc - analytic| = {np.abs(p_mc - p).max():.4g}")
    print(f"wrote rasters for {len(args.index)} sample(s) to {out}")
    return EXIT_OK


def cmd_render(args) -> int:
    ds = _load(args.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pmap = _pmap(ds.config)
    for idx in args.index:
        if not 0 <= idx < len(ds):
            raise DataError(f"sample index {idx} out of range (dataset has {len(ds)} samples)")
        s = ds.samples[idx]
        stem = out / f"sample_{idx:05d}"
        logp = np.log1p(s.scan.power)
        write_pgm(f"{stem}_polar.pgm", to_u8(logp))
        write_pgm(f"{stem}_cart.pgm", to_u8(resample_polar_to_cart(pmap, logp)))
        write_pgm(f"{stem}_occupancy.pgm", s.labels.occupancy * np.uint8(255))
        write_pgm(f"{stem}_observability.pgm", (s.labels.observability * np.uint8(127)).astype(np.uint8))
        if s.world is not None:
            write_pgm(f"{stem}_world.pgm", s.world.occupancy_truth.astype(np.uint8) * np.uint8(255))
    print(f"rendered {len(args.index)} sample(s) to {out}")
    return EXIT_OK


# -- parser ---------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rism", description="Radar inverse sensor model toolkit")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesise a radar/lidar dataset")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--complexity", type=int, default=SimConfig.complexity)
    p.add_argument("--test-fraction", type=float, default=SimConfig.test_fraction)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tune-cfar", help="grid-search baseline detectors on the train split")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="JSON file for the tuned configs")
    p.add_argument("--methods", type=_methods, default=list(BASELINE_KINDS))
    p.set_defaults(func=cmd_tune_cfar)

    p = sub.add_parser("train", help="train the network on the train split")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="run directory")
    p.add_argument("--epochs", type=int, default=TrainConfig.epochs)
    p.add_argument("--batch-size", type=int, default=TrainConfig.batch_size)
    p.add_argument("--lr", type=float, default=TrainConfig.learning_rate)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--omega", type=float, default=LossConfig.omega)
    p.add_argument("--alpha", type=float, default=LossConfig.alpha)
    p.add_argument("--prior-gamma", type=float, default=LossConfig.prior_gamma)
    p.add_argument("--samples-l", type=int, default=LossConfig.num_samples)
    p.add_argument("--channels", type=_csv_ints, default=[16, 32, 64], help="per-stage widths, finest first")
    p.add_argument("--eval-samples", type=int, default=TrainConfig.eval_samples)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--resume", action="store_true", help="continue the run in --out up to --epochs")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="compare methods on the test split")
    p.add_argument("--data", required=True)
    p.add_argument("--weights")
    p.add_argument("--baselines", help="JSON written by tune-cfar")
    p.add_argument("--methods", type=_methods, default=list(ALL_METHODS))
    p.add_argument("--out", required=True, help="directory for results.csv")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="write probability, mean, deviation and segmentation rasters")
    p.add_argument("--data", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--index", type=_csv_ints, default=[0])
    p.add_argument("--gamma-max", type=_csv_floats, default=[])
    p.add_argument("--mc-samples", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("render", help="write input and label rasters for inspection")
    p.add_argument("--data", required=True)
    p.add_argument("--index", type=_csv_ints, default=[0])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)
    return parser


def _thread_cap() -> int | None:
    raw = os.environ.get("RISM_THREADS")
    if raw is None or raw == "":
        return None
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"RISM_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"RISM_THREADS must be a positive integer, got {raw!r}")
    return n


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        if getattr(args, "mc_samples", 0) < 0:
            raise UsageError("--mc-samples must be non-negative")
        if any(g <= 0 for g in getattr(args, "gamma_max", [])):
            raise UsageError("--gamma-max values must be positive")
        with threadpool_limits(limits=_thread_cap()):
            return args.func(args)
    except UsageError as exc:
        print(f"rism: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DatasetIOError, WeightFileError, UntrainedMethodError) as exc:
        print(f"rism: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"rism: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"rism: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
