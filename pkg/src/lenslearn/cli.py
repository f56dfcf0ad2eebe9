"""Command-line front door: prepare, simulate, train-recon, train-clf, report.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
Every subcommand writes a run manifest (even on failure) and is
idempotent: identical inputs and seeds reproduce identical output bytes.
LENSLEARN_THREADS caps BLAS worker counts (default 1, fully deterministic).
"""

from __future__ import annotations

import os


def _cap_threads() -> None:
    n = os.environ.get("LENSLEARN_THREADS", "1")
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, n)


_cap_threads()

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import data as dio
from .classifier import ClassifierConfig, build_classifier
from .config import ConfigError, load_config, optics_config_from
from .data import LabeledImageSet, ParseError, ValidationError
from .manifest import RunManifest, read_manifest
from .optics import build_transfer_operator, render_capture, render_dataset
from .optim import Adam
from .pgm import confusion_heatmap, recon_grid, write_pgm
from .tensor import Tensor
from .training import (
    MetricRecord,
    NumericError,
    TrainPlan,
    evaluate_recon,
    predict_recon,
    resolve_route,
    train_classifier,
    train_reconstruction,
    write_metrics_csv,
)
from .unet import ConfigError as NetConfigError
from .unet import UNetConfig, build_unet

TRAIN_SET = "train.llds"
TEST_SET = "test.llds"
SENSOR_TRAIN = "sensor_train.llds"
SENSOR_TEST = "sensor_test.llds"
OPTICS_SIDECAR = "optics.json"


def _print_class_counts(name: str, st: LabeledImageSet) -> None:
    counts = " ".join(f"{c}:{n}" for c, n in enumerate(st.class_counts()))
    print(f"{name}: {st.count} images, {st.num_classes} classes [{counts}]")


def _load_pair(data_dir: Path, names) -> list:
    sets = []
    for name in names:
        path = data_dir / name
        if not path.exists():
            raise ValidationError(f"missing dataset file {path}; run the earlier stage first")
        sets.append(dio.load_packed(path))
    return sets


# ---------------------------------------------------------------------------
# prepare

def cmd_prepare(args, cfg, man: RunManifest) -> int:
    dcfg = cfg["data"]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if args.packed:
        man.add_input("packed", args.packed)
        st = dio.load_packed(args.packed)
    else:
        if not (args.images and args.labels):
            raise ConfigError("prepare needs either --packed or both --images and --labels")
        man.add_input("images", args.images)
        man.add_input("labels", args.labels)
        st = dio.load_idx(args.images, args.labels)

    st = dio.normalize_to_object_size(st, dcfg["object_hw"])
    if dcfg["dataset"] == "mnist6":
        fraction = dcfg["per_class_fraction"]
        st = dio.subsample_mnist6(
            st,
            target_per_class=dcfg["target_per_class"],
            seed=dcfg["seed"],
            per_class_fraction=fraction if fraction > 0 else None,
        )
    _print_class_counts("prepared", st)

    train, test = dio.split_train_test(
        st, dio.SplitSpec(train_fraction=dcfg["train_fraction"], seed=dcfg["seed"])
    )
    dio.save_packed(out_dir / TRAIN_SET, train)
    dio.save_packed(out_dir / TEST_SET, test)
    _print_class_counts("train", train)
    _print_class_counts("test", test)

    man.add_output(out_dir / TRAIN_SET)
    man.add_output(out_dir / TEST_SET)
    man.seeds["data"] = dcfg["seed"]
    man.metrics.update(
        {
            "dataset": dcfg["dataset"],
            "total": st.count,
            "num_classes": st.num_classes,
            "train_count": train.count,
            "test_count": test.count,
        }
    )
    return 0


# ---------------------------------------------------------------------------
# simulate

def cmd_simulate(args, cfg, man: RunManifest) -> int:
    data_dir = Path(args.data_dir)
    out_dir = Path(args.out_dir) if args.out_dir else data_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    ocfg = optics_config_from(cfg)
    render_seed = cfg["optics"]["render_seed"]

    train, test = _load_pair(data_dir, (TRAIN_SET, TEST_SET))
    for name, st in (("train", train), ("test", test)):
        if st.images.shape[2:] != (ocfg.object_h, ocfg.object_w):
            raise ValidationError(
                f"{name} images are {st.images.shape[2:]}, optics expects "
                f"{(ocfg.object_h, ocfg.object_w)}"
            )
    man.add_input("train", data_dir / TRAIN_SET)
    man.add_input("test", data_dir / TEST_SET)

    op = build_transfer_operator(ocfg)
    condition = op.condition_estimate()
    print(f"transfer operator: {op.T.shape[0]}x{op.T.shape[1]}, "
          f"condition estimate {condition:.4g}")

    if args.check_linearity:
        rng = np.random.default_rng(0)
        a = rng.uniform(0.0, 0.5, size=(ocfg.object_h, ocfg.object_w)).astype(np.float32)
        b = rng.uniform(0.0, 0.5, size=(ocfg.object_h, ocfg.object_w)).astype(np.float32)
        quiet = type(ocfg)(**{**ocfg.to_dict(), "read_noise_sigma": 0.0})
        quiet_op = type(op)(T=op.T, config=quiet)
        rng0 = np.random.default_rng(0)
        sa = render_capture(Tensor(a), quiet_op, rng0).data
        sb = render_capture(Tensor(b), quiet_op, rng0).data
        sab = render_capture(Tensor(a + b), quiet_op, rng0).data
        err = float(np.abs(sab - (sa + sb)).max() / max(np.abs(sab).max(), 1e-12))
        print(f"linearity check: max relative deviation {err:.3g}")
        if err > 1e-6:
            raise NumericError(f"superposition violated: relative deviation {err:.3g}")

    for name, st, offset in (
        (SENSOR_TRAIN, train, 0),
        (SENSOR_TEST, test, 1_000_000),
    ):
        frames = render_dataset(st.images.data, op, seed=render_seed + offset)
        sensor_set = LabeledImageSet(
            images=Tensor(np.minimum(frames, 1.0)),
            labels=st.labels.copy(),
            num_classes=st.num_classes,
            provenance=st.provenance + "+sensor",
        )
        dio.save_packed(out_dir / name, sensor_set)
        man.add_output(out_dir / name)

    sidecar = {
        "optics": ocfg.to_dict(),
        "operator_sha256": op.content_hash(),
        "condition_estimate": condition,
        "render_seed": render_seed,
    }
    with open(out_dir / OPTICS_SIDECAR, "w", encoding="utf-8") as f:
        json.dump(sidecar, f, indent=2, sort_keys=True)
        f.write("\n")
    man.add_output(out_dir / OPTICS_SIDECAR)
    man.seeds.update({"optics": ocfg.seed, "render": render_seed})
    man.metrics.update(
        {"condition_estimate": condition, "operator_sha256": op.content_hash()}
    )
    return 0


# ---------------------------------------------------------------------------
# train-recon

def _load_recon_arrays(data_dir: Path, cfg, man: RunManifest):
    gt_train, gt_test, sn_train, sn_test = _load_pair(
        data_dir, (TRAIN_SET, TEST_SET, SENSOR_TRAIN, SENSOR_TEST)
    )
    for name in (TRAIN_SET, TEST_SET, SENSOR_TRAIN, SENSOR_TEST):
        man.add_input(name, data_dir / name)
    seed = cfg["recon"]["target_noise_seed"]
    tr_in, tr_tg = dio.preprocess_recon_set(
        sn_train.images.data, gt_train.images.data, noise_seed=seed
    )
    te_in, te_tg = dio.preprocess_recon_set(
        sn_test.images.data, gt_test.images.data, noise_seed=seed + 1_000_000
    )
    return (gt_train, gt_test, sn_train, sn_test), (tr_in, tr_tg, te_in, te_tg)


def _unet_from_config(cfg) -> "UNetConfig":
    r = cfg["recon"]
    return UNetConfig(
        depth=r["depth"],
        base_channels=r["base_channels"],
        input_hw=r["input_hw"],
        residual_in_block=r["residual_in_block"],
    )


def cmd_train_recon(args, cfg, man: RunManifest) -> int:
    data_dir = Path(args.data_dir)
    run_dir = Path(args.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    r = cfg["recon"]

    sets, arrays = _load_recon_arrays(data_dir, cfg, man)
    gt_train, gt_test, _, _ = sets
    tr_in, tr_tg, te_in, te_tg = arrays

    net = build_unet(_unet_from_config(cfg), seed=r["init_seed"])
    plan = TrainPlan(
        max_epochs=r["epochs"],
        batch_size=r["batch_size"],
        shuffle_seed=r["shuffle_seed"],
        checkpoint_every=r["checkpoint_every"],
    )
    adam = Adam(list(net.named_parameters()), lr=r["lr"])
    print(f"reconstruction net: {net.count_parameters()} parameters, "
          f"{tr_in.shape[0]} train / {te_in.shape[0]} test pairs")
    net, records, saved = train_reconstruction(
        net, tr_in, tr_tg, te_in, te_tg, plan, adam,
        checkpoint_dir=str(run_dir), log=print,
    )
    write_metrics_csv(run_dir / "metrics.csv", records)
    man.add_output(run_dir / "metrics.csv")
    for path in saved:
        man.add_output(path)

    fin_tr = evaluate_recon(net, tr_in, tr_tg, plan.batch_size)
    fin_te = evaluate_recon(net, te_in, te_tg, plan.batch_size)
    sidecar = data_dir / OPTICS_SIDECAR
    condition = None
    if sidecar.exists():
        with open(sidecar, encoding="utf-8") as f:
            condition = json.load(f).get("condition_estimate")
        man.add_input(OPTICS_SIDECAR, sidecar)
    man.seeds.update({"init": r["init_seed"], "shuffle": r["shuffle_seed"],
                      "target_noise": r["target_noise_seed"]})
    man.metrics.update(
        {
            "dataset": cfg["data"]["dataset"],
            "train_count": int(tr_in.shape[0]),
            "test_count": int(te_in.shape[0]),
            "num_classes": gt_train.num_classes,
            "parameters": net.count_parameters(),
            "final_train_loss": fin_tr[0], "final_train_mae": fin_tr[1],
            "final_train_mse": fin_tr[2],
            "final_test_loss": fin_te[0], "final_test_mae": fin_te[1],
            "final_test_mse": fin_te[2],
            "condition_estimate": condition,
            "epoch_seconds": [round(rec.wall_time, 3) for rec in records],
        }
    )
    print(f"final: train mae {fin_tr[1]:.5f} mse {fin_tr[2]:.5f} | "
          f"test mae {fin_te[1]:.5f} mse {fin_te[2]:.5f}")
    return 0


# ---------------------------------------------------------------------------
# train-clf

def _load_recon_net_from_run(run_dir: Path):
    if not run_dir.exists():
        raise ValidationError(
            f"reconstruction run directory {run_dir} does not exist; "
            f"train the reconstruction network first (lenslearn train-recon)"
        )
    try:
        recon_man = read_manifest(run_dir)
    except FileNotFoundError as exc:
        raise ValidationError(f"no manifest.json in {run_dir}: {exc}") from exc
    ckpt = run_dir / "checkpoint_best.lltn"
    if not ckpt.exists():
        ckpt = run_dir / "checkpoint_final.lltn"
    if not ckpt.exists():
        raise ValidationError(
            f"no checkpoint_best.lltn or checkpoint_final.lltn under {run_dir}; "
            f"rerun lenslearn train-recon"
        )
    rcfg = recon_man["config"]
    net = build_unet(
        UNetConfig(
            depth=rcfg["recon"]["depth"],
            base_channels=rcfg["recon"]["base_channels"],
            input_hw=rcfg["recon"]["input_hw"],
            residual_in_block=rcfg["recon"]["residual_in_block"],
        ),
        seed=rcfg["recon"]["init_seed"],
    )
    net.load_checkpoint(ckpt)
    return net, ckpt


def cmd_train_clf(args, cfg, man: RunManifest) -> int:
    data_dir = Path(args.data_dir)
    run_dir = Path(args.out_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    c = cfg["classifier"]
    route = args.route

    gt_train, gt_test, sn_train, sn_test = _load_pair(
        data_dir, (TRAIN_SET, TEST_SET, SENSOR_TRAIN, SENSOR_TEST)
    )
    for name in (TRAIN_SET, TEST_SET, SENSOR_TRAIN, SENSOR_TEST):
        man.add_input(name, data_dir / name)

    recon_net = None
    if route == "reconstructed":
        if not args.recon_run:
            raise ConfigError(
                "route 'reconstructed' requires --recon-run pointing at a "
                "trained reconstruction run directory"
            )
        recon_net, ckpt = _load_recon_net_from_run(Path(args.recon_run))
        man.add_input("recon_checkpoint", ckpt)

    train_set = resolve_route(route, gt_train, sn_train, recon_net, c["batch_size"])
    test_set = resolve_route(route, gt_test, sn_test, recon_net, c["batch_size"])

    ccfg = ClassifierConfig(
        input_h=train_set.images.shape[2],
        input_w=train_set.images.shape[3],
        num_classes=train_set.num_classes,
        width_multiplier=c["width_multiplier"],
    )
    net = build_classifier(ccfg, seed=c["init_seed"])
    plan = TrainPlan(
        max_epochs=c["epochs"],
        batch_size=c["batch_size"],
        shuffle_seed=c["shuffle_seed"],
        checkpoint_every=c["checkpoint_every"],
    )
    adam = Adam(list(net.named_parameters()), lr=c["lr"])
    print(f"classifier ({route}): {net.count_parameters()} parameters, input "
          f"{ccfg.input_h}x{ccfg.input_w}, {train_set.count} train / {test_set.count} test")
    net, records, confusion, saved = train_classifier(
        net, train_set, test_set, plan, adam, checkpoint_dir=str(run_dir), log=print,
    )
    write_metrics_csv(run_dir / "metrics.csv", records)
    man.add_output(run_dir / "metrics.csv")
    for path in saved:
        man.add_output(path)

    np.savetxt(run_dir / "confusion_test.csv", confusion, fmt="%d", delimiter=",")
    man.add_output(run_dir / "confusion_test.csv")

    final_train_acc = records[-2].accuracy
    final_test_acc = records[-1].accuracy
    best_test_acc = max(rec.accuracy for rec in records if rec.split == "test")
    man.seeds.update({"init": c["init_seed"], "shuffle": c["shuffle_seed"]})
    man.metrics.update(
        {
            "dataset": cfg["data"]["dataset"],
            "route": route,
            "train_count": train_set.count,
            "test_count": test_set.count,
            "num_classes": train_set.num_classes,
            "parameters": net.count_parameters(),
            "final_train_accuracy": final_train_acc,
            "final_test_accuracy": final_test_acc,
            "best_test_accuracy": best_test_acc,
            "confusion_trace_over_total": float(np.trace(confusion) / confusion.sum()),
            "epoch_seconds": [round(rec.wall_time, 3) for rec in records],
        }
    )
    print(f"final: train acc {final_train_acc:.4f} | test acc {final_test_acc:.4f} "
          f"(best {best_test_acc:.4f})")
    return 0


# ---------------------------------------------------------------------------
# report

def _report_recon_run(run_dir: Path, man_data: dict, out_dir: Path, grid_samples: int,
                      man: RunManifest):
    rcfg = man_data["config"]
    data_dir = Path(man_data["inputs"][TRAIN_SET]["path"]).parent
    gt_train, gt_test, sn_train, sn_test = _load_pair(
        data_dir, (TRAIN_SET, TEST_SET, SENSOR_TRAIN, SENSOR_TEST)
    )
    net, ckpt = _load_recon_net_from_run(run_dir)
    man.add_input(f"{run_dir.name}/checkpoint", ckpt)

    seed = rcfg["recon"]["target_noise_seed"]
    name = run_dir.name
    for split, gt, sn, noise_seed in (
        ("train", gt_train, sn_train, seed),
        ("test", gt_test, sn_test, seed + 1_000_000),
    ):
        k = min(grid_samples, gt.count)
        if k == 0:
            continue
        inputs, targets = dio.preprocess_recon_set(
            sn.images.data[:k], gt.images.data[:k], noise_seed=noise_seed
        )
        outputs = predict_recon(net, inputs)
        grid = recon_grid(inputs, targets, outputs)
        path = out_dir / f"recon_grid_{name}_{split}.pgm"
        write_pgm(path, grid)
        man.add_output(path)

    m = man_data["metrics"]
    return {
        "Name": m.get("dataset", name),
        "#images": m.get("train_count", 0) + m.get("test_count", 0),
        "#classes": m.get("num_classes", ""),
        "TrainMAE": m.get("final_train_mae"),
        "TestMAE": m.get("final_test_mae"),
    }


def cmd_report(args, cfg, man: RunManifest) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid_samples = cfg["report"]["grid_samples"]

    mae_rows = []
    acc_rows = []
    skipped = []
    for run in args.runs:
        run_dir = Path(run)
        try:
            man_data = read_manifest(run_dir)
        except FileNotFoundError:
            skipped.append(f"{run_dir}: no manifest.json")
            continue
        man.add_input(f"{run_dir.name}/manifest", run_dir / "manifest.json")
        sub = man_data.get("subcommand")
        metrics = man_data.get("metrics", {})
        if sub == "train-recon":
            if "final_test_mae" not in metrics:
                skipped.append(f"{run_dir}: missing reconstruction metrics")
                continue
            mae_rows.append(_report_recon_run(run_dir, man_data, out_dir,
                                              grid_samples, man))
        elif sub == "train-clf":
            if "final_test_accuracy" not in metrics:
                skipped.append(f"{run_dir}: missing classification metrics")
                continue
            acc_rows.append(
                {
                    "dataset": metrics.get("dataset", run_dir.name),
                    "route": metrics.get("route", "?"),
                    "train_accuracy": metrics.get("final_train_accuracy"),
                    "test_accuracy": metrics.get("final_test_accuracy"),
                    "best_test_accuracy": metrics.get("best_test_accuracy"),
                }
            )
            conf_path = run_dir / "confusion_test.csv"
            if conf_path.exists():
                confusion = np.loadtxt(conf_path, delimiter=",", dtype=np.int64, ndmin=2)
                heat = confusion_heatmap(confusion)
                path = out_dir / f"confusion_{run_dir.name}.pgm"
                write_pgm(path, heat)
                man.add_output(path)
                csv_out = out_dir / f"confusion_{run_dir.name}.csv"
                np.savetxt(csv_out, confusion, fmt="%d", delimiter=",")
                man.add_output(csv_out)
        else:
            skipped.append(f"{run_dir}: unreportable subcommand {sub!r}")

    if mae_rows:
        path = out_dir / "mae_summary.csv"
        with open(path, "w", encoding="utf-8") as f:
            f.write("Name,#images,#classes,TrainMAE,TestMAE\n")
            for row in sorted(mae_rows, key=lambda r: str(r["Name"])):
                f.write(f"{row['Name']},{row['#images']},{row['#classes']},"
                        f"{row['TrainMAE']:.6f},{row['TestMAE']:.6f}\n")
        man.add_output(path)
    if acc_rows:
        path = out_dir / "accuracy_summary.csv"
        with open(path, "w", encoding="utf-8") as f:
            f.write("dataset,route,train_accuracy,test_accuracy,best_test_accuracy\n")
            for row in sorted(acc_rows, key=lambda r: (r["dataset"], r["route"])):
                f.write(f"{row['dataset']},{row['route']},{row['train_accuracy']:.6f},"
                        f"{row['test_accuracy']:.6f},{row['best_test_accuracy']:.6f}\n")
        man.add_output(path)

    man.metrics.update({"reported_runs": len(mae_rows) + len(acc_rows),
                        "skipped": skipped})
    if skipped:
        for line in skipped:
            print(f"skipped: {line}", file=sys.stderr)
        raise ValidationError(f"{len(skipped)} run(s) could not be reported")
    return 0


# ---------------------------------------------------------------------------
# argument parsing and dispatch

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lenslearn",
        description="Simulated see-through camera pipeline: data preparation, "
                    "optics simulation, reconstruction/classification training, "
                    "and report generation.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--config", help="INI config file (flat key = value, "
                                        "sections per module)")
        p.add_argument("--set", action="append", default=[], metavar="SEC.KEY=VAL",
                       help="override a config value (repeatable)")

    p = sub.add_parser("prepare", help="parse, subsample, split, and pack a dataset")
    common(p)
    p.add_argument("--images", help="IDX image file")
    p.add_argument("--labels", help="IDX label file")
    p.add_argument("--packed", help="packed LLDS input (alternative to IDX)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("simulate", help="render sensor captures through the "
                                        "simulated transfer operator")
    common(p)
    p.add_argument("--data-dir", required=True, help="directory with train/test .llds")
    p.add_argument("--out-dir", help="defaults to --data-dir")
    p.add_argument("--check-linearity", action="store_true",
                   help="run the noise-free superposition self-check")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train-recon", help="train the reconstruction network")
    common(p)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True, help="run directory for outputs")
    p.set_defaults(func=cmd_train_recon)

    p = sub.add_parser("train-clf", help="train a classifier on one input route")
    common(p)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--route", required=True, choices=("original", "raw", "reconstructed"))
    p.add_argument("--recon-run", help="reconstruction run dir (reconstructed route)")
    p.set_defaults(func=cmd_train_clf)

    p = sub.add_parser("report", help="emit figures and summary tables from run dirs")
    common(p)
    p.add_argument("--out-dir", required=True)
    p.add_argument("runs", nargs="+", help="run directories to report on")
    p.set_defaults(func=cmd_report)

    return parser


def _manifest_dir(args) -> Path | None:
    out = getattr(args, "out_dir", None)
    if out:
        return Path(out)
    return Path(getattr(args, "data_dir", ".") or ".")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    t0 = time.perf_counter()
    man = None
    try:
        cfg = load_config(args.config, args.set)
        man = RunManifest.start(args.subcommand, cfg)
        code = args.func(args, cfg, man)
        man.wall_time = round(time.perf_counter() - t0, 3)
        man.write(_manifest_dir(args))
        return code
    except Exception as exc:
        if man is not None:
            man.error = f"{type(exc).__name__}: {exc}"
            man.wall_time = round(time.perf_counter() - t0, 3)
            try:
                man.write(_manifest_dir(args))
            except OSError:
                pass
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc, (ConfigError, NetConfigError)):
            return 2
        if isinstance(exc, (ParseError, ValidationError, OSError)):
            return 3
        if isinstance(exc, (NumericError, FloatingPointError)):
            return 4
        raise


if __name__ == "__main__":
    sys.exit(main())
