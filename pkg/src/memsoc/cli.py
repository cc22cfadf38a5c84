"""Command-line front end and experiment orchestrator.

Subcommands: gen-data, train, train-diffusion, augment, compile, simulate,
device-cdf, report. A single workspace directory (--out) holds every
artifact; commands read their inputs from it and are deterministic under a
fixed root seed (no timestamps enter any format).

Exit codes: 0 success, 1 usage error, 2 data error, 3 training divergence,
4 programming failure, 5 integrity/fingerprint error.
"""

import argparse
import os
import sys

import numpy as np

from . import classifier as clf
from . import dataset as dsm
from . import pipeline as pl
from .checkpoint import load_checkpoint, save_checkpoint
from .compiler import MappingPlan, model_fingerprint
from .config import default_config, load_config, save_config
from .crossbar import conductance_cdf_study
from .dataset import PcaModel
from .diffusion import DenoiserNet
from .errors import (CheckpointError, ConfigError, DataError, IntegrityError,
                     MemsocError, ProgrammingFailureError, TrainingDivergenceError)
from .mathcore.rng import subsystem_rng
from .report import plot_bars, plot_lines, write_csv

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGENCE = 3
EXIT_PROGRAMMING = 4
EXIT_INTEGRITY = 5


# ---------------------------------------------------------------------------
# checkpoint packing
# ---------------------------------------------------------------------------

def save_pca(pca, path):
    save_checkpoint(path, {"pca.mean": pca.mean, "pca.components": pca.components,
                           "pca.explained_variance": pca.explained_variance})


def load_pca(path):
    state = load_checkpoint(path)
    return PcaModel(state["pca.mean"], state["pca.components"],
                    state["pca.explained_variance"])


def save_classifier(model, qmodel, path):
    state = model.state()
    state["quant.weight_scale"] = np.array([p.scale for p in qmodel.weight_params])
    state["quant.act_scale"] = np.array([p.scale for p in qmodel.act_params])
    state["quant.act_bits"] = np.array([p.bits for p in qmodel.act_params],
                                       dtype=np.int64)
    for i in range(qmodel.n_layers):
        state[f"quant.layer{i}.weight_codes"] = qmodel.weight_codes[i]
        state[f"quant.layer{i}.bias_codes"] = qmodel.bias_codes[i]
    save_checkpoint(path, state)


def load_classifier(path):
    state = load_checkpoint(path)
    model = clf.MlpModel.from_state(state)
    n_layers = model.n_layers
    weight_params = [clf.QuantParams(float(s), 0, 8, True)
                     for s in state["quant.weight_scale"]]
    act_params = [clf.QuantParams(float(s), 0, int(b), bool(int(b) == 9))
                  for s, b in zip(state["quant.act_scale"], state["quant.act_bits"])]
    qmodel = clf.QuantizedModel(
        dims=model.dims,
        weight_codes=[state[f"quant.layer{i}.weight_codes"] for i in range(n_layers)],
        bias_codes=[state[f"quant.layer{i}.bias_codes"] for i in range(n_layers)],
        weight_params=weight_params, act_params=act_params)
    return model, qmodel


def save_denoiser(net, path):
    save_checkpoint(path, net.state())


def load_denoiser(path):
    return DenoiserNet.from_state(load_checkpoint(path))


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _workspace(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _config(args):
    cfg = load_config(args.config) if args.config else default_config()
    if args.seed is not None:
        cfg.run.seed = args.seed
    if args.threads is not None:
        cfg.run.threads = args.threads
    return cfg


def _dataset_path(args, out):
    if args.dataset:
        return args.dataset
    augmented = os.path.join(out, "dataset_augmented.txt")
    return augmented if os.path.exists(augmented) else os.path.join(out, "dataset.txt")


def _load_split(cfg, path):
    ds = dsm.load_dataset(path)
    return pl.split_protocol(cfg, ds)


def _ensure_pca(cfg, out):
    """PCA is always fitted on the original dataset's Train split and cached."""
    path = os.path.join(out, "pca.ckpt")
    if os.path.exists(path):
        return load_pca(path)
    ds = _load_split(cfg, os.path.join(out, "dataset.txt"))
    pca, _ = pl.stage_pca(cfg, ds)
    save_pca(pca, path)
    return pca


def _summary_rows(ds):
    rows = []
    for c, label in enumerate(dsm.LABELS):
        for p, prov in enumerate(dsm.PROVENANCE):
            n = int(((ds.labels == c) & (ds.provenance == p)).sum())
            if n:
                rows.append((label, prov, n))
    return rows


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args):
    cfg = _config(args)
    out = _workspace(args)
    if args.counts:
        cfg.data.counts = tuple(int(v) for v in args.counts.split(","))
    counts = dict(zip(dsm.LABELS, cfg.data.counts))
    ds = dsm.generate_synthetic(counts, seed=cfg.run.seed, length=cfg.data.length,
                                noise_amplitude=cfg.data.noise_amplitude)
    dsm.save_dataset(ds, os.path.join(out, "dataset.txt"))
    write_csv(os.path.join(out, "summary.csv"), "label,provenance,count",
              _summary_rows(ds))
    print(f"wrote {len(ds)} spectra (counts {ds.class_counts()}) to "
          f"{out}/dataset.txt")
    return EXIT_OK


def cmd_train(args):
    cfg = _config(args)
    out = _workspace(args)
    path = _dataset_path(args, out)
    ds = _load_split(cfg, path)
    pca = _ensure_pca(cfg, out)
    features = dsm.project(pca, ds.intensities)
    model, curves = pl.run_classifier(cfg, ds, features, seed=cfg.run.seed,
                                      qat=cfg.classifier.qat)
    tr = ds.indices(split=dsm.TRAIN)
    qmodel = clf.quantize(model, features[tr])
    save_classifier(model, qmodel, os.path.join(out, "classifier.ckpt"))
    write_csv(os.path.join(out, "loss_curves.csv"), "epoch,train_loss,val_loss",
              [(e, tl, vl) for e, (tl, vl) in
               enumerate(zip(curves.train_loss, curves.val_loss))])
    metrics = pl.eval_on_test(model, ds, features)
    write_csv(os.path.join(out, "metrics.csv"),
              "env,overall,healthy,heart_attack,liver_cancer",
              [tuple(["float", metrics.overall] + [float(x) for x in metrics.per_class])])
    print(f"trained on {path} (best epoch {curves.best_epoch}); "
          f"test accuracy {metrics.overall:.4f}")
    return EXIT_OK


def cmd_train_diffusion(args):
    cfg = _config(args)
    out = _workspace(args)
    ds = _load_split(cfg, os.path.join(out, "dataset.txt"))
    pca = _ensure_pca(cfg, out)
    net, schedule, losses = pl.stage_diffusion(cfg, ds, pca, progress=print)
    save_denoiser(net, os.path.join(out, "denoiser.ckpt"))
    write_csv(os.path.join(out, "diffusion_loss.csv"), "epoch,train_loss",
              list(enumerate(losses)))
    _, snaps = pl.stage_snapshots(cfg, net, schedule, pca, ds)
    _write_snapshots(os.path.join(out, "snapshots.txt"), snaps)
    print(f"diffusion loss {losses[0]:.1f} -> {losses[-1]:.1f}; "
          f"{len(snaps)} snapshot blocks written")
    return EXIT_OK


def _write_snapshots(path, snaps):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for t, block in snaps:
            fh.write(f"# snapshots t={t}\n")
            for row in np.atleast_2d(block):
                fh.write(",".join(repr(float(v)) for v in row) + "\n")


def cmd_augment(args):
    cfg = _config(args)
    out = _workspace(args)
    ds = _load_split(cfg, os.path.join(out, "dataset.txt"))
    pca = _ensure_pca(cfg, out)
    net = load_denoiser(os.path.join(out, "denoiser.ckpt"))
    ds_aug = pl.stage_augment(cfg, ds, net, pca)
    dsm.save_dataset(ds_aug, os.path.join(out, "dataset_augmented.txt"))
    write_csv(os.path.join(out, "summary_augmented.csv"), "label,provenance,count",
              _summary_rows(ds_aug))
    print(f"augmented {len(ds)} -> {len(ds_aug)} spectra "
          f"(counts {ds_aug.class_counts()})")
    return EXIT_OK


def cmd_compile(args):
    cfg = _config(args)
    out = _workspace(args)
    model, qmodel = load_classifier(os.path.join(out, "classifier.ckpt"))
    pca = _ensure_pca(cfg, out)
    ds = _load_split(cfg, _dataset_path(args, out))
    features = dsm.project(pca, ds.intensities)
    codes = qmodel.act_params[0].quant(features)
    tr = ds.indices(split=dsm.TRAIN)
    from .compiler import compile_model
    plan = compile_model(qmodel, codes[tr], npu_count=cfg.compile.npu_count,
                         g_lo=cfg.compile.g_lo, g_hi=cfg.compile.g_hi,
                         clamp_budget=cfg.compile.clamp_budget)
    plan.save(os.path.join(out, "plan.txt"))
    print(f"plan {plan.plan_hash()[:16]} with shifts "
          f"{[lp.adc_shift for lp in plan.layers]} written to {out}/plan.txt")
    return EXIT_OK


def cmd_simulate(args):
    cfg = _config(args)
    out = _workspace(args)
    if args.noise:
        cfg.run.noise = args.noise
    model, qmodel = load_classifier(os.path.join(out, "classifier.ckpt"))
    plan = MappingPlan.load(os.path.join(out, "plan.txt"))
    if plan.fingerprint != model_fingerprint(qmodel):
        raise IntegrityError("plan.txt was compiled from a different checkpoint")
    pca = _ensure_pca(cfg, out)
    ds = _load_split(cfg, _dataset_path(args, out))
    features = dsm.project(pca, ds.intensities)
    codes = qmodel.act_params[0].quant(features)
    programmed = pl.stage_program(cfg, plan)
    write_csv(os.path.join(out, "programming_reports.csv"),
              "tile,rmse_all,rmse_free,iterations,stuck_count",
              [(i, r.rmse_all, r.rmse_free, r.iterations, r.stuck_count)
               for i, r in enumerate(programmed.reports)])
    env_results, residuals, trace = pl.stage_compare(
        cfg, model, plan, programmed, ds, features, codes)
    write_csv(os.path.join(out, "env_results.csv"),
              "env,overall,healthy,heart_attack,liver_cancer",
              [tuple([r.environment, r.metrics.overall]
                     + [float(x) for x in r.metrics.per_class]) for r in env_results])
    write_csv(os.path.join(out, "residuals.csv"), "layer,stat,value",
              [(r["layer"], stat, r[stat]) for r in residuals
               for stat in ("mean_abs", "max_abs", "rms")])
    write_csv(os.path.join(out, "trace_summary.csv"), "stat,value",
              [("vmm_count", trace.vmm_count), ("mac_count", trace.mac_count)])
    for r in env_results:
        print(f"{r.environment:>13}: overall {r.metrics.overall:.4f} "
              f"per-class {np.round(r.metrics.per_class, 4)}")
    return EXIT_OK


def cmd_device_cdf(args):
    cfg = _config(args)
    out = _workspace(args)
    params = pl.device_params_from_config(cfg)
    study = conductance_cdf_study(params, subsystem_rng(cfg.run.seed, "device", 9000))
    with open(os.path.join(out, "device_cdf.csv"), "w", encoding="utf-8",
              newline="\n") as fh:
        fh.write("\n".join(study.to_csv_lines()) + "\n")
    within = np.abs(study.medians - np.arange(256)) <= 2
    print(f"CDF study: {int(within.sum())}/256 level medians within +-2; "
          f"wrote {out}/device_cdf.csv")
    return EXIT_OK


def cmd_report(args):
    cfg = _config(args)
    out = _workspace(args)
    made = []
    made += _report_loss(out, "loss_curves.csv", "loss_curves.svg",
                         "classifier loss")
    made += _report_loss(out, "diffusion_loss.csv", "diffusion_loss.svg",
                         "diffusion loss")
    made += _report_env(out)
    made += _report_cdf(out)
    made += _report_snapshots(out)
    print("report artifacts: " + (", ".join(made) if made else "none (no CSVs found)"))
    return EXIT_OK


def _read_csv(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        rows = [line.strip().split(",") for line in fh if line.strip()]
    return header, rows


def _report_loss(out, csv_name, svg_name, title):
    path = os.path.join(out, csv_name)
    if not os.path.exists(path):
        return []
    header, rows = _read_csv(path)
    epochs = [float(r[0]) for r in rows]
    series = [(name, epochs, [float(r[i]) for r in rows])
              for i, name in enumerate(header) if i > 0]
    plot_lines(os.path.join(out, svg_name), series, title=title,
               x_label="epoch", y_label="loss")
    return [svg_name]


def _report_env(out):
    path = os.path.join(out, "env_results.csv")
    if not os.path.exists(path):
        return []
    header, rows = _read_csv(path)
    cats = header[1:]
    groups = [(r[0], [float(v) for v in r[1:]]) for r in rows]
    plot_bars(os.path.join(out, "accuracy_bars.svg"), cats, groups,
              title="accuracy by environment", y_label="accuracy")
    return ["accuracy_bars.svg"]


def _report_cdf(out):
    path = os.path.join(out, "device_cdf.csv")
    if not os.path.exists(path):
        return []
    _, rows = _read_csv(path)
    by_level = {}
    for target, read, frac in rows:
        by_level.setdefault(int(target), []).append((int(read), float(frac)))
    series = []
    for level in range(16, 256, 48):
        pts = sorted(by_level.get(level, []))
        if pts:
            series.append((f"level {level}", [p[0] for p in pts], [p[1] for p in pts]))
    plot_lines(os.path.join(out, "device_cdf.svg"), series,
               title="conductance CDF by target level", x_label="read level",
               y_label="cumulative fraction")
    return ["device_cdf.svg"]


def _report_snapshots(out):
    path = os.path.join(out, "snapshots.txt")
    if not os.path.exists(path):
        return []
    series = []
    t = None
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("# snapshots t="):
                t = int(line.split("=", 1)[1])
            elif line and t is not None:
                values = [float(v) for v in line.split(",")]
                series.append((f"t={t}", list(range(len(values))), values))
                t = None  # first sample per block
    plot_lines(os.path.join(out, "denoising_snapshots.svg"), series,
               title="reverse-process snapshots", x_label="index",
               y_label="intensity")
    return ["denoising_snapshots.svg"]


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(
        prog="memsoc",
        description="desk-scale memristive SoC pipeline")
    parser.add_argument("--config", help="experiment config file (INI sections)")
    parser.add_argument("--seed", type=int, help="root seed override")
    parser.add_argument("--out", default="out", help="workspace directory")
    parser.add_argument("--threads", type=int, help="worker cap (modules are "
                        "currently single-threaded)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="synthesize the labeled dataset")
    p.add_argument("--counts", help="per-class counts, e.g. 431,385,212")
    p.set_defaults(fn=cmd_gen_data)

    p = sub.add_parser("train", help="train (and quantize) the classifier")
    p.add_argument("--dataset", help="dataset file (default: augmented if present)")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("train-diffusion", help="train the conditional denoiser")
    p.set_defaults(fn=cmd_train_diffusion)

    p = sub.add_parser("augment", help="generate balancing spectra")
    p.set_defaults(fn=cmd_augment)

    p = sub.add_parser("compile", help="lower the quantized model to a tile plan")
    p.add_argument("--dataset", help="calibration dataset file")
    p.set_defaults(fn=cmd_compile)

    p = sub.add_parser("simulate", help="program tiles and compare environments")
    p.add_argument("--dataset", help="evaluation dataset file")
    p.add_argument("--noise", choices=["on", "off"], help="device noise toggle")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("device-cdf", help="run the 65536-cell conductance study")
    p.set_defaults(fn=cmd_device_cdf)

    p = sub.add_parser("report", help="render SVG plots from the CSV artifacts")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except TrainingDivergenceError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except ProgrammingFailureError as exc:
        print(f"programming error: {exc}", file=sys.stderr)
        return EXIT_PROGRAMMING
    except (IntegrityError, CheckpointError) as exc:
        print(f"integrity error: {exc}", file=sys.stderr)
        return EXIT_INTEGRITY
    except MemsocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
