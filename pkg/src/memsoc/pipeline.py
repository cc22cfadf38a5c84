"""End-to-end experiment orchestration.

Stages are plain functions over in-memory artifacts so the CLI, the tests,
and the acceptance suite can share them; file emission lives in the CLI.

Protocol: a fixed pool of original spectra is split with the test set
reserved from originals only. Baseline classifiers train on the remaining
originals; the diffusion model trains on the same Train split, generates
class-balancing spectra conditioned on Train references, and augmented
classifiers train on originals-plus-generated with the identical test set.
The deployed model trains on the augmented set with QAT, is quantized,
compiled, programmed onto simulated tiles, and evaluated in the three
environments.
"""

from dataclasses import dataclass, field

import numpy as np

from . import classifier as clf
from . import dataset as dsm
from .compiler import compile_model, program_plan
from .crossbar import DeviceParams
from .diffusion import (DenoiserNet, DiffusionConfig, augment, linear_schedule,
                        sample_batch, train_denoiser)
from .mathcore.rng import subsystem_rng
from .runtime import compare_environments


def device_params_from_config(cfg):
    d = cfg.device
    if cfg.run.noise == "off":
        return ideal_device_params()
    return DeviceParams(
        program_noise_sigma=d.program_noise_sigma,
        read_noise_sigma=d.read_noise_sigma,
        stuck_off_rate=d.stuck_off_rate,
        stuck_on_rate=d.stuck_on_rate,
        pulse_step_fraction=d.pulse_step_fraction,
        max_program_iters=d.max_program_iters,
        program_tolerance=d.program_tolerance,
        rmse_criterion=d.rmse_criterion,
    )


def ideal_device_params():
    """Noise-free, defect-free device: tiles land exactly on their targets."""
    return DeviceParams(program_noise_sigma=0.0, read_noise_sigma=0.0,
                        stuck_off_rate=0.0, stuck_on_rate=0.0,
                        pulse_step_fraction=1.0)


def diffusion_config_from_config(cfg):
    d = cfg.diffusion
    return DiffusionConfig(
        steps=d.steps, beta_lo=d.beta_lo, beta_hi=d.beta_hi,
        signal_length=d.signal_length, patch_size=d.patch_size,
        token_dim=d.token_dim, n_blocks=d.blocks, ff_mult=d.ff_mult,
        k_cond=cfg.pca.conditioning, epochs=d.epochs, batch_size=d.batch_size,
        learning_rate=d.learning_rate, snapshot_every=d.snapshot_every,
        seed=cfg.run.seed)


def train_config_from_config(cfg, seed=None, qat=None):
    c = cfg.classifier
    return clf.TrainConfig(
        lambda_l2=getattr(c, "lambda"), epochs=c.epochs, batch_size=c.batch_size,
        learning_rate=c.learning_rate, optimizer=c.optimizer,
        qat_enabled=c.qat if qat is None else qat,
        seed=cfg.run.seed if seed is None else seed)


def stage_dataset(cfg):
    counts = dict(zip(dsm.LABELS, cfg.data.counts))
    ds = dsm.generate_synthetic(counts, seed=cfg.run.seed, length=cfg.data.length,
                                noise_amplitude=cfg.data.noise_amplitude)
    return split_protocol(cfg, ds)


def split_protocol(cfg, ds):
    return dsm.split_dataset(ds, seed=cfg.run.seed, mode="augmented_test_real_only",
                             test_reserve=cfg.run.test_reserve)


def stage_pca(cfg, ds):
    train_idx = ds.indices(split=dsm.TRAIN)
    pca = dsm.fit_pca(ds.intensities[train_idx], cfg.pca.components)
    return pca, dsm.project(pca, ds.intensities)


def model_dims(cfg):
    """Spec topology with the input width tracking the PCA component count."""
    return (cfg.pca.components,) + clf.DIMS[1:]


def run_classifier(cfg, ds, features, seed, qat=False):
    tr = ds.indices(split=dsm.TRAIN)
    va = ds.indices(split=dsm.VAL)
    config = train_config_from_config(cfg, seed=seed, qat=qat)
    model, curves = clf.train(features[tr], ds.labels[tr], features[va],
                              ds.labels[va], config, dims=model_dims(cfg))
    return model, curves


def eval_on_test(model, ds, features):
    te = ds.indices(split=dsm.TEST)
    return clf.evaluate(model, features[te], ds.labels[te])


def stage_diffusion(cfg, ds, pca, progress=None):
    dcfg = diffusion_config_from_config(cfg)
    if dcfg.signal_length != ds.length:
        raise ValueError(f"diffusion signal_length {dcfg.signal_length} must match "
                         f"dataset length {ds.length} for augmentation")
    tr = ds.indices(split=dsm.TRAIN)
    net = DenoiserNet(dcfg, seed=cfg.run.seed)
    conds = dsm.conditioning_vector(pca, ds.intensities[tr], cfg.pca.conditioning)
    schedule = linear_schedule(dcfg.steps, dcfg.beta_lo, dcfg.beta_hi)
    losses = train_denoiser(net, ds.intensities[tr], conds, schedule, dcfg,
                            seed=cfg.run.seed,
                            log_every=50 if progress else 0)
    return net, schedule, losses


def stage_augment(cfg, ds, net, pca):
    if cfg.diffusion.per_sample > 0:
        policy = {"uniform_per_sample": cfg.diffusion.per_sample}
    else:
        policy = {"balance_to": cfg.diffusion.balance_to}
    ds_aug = augment(ds, net, pca, policy, seed=cfg.run.seed,
                     k_cond=cfg.pca.conditioning)
    return split_protocol(cfg, ds_aug)


def stage_snapshots(cfg, net, schedule, pca, ds, n_samples=4):
    """Reverse-process snapshots for a few Train references (report artifact)."""
    tr = ds.indices(split=dsm.TRAIN)[:n_samples]
    conds = dsm.conditioning_vector(pca, ds.intensities[tr], cfg.pca.conditioning)
    rngs = [subsystem_rng(cfg.run.seed, "diffusion", 2, i) for i in range(len(tr))]
    out, snaps = sample_batch(net, conds, schedule, rngs,
                              snapshot_every=cfg.diffusion.snapshot_every)
    return out, snaps


@dataclass
class SocBundle:
    qmodel: object
    plan: object
    programmed: object
    codes: np.ndarray     # signed input codes for every spectrum


def stage_compile(cfg, model, ds, features):
    tr = ds.indices(split=dsm.TRAIN)
    qmodel = clf.quantize(model, features[tr])
    codes = qmodel.act_params[0].quant(features)
    plan = compile_model(qmodel, codes[tr], npu_count=cfg.compile.npu_count,
                         g_lo=cfg.compile.g_lo, g_hi=cfg.compile.g_hi,
                         clamp_budget=cfg.compile.clamp_budget)
    return qmodel, plan, codes


def stage_program(cfg, plan, device_params=None, seed=None):
    params = device_params if device_params is not None else device_params_from_config(cfg)
    return program_plan(plan, params, seed=cfg.run.seed if seed is None else seed)


def stage_compare(cfg, model, plan, programmed, ds, features, codes,
                  noise_on=None):
    te = ds.indices(split=dsm.TEST)
    noise = (cfg.run.noise == "on") if noise_on is None else noise_on
    return compare_environments(model, plan, programmed, features[te], codes[te],
                                ds.labels[te], seed=cfg.run.seed, noise_on=noise)


def soc_accuracy(plan, programmed, codes, labels, seed):
    """SocSim accuracy only (used by the noise sweep)."""
    from .runtime import infer
    streams = [subsystem_rng(seed, "device", 100, i) for i in range(len(codes))]
    pred, _, _ = infer(plan, programmed, codes, noise_on=True, rng_streams=streams)
    return float((pred == labels).mean())


def noise_sweep(cfg, plan, codes_test, labels_test, sigmas=(0.0, 0.6, 1.2, 2.4),
                n_seeds=5):
    """Median SocSim accuracy per programming-noise level, paired seeds.

    Inference read-noise streams are keyed by (seed, sample) only, so the
    comparison across sigma levels uses common random numbers.
    """
    rows = []
    medians = []
    for sigma in sigmas:
        params = device_params_from_config(cfg)
        params.program_noise_sigma = sigma
        accs = []
        for k in range(n_seeds):
            seed = cfg.run.seed + 1 + k
            programmed = stage_program(cfg, plan, device_params=params, seed=seed)
            acc = soc_accuracy(plan, programmed, codes_test, labels_test, seed)
            accs.append(acc)
            rows.append((sigma, seed, acc))
        medians.append((sigma, float(np.median(accs))))
    return rows, medians


@dataclass
class PipelineResult:
    cfg: object
    dataset: object = None
    pca: object = None
    features: np.ndarray = None
    baseline: list = field(default_factory=list)       # Metrics per seed
    diffusion_net: object = None
    schedule: object = None
    diffusion_losses: list = field(default_factory=list)
    dataset_aug: object = None
    features_aug: np.ndarray = None
    augmented: list = field(default_factory=list)      # Metrics per seed
    deploy_model: object = None
    deploy_curves: object = None
    qmodel: object = None
    plan: object = None
    programmed: object = None
    env_results: list = field(default_factory=list)
    residuals: list = field(default_factory=list)
    trace: object = None
    codes: np.ndarray = None
    snapshots: list = field(default_factory=list)


def run_full(cfg, progress=None):
    """The whole experiment in memory; returns every intermediate artifact."""
    say = progress or (lambda *_: None)
    res = PipelineResult(cfg=cfg)

    say("generating dataset")
    res.dataset = stage_dataset(cfg)
    res.pca, res.features = stage_pca(cfg, res.dataset)

    say("baseline classifier runs")
    for k in range(cfg.run.ab_seeds):
        model, _ = run_classifier(cfg, res.dataset, res.features,
                                  seed=cfg.run.seed + k, qat=False)
        res.baseline.append(eval_on_test(model, res.dataset, res.features))

    say("training diffusion model")
    res.diffusion_net, res.schedule, res.diffusion_losses = stage_diffusion(
        cfg, res.dataset, res.pca, progress=progress)

    say("augmenting dataset")
    res.dataset_aug = stage_augment(cfg, res.dataset, res.diffusion_net, res.pca)
    res.features_aug = dsm.project(res.pca, res.dataset_aug.intensities)

    say("augmented classifier runs")
    for k in range(cfg.run.ab_seeds):
        model, _ = run_classifier(cfg, res.dataset_aug, res.features_aug,
                                  seed=cfg.run.seed + k, qat=False)
        res.augmented.append(eval_on_test(model, res.dataset_aug, res.features_aug))

    say("training deployment model (QAT)")
    res.deploy_model, res.deploy_curves = run_classifier(
        cfg, res.dataset_aug, res.features_aug, seed=cfg.run.seed,
        qat=cfg.classifier.qat)

    say("quantize + compile + program")
    res.qmodel, res.plan, res.codes = stage_compile(
        cfg, res.deploy_model, res.dataset_aug, res.features_aug)
    res.programmed = stage_program(cfg, res.plan)

    say("three-environment comparison")
    res.env_results, res.residuals, res.trace = stage_compare(
        cfg, res.deploy_model, res.plan, res.programmed, res.dataset_aug,
        res.features_aug, res.codes)

    say("denoising snapshots")
    _, res.snapshots = stage_snapshots(cfg, res.diffusion_net, res.schedule,
                                       res.pca, res.dataset)
    return res
