"""Dataset augmentation driven by the trained conditional denoiser."""

import warnings

import numpy as np

from ..dataset import LABELS, TRAIN, conditioning_vector
from ..mathcore.rng import subsystem_rng


def plan_generation(dataset, policy):
    """Per-class generation counts for a policy.

    policy is either {'uniform_per_sample': n} (n new samples per Train
    reference) or {'balance_to': (total per class)}; balance targets below
    the current counts degrade to a warning and zero generations.
    """
    counts = dataset.class_counts()
    train_refs = [dataset.indices(split=TRAIN, label=c) for c in range(len(LABELS))]
    if "balance_to" in policy:
        targets = policy["balance_to"]
        needed = []
        for c, target in enumerate(targets):
            n = int(target) - counts[c]
            if n < 0:
                warnings.warn(f"balance target {target} below current count "
                              f"{counts[c]} for {LABELS[c]}; skipping")
                n = 0
            needed.append(n)
        return train_refs, needed
    n_per = int(policy["uniform_per_sample"])
    return train_refs, [n_per * refs.size for refs in train_refs]


def augment(dataset, net, pca_model, policy, seed, k_cond=None, batch_size=256):
    """Generate class-balanced spectra conditioned on Train references.

    Every generated spectrum records the reference that conditioned it;
    provenance is marked Generated so the splitter can keep them out of
    Test. References are cycled in index order when more samples are needed
    than there are references.
    """
    k_cond = net.k_cond if k_cond is None else k_cond
    train_refs, needed = plan_generation(dataset, policy)
    if sum(needed) == 0:
        return dataset

    ref_rows, sample_ids = [], []
    for c, n in enumerate(needed):
        refs = train_refs[c]
        if n > 0 and refs.size == 0:
            raise ValueError(f"no Train references for class {LABELS[c]}")
        for j in range(n):
            ref_rows.append(refs[j % refs.size])
    ref_rows = np.asarray(ref_rows, dtype=np.int64)
    total = ref_rows.size

    conds = conditioning_vector(pca_model, dataset.intensities[ref_rows], k_cond)
    new_intensities = np.empty((total, dataset.length))
    from .sampler import sample_batch
    for start in range(0, total, batch_size):
        stop = min(start + batch_size, total)
        rngs = [subsystem_rng(seed, "diffusion", 1, i) for i in range(start, stop)]
        out, _ = sample_batch(net, conds[start:stop], net_schedule(net), rngs)
        new_intensities[start:stop] = np.maximum(out[:, :dataset.length], 0.0)

    labels = dataset.labels[ref_rows]
    provenance = np.ones(total, dtype=np.int64)
    return dataset.extended(new_intensities, labels, provenance, ref_rows)


def net_schedule(net):
    from .schedule import NoiseSchedule
    cfg = net.config
    return NoiseSchedule(np.linspace(cfg.beta_lo, cfg.beta_hi, cfg.steps))
