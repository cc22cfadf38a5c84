"""Synthetic labeled spectra, stratified splits, and PCA downsampling.

Real patient spectra are unavailable, so a parametric generator stands in:
each spectrum is a slowly varying baseline plus 6-12 Gaussian/Lorentzian
peaks plus white noise. Three of the peaks sit at fixed per-class positions
with class-specific amplitude ranges, which makes the classes statistically
separable but overlapping (liver-cancer deliberately shares positions with
both other classes, so it is the hardest minority class).
"""

import io
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .mathcore.rng import subsystem_rng

LABELS = ("healthy", "heart_attack", "liver_cancer")
PROVENANCE = ("synthetic", "generated")
SPLIT_NAMES = ("train", "val", "test")
TRAIN, VAL, TEST = 0, 1, 2
UNASSIGNED = -1

# (position fraction, amplitude low, amplitude high) per class; shared
# positions with overlapping amplitude ranges create the class confusion
SIGNATURES = (
    ((0.18, 0.45, 1.40), (0.40, 0.45, 1.35), (0.72, 0.45, 1.40)),  # healthy
    ((0.18, 0.10, 0.95), (0.52, 0.45, 1.40), (0.86, 0.35, 1.30)),  # heart attack
    ((0.40, 0.10, 1.00), (0.52, 0.10, 1.10), (0.86, 0.45, 1.55)),  # liver cancer
)
SIGNATURE_WIDTH = (0.009, 0.016)  # fraction of length
SIGNATURE_JITTER = 0.012          # peak-position wobble, fraction of length
GAIN_RANGE = (0.70, 1.35)         # global spectrometer-gain variation
EXTRA_PEAKS = (4, 9)              # on top of the 3 signatures: 7..12 total
EXTRA_AMP = (0.10, 0.90)
EXTRA_WIDTH = (0.006, 0.022)
DEFAULT_NOISE = 0.06


@dataclass
class Spectrum:
    intensities: np.ndarray
    label: str
    provenance: str
    source_id: int | None = None


class SpectralDataset:
    """Column-oriented store for labeled spectra with split assignments."""

    def __init__(self, intensities, labels, provenance=None, source_ids=None,
                 split=None, seed=None):
        self.intensities = np.asarray(intensities, dtype=np.float64)
        if self.intensities.ndim != 2:
            raise DataError(f"intensities must be 2-D, got {self.intensities.shape}")
        n = self.intensities.shape[0]
        self.labels = np.asarray(labels, dtype=np.int64)
        if self.labels.shape != (n,):
            raise DataError("labels length does not match spectra count")
        self.provenance = (np.zeros(n, dtype=np.int64) if provenance is None
                           else np.asarray(provenance, dtype=np.int64))
        self.source_ids = (np.full(n, -1, dtype=np.int64) if source_ids is None
                           else np.asarray(source_ids, dtype=np.int64))
        self.split = (np.full(n, UNASSIGNED, dtype=np.int64) if split is None
                      else np.asarray(split, dtype=np.int64))
        self.seed = seed
        if not np.all(np.isfinite(self.intensities)):
            raise DataError("spectra contain non-finite intensities")

    def __len__(self):
        return self.intensities.shape[0]

    @property
    def length(self):
        return self.intensities.shape[1]

    def spectrum(self, i):
        sid = int(self.source_ids[i])
        return Spectrum(self.intensities[i], LABELS[self.labels[i]],
                        PROVENANCE[self.provenance[i]], None if sid < 0 else sid)

    def class_counts(self):
        return tuple(int((self.labels == c).sum()) for c in range(len(LABELS)))

    def indices(self, split=None, provenance=None, label=None):
        mask = np.ones(len(self), dtype=bool)
        if split is not None:
            mask &= self.split == split
        if provenance is not None:
            mask &= self.provenance == provenance
        if label is not None:
            mask &= self.labels == label
        return np.flatnonzero(mask)

    def subset(self, idx):
        return SpectralDataset(self.intensities[idx], self.labels[idx],
                               self.provenance[idx], self.source_ids[idx],
                               self.split[idx], seed=self.seed)

    def extended(self, intensities, labels, provenance, source_ids):
        """New dataset with extra spectra appended (splits reset)."""
        return SpectralDataset(
            np.vstack([self.intensities, intensities]),
            np.concatenate([self.labels, labels]),
            np.concatenate([self.provenance, provenance]),
            np.concatenate([self.source_ids, source_ids]),
            seed=self.seed,
        )


def _peak(grid, center, width, amp, lorentzian):
    if lorentzian:
        return amp / (1.0 + ((grid - center) / width) ** 2)
    return amp * np.exp(-0.5 * ((grid - center) / width) ** 2)


def _one_spectrum(label, length, noise_amplitude, rng):
    grid = np.arange(length, dtype=np.float64)
    x = grid / length
    # slowly varying baseline: offset, tilt, and three low-frequency ripples
    base = rng.uniform(0.10, 0.30) + rng.uniform(-0.15, 0.15) * x
    for _ in range(3):
        base += rng.uniform(0.03, 0.12) * np.cos(
            2 * np.pi * rng.uniform(0.5, 2.5) * x + rng.uniform(0, 2 * np.pi))
    y = base
    for frac, lo, hi in SIGNATURES[label]:
        center = (frac + rng.uniform(-SIGNATURE_JITTER, SIGNATURE_JITTER)) * length
        width = rng.uniform(*SIGNATURE_WIDTH) * length
        amp = rng.uniform(lo, hi)
        y = y + _peak(grid, center, width, amp, rng.random() < 0.5)
    for _ in range(rng.integers(EXTRA_PEAKS[0], EXTRA_PEAKS[1] + 1)):
        center = rng.uniform(0.03, 0.97) * length
        width = rng.uniform(*EXTRA_WIDTH) * length
        amp = rng.uniform(*EXTRA_AMP)
        y = y + _peak(grid, center, width, amp, rng.random() < 0.5)
    y = rng.uniform(*GAIN_RANGE) * y
    if noise_amplitude > 0:
        y = y + noise_amplitude * rng.standard_normal(length)
    return np.maximum(y, 0.0)


def generate_synthetic(class_counts, seed, length=1800, noise_amplitude=DEFAULT_NOISE):
    """Build a dataset with the requested per-class sample counts."""
    counts = [int(class_counts.get(name, 0)) if isinstance(class_counts, dict)
              else int(class_counts[i]) for i, name in enumerate(LABELS)]
    if any(c < 0 for c in counts):
        raise DataError(f"negative class count in {counts}")
    total = sum(counts)
    if total == 0:
        raise DataError("refusing to generate an empty dataset")
    rng = subsystem_rng(seed, "data")
    spectra = np.empty((total, length), dtype=np.float64)
    labels = np.empty(total, dtype=np.int64)
    row = 0
    for label, count in enumerate(counts):
        for _ in range(count):
            spectra[row] = _one_spectrum(label, length, noise_amplitude, rng)
            labels[row] = label
            row += 1
    return SpectralDataset(spectra, labels, seed=seed)


# ---------------------------------------------------------------------------
# PCA
# ---------------------------------------------------------------------------

@dataclass
class PcaModel:
    mean: np.ndarray                # (L,)
    components: np.ndarray          # (k, L), orthonormal rows
    explained_variance: np.ndarray  # (k,), non-increasing

    @property
    def k(self):
        return self.components.shape[0]


def fit_pca(train_matrix, k):
    """Principal components of the mean-centered rows, via SVD.

    Pass Train-split spectra only; the caller owns the leakage guard.
    """
    x = np.asarray(train_matrix, dtype=np.float64)
    n, length = x.shape
    if k < 1 or k > min(n, length):
        raise DataError(f"pca rank {k} outside [1, min(n={n}, L={length})]")
    mean = x.mean(axis=0)
    centered = x - mean
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[:k]
    # deterministic sign: largest-magnitude entry of each component positive
    for row in components:
        j = np.argmax(np.abs(row))
        if row[j] < 0:
            row *= -1.0
    explained = (s[:k] ** 2) / max(n - 1, 1)
    return PcaModel(mean, np.ascontiguousarray(components), explained)


def project(model, spectrum):
    """PCA coefficients, components @ (x - mean); accepts a row or a matrix."""
    x = np.asarray(spectrum, dtype=np.float64)
    if x.shape[-1] != model.mean.shape[0]:
        raise DataError(
            f"spectrum length {x.shape[-1]} != model length {model.mean.shape[0]}")
    return (x - model.mean) @ model.components.T


def reconstruct(model, coeffs):
    return model.mean + np.asarray(coeffs) @ model.components


def conditioning_vector(model, spectrum, k_cond=16):
    """First k_cond PCA coefficients, the context for guided generation."""
    if k_cond > model.k:
        raise DataError(f"k_cond {k_cond} exceeds retained components {model.k}")
    return project(model, spectrum)[..., :k_cond]


# ---------------------------------------------------------------------------
# splits
# ---------------------------------------------------------------------------

def _largest_remainder(n, weights):
    """Integer allocation of n into len(weights) buckets, earlier wins ties."""
    raw = np.asarray(weights, dtype=np.float64) * (n / np.sum(weights))
    base = np.floor(raw).astype(np.int64)
    rem = raw - base
    order = np.argsort(-(rem - 1e-12 * np.arange(len(weights))))
    for i in range(int(n - base.sum())):
        base[order[i]] += 1
    return base


def split_dataset(dataset, seed, ratios=(7, 2, 1), mode="plain", test_reserve=None):
    """Stratified train/val/test assignment.

    In 'augmented_test_real_only' mode the test set is drawn exclusively
    from synthetic-provenance (original) spectra, sized by test_reserve when
    given; generated spectra never enter Test. The synthetic test draw does
    not depend on how many generated spectra are present, so re-splitting an
    augmented dataset with the same seed reserves the same originals.
    """
    if len(dataset) == 0:
        raise DataError("cannot split an empty dataset")
    if mode not in ("plain", "augmented_test_real_only"):
        raise DataError(f"unknown split mode {mode!r}")
    split = np.full(len(dataset), UNASSIGNED, dtype=np.int64)

    if mode == "plain":
        for c in range(len(LABELS)):
            idx = dataset.indices(label=c)
            if idx.size == 0:
                continue
            if idx.size < 3:
                warnings.warn(f"class {LABELS[c]} has only {idx.size} samples; "
                              "stratified split degraded to best effort")
            counts = _largest_remainder(idx.size, ratios)
            perm = idx[subsystem_rng(seed, "split", c).permutation(idx.size)]
            split[perm[:counts[0]]] = TRAIN
            split[perm[counts[0]:counts[0] + counts[1]]] = VAL
            split[perm[counts[0] + counts[1]:]] = TEST
    else:
        synth_per_class = [dataset.indices(provenance=0, label=c) for c in range(len(LABELS))]
        synth_counts = np.array([idx.size for idx in synth_per_class])
        if synth_counts.sum() == 0:
            raise DataError("augmented split needs synthetic spectra for the test set")
        n_test = int(test_reserve) if test_reserve is not None else int(
            round(len(dataset) * ratios[2] / sum(ratios)))
        if n_test > synth_counts.sum():
            raise DataError(f"test reserve {n_test} exceeds the "
                            f"{synth_counts.sum()} synthetic spectra")
        per_class_test = _largest_remainder(n_test, synth_counts)
        for c in range(len(LABELS)):
            idx = synth_per_class[c]
            if idx.size == 0:
                continue
            perm = idx[subsystem_rng(seed, "split", c).permutation(idx.size)]
            split[perm[:per_class_test[c]]] = TEST
        for c in range(len(LABELS)):
            rest = np.flatnonzero((dataset.labels == c) & (split == UNASSIGNED))
            if rest.size == 0:
                continue
            counts = _largest_remainder(rest.size, ratios[:2])
            perm = rest[subsystem_rng(seed, "split", c, 1).permutation(rest.size)]
            split[perm[:counts[0]]] = TRAIN
            split[perm[counts[0]:]] = VAL

    out = SpectralDataset(dataset.intensities, dataset.labels, dataset.provenance,
                          dataset.source_ids, split, seed=seed)
    return out


# ---------------------------------------------------------------------------
# text format: `# spectra L=<L>` header, one record per line
# ---------------------------------------------------------------------------

def save_dataset(dataset, path):
    buf = io.StringIO()
    buf.write(f"# spectra L={dataset.length}\n")
    for i in range(len(dataset)):
        sid = int(dataset.source_ids[i])
        fields = [LABELS[dataset.labels[i]], PROVENANCE[dataset.provenance[i]],
                  "" if sid < 0 else str(sid)]
        fields.extend(repr(float(v)) for v in dataset.intensities[i])
        buf.write(",".join(fields))
        buf.write("\n")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(buf.getvalue())


def load_dataset(path):
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("# spectra L="):
            raise DataError(f"{path}: missing '# spectra L=' header")
        length = int(header.split("=", 1)[1])
        rows, labels, prov, sids = [], [], [], []
        for lineno, line in enumerate(fh, start=2):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if len(parts) != length + 3:
                raise DataError(f"{path}:{lineno}: expected {length + 3} fields, "
                                f"got {len(parts)}")
            try:
                labels.append(LABELS.index(parts[0]))
                prov.append(PROVENANCE.index(parts[1]))
            except ValueError:
                raise DataError(f"{path}:{lineno}: bad label/provenance "
                                f"{parts[0]!r}/{parts[1]!r}") from None
            sids.append(int(parts[2]) if parts[2] else -1)
            rows.append(np.array(parts[3:], dtype=np.float64))
    if not rows:
        raise DataError(f"{path}: no spectra")
    return SpectralDataset(np.vstack(rows), labels, prov, sids)
