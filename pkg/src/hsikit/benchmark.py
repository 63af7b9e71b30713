"""Seeded synthetic spectra benchmark for representation-learning trends.

Five materials share a smooth base spectrum and differ by class-specific
absorption-like bumps; samples get multiplicative brightness jitter and
heavy iid band noise. The labeled set is long-tailed. Under this noise the
raw spectral space is confusable for nearest-neighbor and tree classifiers,
while a pretrained masked autoencoder can pool information across bands, so
embedding-space classifiers recover a clear margin. The class-share and
noise constants below are the calibrated defaults the acceptance suite runs
with; they are part of the benchmark definition.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autoencoder import AEConfig, train_autoencoder
from .classifiers import LabeledSet, NearestNeighborClassifier, RandomForest
from .mae import MAEConfig, train_mae
from .metrics import confusion_matrix, macro_f1, overall_accuracy

DEFAULT_CLASS_SHARES = (0.55, 0.22, 0.12, 0.07, 0.04)
DEFAULT_BRIGHTNESS_JITTER = 0.3
DEFAULT_NOISE_SIGMA = 0.05
DEFAULT_BUMP_AMPLITUDE = 0.12
DEFAULT_LINE_AMPLITUDE = 0.3
DEFAULT_ILLUMINATION_SIGMA = 0.25
DEFAULT_SHIFT_BANDS = 6.0
_N_ILLUMINATION_MODES = 4
_N_CLASS_LINES = 24


@dataclass
class SpectraBenchmark:
    unlabeled: np.ndarray
    train: LabeledSet
    test: LabeledSet
    endmembers: np.ndarray
    wavelengths_um: np.ndarray

    @property
    def n_classes(self) -> int:
        return self.endmembers.shape[0]

    def test_histogram(self) -> np.ndarray:
        return np.bincount(self.test.labels, minlength=self.n_classes + 1)[1:]


def _benchmark_endmembers(rng, n_classes, wavelengths, amplitude, line_amplitude):
    """Classes differ by a global smooth shape: per-class coefficients over a
    set of broad Gaussian anchors spanning the whole axis, so class identity
    is inferable from any spectral region (not just one local bump)."""
    wl = wavelengths
    span = wl[-1] - wl[0]
    n_anchors = 6
    centers = wl[0] + (np.arange(n_anchors) + 0.5) * span / n_anchors
    anchors = np.exp(
        -0.5 * ((wl[None, :] - centers[:, None]) / (0.35 * span / n_anchors * 3)) ** 2
    )
    base = np.full(wl.size, rng.uniform(0.3, 0.4))
    base += rng.uniform(0.02, 0.05) * np.sin(2 * np.pi * (wl - wl[0]) / span)
    for _ in range(50):
        coefs = rng.normal(size=(n_classes, n_anchors))
        coefs /= np.linalg.norm(coefs, axis=1, keepdims=True)
        gaps = [
            np.linalg.norm(coefs[i] - coefs[j])
            for i in range(n_classes)
            for j in range(i + 1, n_classes)
        ]
        if min(gaps) > 0.9:
            break
    endmembers = base[None, :] + amplitude * (coefs @ anchors)
    # Class-specific narrow absorption-like lines scattered over the axis:
    # too narrow to interpolate across a masked gap, so reconstructing them
    # requires recognizing the class from the visible bands.
    line_width = 0.012 * span / 2.1
    for k in range(n_classes):
        centers_k = rng.uniform(wl[0], wl[-1], size=_N_CLASS_LINES)
        signs = rng.choice((-1.0, 1.0), size=_N_CLASS_LINES)
        for c, sgn in zip(centers_k, signs):
            endmembers[k] += sgn * line_amplitude * np.exp(
                -0.5 * ((wl - c) / line_width) ** 2
            )
    return np.clip(endmembers, 0.02, 1.0)


def _illumination_modes(rng, wavelengths):
    """Broad smooth curves multiplying the spectrum, like slope/atmosphere
    variations; they corrupt raw Euclidean distances coherently across bands."""
    wl = wavelengths
    span = wl[-1] - wl[0]
    centers = rng.uniform(wl[0], wl[-1], size=_N_ILLUMINATION_MODES)
    widths = rng.uniform(0.25, 0.45, size=_N_ILLUMINATION_MODES) * span
    modes = np.exp(-0.5 * ((wl[None, :] - centers[:, None]) / widths[:, None]) ** 2)
    return modes / np.abs(modes).max(axis=1, keepdims=True)


def _draw_spectra(rng, endmembers, modes, labels, jitter, noise_sigma, illum_sigma,
                  shift_bands):
    spectra = endmembers[labels - 1].astype(np.float64)
    if shift_bands > 0:
        # per-sample sub-band spectral misalignment: narrow features no longer
        # line up between samples, which corrupts plain Euclidean distances
        idx = np.arange(spectra.shape[1], dtype=np.float64)
        shifts = rng.uniform(-shift_bands, shift_bands, size=labels.size)
        spectra = np.stack(
            [np.interp(idx + s, idx, row) for s, row in zip(shifts, spectra)]
        )
    factors = 1.0 + rng.uniform(-jitter, jitter, size=labels.size)
    coefs = rng.normal(0.0, illum_sigma, size=(labels.size, modes.shape[0]))
    fields = np.maximum(1.0 + coefs @ modes, 0.2)
    spectra = spectra * factors[:, None] * fields
    spectra += rng.normal(0.0, noise_sigma, size=spectra.shape)
    return np.maximum(spectra, 0.0)


def make_spectra_benchmark(
    seed: int,
    n_classes: int = 5,
    n_labeled: int = 1000,
    n_unlabeled: int = 10000,
    bands: int = 310,
    class_shares: tuple = DEFAULT_CLASS_SHARES,
    brightness_jitter: float = DEFAULT_BRIGHTNESS_JITTER,
    noise_sigma: float = DEFAULT_NOISE_SIGMA,
    bump_amplitude: float = DEFAULT_BUMP_AMPLITUDE,
    line_amplitude: float = DEFAULT_LINE_AMPLITUDE,
    illumination_sigma: float = DEFAULT_ILLUMINATION_SIGMA,
    shift_bands: float = DEFAULT_SHIFT_BANDS,
    train_fraction: float = 0.3,
) -> SpectraBenchmark:
    """Long-tailed labeled set + uniform unlabeled pool, deterministic per seed."""
    if len(class_shares) != n_classes:
        raise ValueError("class_shares must have one entry per class")
    rng = np.random.default_rng(seed)
    wavelengths = np.linspace(0.4, 2.5, bands)
    endmembers = _benchmark_endmembers(
        rng, n_classes, wavelengths, bump_amplitude, line_amplitude
    )
    modes = _illumination_modes(rng, wavelengths)

    counts = np.floor(np.asarray(class_shares) * n_labeled).astype(int)
    counts[0] += n_labeled - counts.sum()
    labels = np.repeat(np.arange(1, n_classes + 1), counts)
    labeled = _draw_spectra(
        rng, endmembers, modes, labels, brightness_jitter, noise_sigma,
        illumination_sigma, shift_bands,
    )

    unlabeled_labels = rng.integers(1, n_classes + 1, size=n_unlabeled)
    unlabeled = _draw_spectra(
        rng, endmembers, modes, unlabeled_labels, brightness_jitter, noise_sigma,
        illumination_sigma, shift_bands,
    )

    train_idx, test_idx = [], []
    for k in range(1, n_classes + 1):
        idx = np.where(labels == k)[0]
        idx = idx[rng.permutation(idx.size)]
        n_train = max(1, int(round(train_fraction * idx.size)))
        if n_train >= idx.size:
            n_train = idx.size - 1
        train_idx.append(idx[:n_train])
        test_idx.append(idx[n_train:])
    train_idx = np.concatenate(train_idx)
    test_idx = np.concatenate(test_idx)

    return SpectraBenchmark(
        unlabeled=unlabeled,
        train=LabeledSet(labeled[train_idx], labels[train_idx], tag="train"),
        test=LabeledSet(labeled[test_idx], labels[test_idx], tag="test"),
        endmembers=endmembers,
        wavelengths_um=wavelengths,
    )


def default_benchmark_mae_config(seed: int, mask_ratio: float = 0.7,
                                 epochs: int = 6) -> MAEConfig:
    return MAEConfig(
        token_len=10, embed_dim=32, n_heads=32, encoder_depth=2, decoder_depth=1,
        mask_ratio=mask_ratio, learning_rate=0.05, weight_decay=0.0,
        epochs=epochs, batch_size=256, seed=seed,
    )


def _score(train: LabeledSet, test: LabeledSet, clf) -> dict:
    clf.fit(train.features, train.labels)
    predicted = clf.predict(test.features)
    n_classes = int(max(test.labels.max(), predicted.max()))
    cm = confusion_matrix(test.labels, predicted, n_classes)
    return {"oa": overall_accuracy(cm), "macro_f1": macro_f1(cm)}


def representation_benchmark(
    seed: int,
    mae_config: MAEConfig | None = None,
    ae_config: AEConfig | None = None,
    knn_k: int = 5,
    rf_trees: int = 50,
    include_ae: bool = False,
) -> dict:
    """Raw-space vs embedding-space KNN and RF scores on one benchmark seed."""
    bench = make_spectra_benchmark(seed)
    if mae_config is None:
        mae_config = default_benchmark_mae_config(seed)
    network, _ = train_mae(bench.unlabeled, mae_config)
    train_emb = network.cls_embeddings(bench.train.features)
    test_emb = network.cls_embeddings(bench.test.features)
    emb_train = LabeledSet(train_emb, bench.train.labels, tag="train")
    emb_test = LabeledSet(test_emb, bench.test.labels, tag="test")

    out = {
        "knn_raw": _score(bench.train, bench.test, NearestNeighborClassifier(k=knn_k)),
        "knn_mae": _score(emb_train, emb_test, NearestNeighborClassifier(k=knn_k)),
        "rf_raw": _score(bench.train, bench.test, RandomForest(n_trees=rf_trees, seed=seed)),
        "rf_mae": _score(emb_train, emb_test, RandomForest(n_trees=rf_trees, seed=seed)),
    }
    if include_ae:
        if ae_config is None:
            ae_config = AEConfig(latent_dim=32, learning_rate=0.05, epochs=mae_config.epochs,
                                 batch_size=256, seed=seed)
        ae_net, _ = train_autoencoder(bench.unlabeled, ae_config)
        ae_train = LabeledSet(ae_net.embed(bench.train.features), bench.train.labels)
        ae_test = LabeledSet(ae_net.embed(bench.test.features), bench.test.labels)
        out["knn_ae"] = _score(ae_train, ae_test, NearestNeighborClassifier(k=knn_k))
        out["rf_ae"] = _score(ae_train, ae_test, RandomForest(n_trees=rf_trees, seed=seed))
    return out


def masking_ratio_sweep(
    ratios=(0.3, 0.5, 0.7, 0.9),
    seeds=(0, 1, 2),
    epochs: int = 6,
    knn_k: int = 5,
) -> dict:
    """Mean downstream KNN accuracy per masking ratio, averaged over seeds."""
    accuracies = {float(r): [] for r in ratios}
    for seed in seeds:
        bench = make_spectra_benchmark(seed)
        for ratio in ratios:
            config = default_benchmark_mae_config(seed, mask_ratio=float(ratio),
                                                  epochs=epochs)
            network, _ = train_mae(bench.unlabeled, config)
            emb_train = LabeledSet(
                network.cls_embeddings(bench.train.features), bench.train.labels
            )
            emb_test = LabeledSet(
                network.cls_embeddings(bench.test.features), bench.test.labels
            )
            score = _score(emb_train, emb_test, NearestNeighborClassifier(k=knn_k))
            accuracies[float(ratio)].append(score["oa"])
    return {r: float(np.mean(v)) for r, v in accuracies.items()}
