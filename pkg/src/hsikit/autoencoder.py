"""Dense autoencoder baseline: linear encoder B->latent, linear decoder back.

Trained with the same mini-batch SGD-with-momentum loop and determinism
contract as the masked autoencoder; the embedding is the encoder output.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .nets import (
    DivergenceError,
    Linear,
    LossCurve,
    SGDMomentum,
    flatten_params,
    load_flat_params,
)

_CHECKPOINT_MAGIC = b"HSIAE001"


@dataclass(frozen=True)
class AEConfig:
    latent_dim: int = 32
    learning_rate: float = 0.05
    weight_decay: float = 0.0
    epochs: int = 20
    batch_size: int = 128
    seed: int = 0
    init: str = "glorot"  # or "identity" (requires latent_dim == n_bands)

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.init not in ("glorot", "identity"):
            raise ValueError("init must be 'glorot' or 'identity'")


class AENetwork:
    def __init__(self, config: AEConfig, n_bands: int, rng: np.random.Generator | None = None):
        self.config = config
        self.n_bands = n_bands
        if rng is None:
            rng = np.random.default_rng(config.seed)
        self.encoder = Linear(rng, n_bands, config.latent_dim, "encoder")
        self.decoder = Linear(rng, config.latent_dim, n_bands, "decoder")
        if config.init == "identity":
            if config.latent_dim != n_bands:
                raise ValueError("identity init requires latent_dim == n_bands")
            self.encoder.W.value[...] = np.eye(n_bands)
            self.decoder.W.value[...] = np.eye(n_bands)

    def params(self):
        return self.encoder.params() + self.decoder.params()

    @property
    def n_parameters(self) -> int:
        return int(sum(p.value.size for p in self.params()))

    def zero_grad(self):
        for p in self.params():
            p.grad[...] = 0.0

    def forward_loss(self, x: np.ndarray):
        recon = self.decoder.forward(self.encoder.forward(x))
        resid = recon - x
        loss = float((resid * resid).mean())
        self._cache = (resid, x.size)
        return loss, recon

    def backward(self):
        resid, size = self._cache
        self.encoder.backward(self.decoder.backward(2.0 * resid / size))

    def embed(self, x: np.ndarray) -> np.ndarray:
        return np.atleast_2d(np.asarray(x, dtype=np.float64)) @ self.encoder.W.value + self.encoder.b.value


def train_autoencoder(
    spectra: np.ndarray,
    config: AEConfig,
    val_spectra: np.ndarray | None = None,
    val_fraction: float = 0.1,
) -> tuple[AENetwork, LossCurve]:
    """MSE reconstruction training on full spectra; deterministic under seed."""
    spectra = np.atleast_2d(np.asarray(spectra, dtype=np.float64))
    if spectra.size == 0:
        raise ValueError("training set is empty")
    if not np.all(np.isfinite(spectra)):
        raise ValueError("training spectra contain non-finite values")
    rng = np.random.default_rng(config.seed)
    net = AENetwork(config, spectra.shape[1], rng=rng)
    if val_spectra is None:
        n_val = max(1, int(round(val_fraction * spectra.shape[0])))
        if n_val >= spectra.shape[0]:
            n_val = max(0, spectra.shape[0] - 1)
        perm = rng.permutation(spectra.shape[0])
        val_spectra = spectra[perm[:n_val]]
        spectra = spectra[perm[n_val:]]
    else:
        val_spectra = np.atleast_2d(np.asarray(val_spectra, dtype=np.float64))

    optimizer = SGDMomentum(
        net.params(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    curve = LossCurve()
    n_train = spectra.shape[0]
    for epoch in range(config.epochs):
        epoch_rng = np.random.default_rng([config.seed, 104729, epoch])
        order = epoch_rng.permutation(n_train)
        sq_sum = 0.0
        entries = 0
        for start in range(0, n_train, config.batch_size):
            batch = spectra[order[start : start + config.batch_size]]
            optimizer.zero_grad()
            loss, _ = net.forward_loss(batch)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            net.backward()
            optimizer.step()
            sq_sum += loss * batch.size
            entries += batch.size
        val_loss = (
            net.forward_loss(val_spectra)[0] if val_spectra.size else float("nan")
        )
        if val_spectra.size and not np.isfinite(val_loss):
            raise DivergenceError(f"non-finite validation loss at epoch {epoch}")
        for p in net.params():
            if not np.all(np.isfinite(p.value)):
                raise DivergenceError(f"non-finite parameter {p.name} at epoch {epoch}")
        curve.train.append(float(sq_sum / max(entries, 1)))
        curve.validation.append(float(val_loss))
    return net, curve


def ae_embedding(network: AENetwork, spectrum: np.ndarray) -> np.ndarray:
    out = network.embed(np.asarray(spectrum))
    return out[0] if np.asarray(spectrum).ndim == 1 else out


def save_checkpoint(network: AENetwork, path: str | Path, metadata: dict | None = None) -> None:
    params = network.params()
    header = {
        "format": "hsikit-ae",
        "version": 1,
        "config": asdict(network.config),
        "n_bands": network.n_bands,
        "params": [[p.name, list(p.value.shape)] for p in params],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(flatten_params(params), dtype="<f8").tobytes())
    meta = {
        "config": asdict(network.config),
        "n_bands": network.n_bands,
        "parameter_count": network.n_parameters,
    }
    if metadata:
        meta.update(metadata)
    Path(str(path) + ".json").write_text(json.dumps(meta, sort_keys=True, indent=1))


def load_checkpoint(path: str | Path) -> AENetwork:
    raw = Path(path).read_bytes()
    if raw[:8] != _CHECKPOINT_MAGIC:
        raise ValueError("not an hsikit autoencoder checkpoint")
    (header_len,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + header_len].decode())
    net = AENetwork(AEConfig(**header["config"]), header["n_bands"])
    flat = np.frombuffer(raw[12 + header_len :], dtype="<f8")
    load_flat_params(net.params(), flat.astype(np.float64))
    return net


class SpectralAutoencoder(BaseEstimator, TransformerMixin):
    """Estimator facade over train_autoencoder / ae_embedding."""

    def __init__(self, latent_dim=32, learning_rate=0.05, weight_decay=0.0,
                 epochs=20, batch_size=128, seed=0, init="glorot"):
        self.latent_dim = latent_dim
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed
        self.init = init

    def _config(self) -> AEConfig:
        return AEConfig(
            latent_dim=self.latent_dim, learning_rate=self.learning_rate,
            weight_decay=self.weight_decay, epochs=self.epochs,
            batch_size=self.batch_size, seed=self.seed, init=self.init,
        )

    def fit(self, X, y=None):
        self.network_, self.loss_curve_ = train_autoencoder(np.asarray(X), self._config())
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "network_")
        return self.network_.embed(X)
