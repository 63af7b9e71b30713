"""1-D masked autoencoder for reflectance spectra.

A spectrum of B reflectance values is cut into T = ceil(B / token_len)
tokens (the last one zero-padded). A random subset of tokens is masked; the
visible ones, embedded with sinusoidal positional encodings and prefixed by
a learnable [CLS] token, pass through a pre-norm transformer encoder. A
learnable mask token is inserted at the masked positions, the light decoder
reconstructs every token, and the loss is the mean squared error over
masked, non-padded channels only.

All differentiation is hand-rolled (see :mod:`hsikit.nets`) and can be
verified against central finite differences with :func:`gradient_check`.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .nets import (
    DivergenceError,
    Linear,
    LayerNorm,
    LossCurve,
    Param,
    SGDMomentum,
    TransformerBlock,
    flatten_params,
    load_flat_params,
    sinusoidal_positions,
)

_CHECKPOINT_MAGIC = b"HSIMAE01"


class GradientCheckError(AssertionError):
    """Analytic gradient disagrees with finite differences."""


@dataclass(frozen=True)
class MAEConfig:
    token_len: int = 10
    embed_dim: int = 32
    n_heads: int = 32
    encoder_depth: int = 2
    decoder_depth: int = 1
    decoder_dim: int | None = None
    decoder_heads: int = 4
    mask_ratio: float = 0.7
    learning_rate: float = 0.05
    weight_decay: float = 0.0
    epochs: int = 20
    batch_size: int = 128
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.token_len < 1:
            raise ValueError("token_len must be >= 1")
        if self.embed_dim % self.n_heads != 0:
            raise ValueError("embed_dim must be divisible by n_heads")
        dd = self.decoder_dim if self.decoder_dim is not None else self.embed_dim
        if dd % self.decoder_heads != 0:
            raise ValueError("decoder_dim must be divisible by decoder_heads")
        if not (0.0 < self.mask_ratio < 1.0):
            raise ValueError("mask_ratio must lie in (0, 1)")
        if self.learning_rate < 0 or self.weight_decay < 0:
            raise ValueError("learning_rate and weight_decay must be >= 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")
        if self.dtype not in ("float64", "float32"):
            raise ValueError("dtype must be 'float64' or 'float32'")

    @property
    def effective_decoder_dim(self) -> int:
        return self.decoder_dim if self.decoder_dim is not None else self.embed_dim


@dataclass
class TokenSequence:
    """Tokens of one spectrum plus the mask (None until random_mask)."""

    tokens: np.ndarray  # (T, token_len)
    n_bands: int
    pad_width: int  # zero-padded channels at the end of the last token
    masked: np.ndarray | None = None

    @property
    def n_tokens(self) -> int:
        return self.tokens.shape[0]

    @property
    def visible(self) -> np.ndarray:
        if self.masked is None:
            return np.arange(self.n_tokens)
        return np.setdiff1d(np.arange(self.n_tokens), self.masked)


def tokenize(spectrum: np.ndarray, token_len: int) -> TokenSequence:
    """Cut a length-B spectrum into ceil(B / token_len) zero-padded tokens."""
    spectrum = np.asarray(spectrum, dtype=np.float64).ravel()
    n_bands = spectrum.size
    if n_bands < token_len:
        raise ValueError(f"spectrum has {n_bands} bands, below token_len {token_len}")
    n_tokens = -(-n_bands // token_len)
    pad = n_tokens * token_len - n_bands
    padded = np.pad(spectrum, (0, pad))
    return TokenSequence(
        tokens=padded.reshape(n_tokens, token_len), n_bands=n_bands, pad_width=pad
    )


def detokenize(seq: TokenSequence) -> np.ndarray:
    return seq.tokens.ravel()[: seq.n_bands].copy()


def mask_count(n_tokens: int, mask_ratio: float) -> int:
    """round(ratio * T), clamped to [1, T-1]."""
    return int(np.clip(round(mask_ratio * n_tokens), 1, n_tokens - 1))


def random_mask(seq: TokenSequence, mask_ratio: float, seed) -> TokenSequence:
    """Uniform mask without replacement; deterministic under seed."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    m = mask_count(seq.n_tokens, mask_ratio)
    masked = np.sort(rng.permutation(seq.n_tokens)[:m])
    return TokenSequence(
        tokens=seq.tokens, n_bands=seq.n_bands, pad_width=seq.pad_width, masked=masked
    )


def _batch_masks(rng: np.random.Generator, n: int, n_tokens: int, m: int) -> np.ndarray:
    order = np.argsort(rng.random((n, n_tokens)), axis=1)
    return np.sort(order[:, :m], axis=1)


def _complement(idx: np.ndarray, n_tokens: int) -> np.ndarray:
    keep = np.ones((idx.shape[0], n_tokens), dtype=bool)
    np.put_along_axis(keep, idx, False, axis=1)
    return np.nonzero(keep)[1].reshape(idx.shape[0], n_tokens - idx.shape[1])


class MAENetwork:
    """Parameters and forward/backward passes for a fixed band count."""

    def __init__(self, config: MAEConfig, n_bands: int, rng: np.random.Generator | None = None):
        if n_bands < config.token_len:
            raise ValueError("n_bands must be >= token_len")
        self.config = config
        self.n_bands = n_bands
        self.n_tokens = -(-n_bands // config.token_len)
        if self.n_tokens < 2:
            raise ValueError("need at least 2 tokens; lower token_len")
        self.pad_width = self.n_tokens * config.token_len - n_bands
        if rng is None:
            rng = np.random.default_rng(config.seed)
        dt = np.float32 if config.dtype == "float32" else np.float64
        self.dtype = dt
        d, dd = config.embed_dim, config.effective_decoder_dim
        self.embed = Linear(rng, config.token_len, d, "embed", dtype=dt)
        self.cls = Param("cls", rng.normal(0.0, 0.02, size=d), dtype=dt)
        self.enc_blocks = [
            TransformerBlock(rng, d, config.n_heads, 2 * d, f"enc{i}", dtype=dt)
            for i in range(config.encoder_depth)
        ]
        self.enc_norm = LayerNorm(d, "enc_norm", dtype=dt)
        self.proj = Linear(rng, d, dd, "proj", dtype=dt)
        self.mask_token = Param("mask_token", rng.normal(0.0, 0.02, size=dd), dtype=dt)
        self.dec_blocks = [
            TransformerBlock(rng, dd, config.decoder_heads, 2 * dd, f"dec{i}", dtype=dt)
            for i in range(config.decoder_depth)
        ]
        self.dec_norm = LayerNorm(dd, "dec_norm", dtype=dt)
        self.head = Linear(rng, dd, config.token_len, "head", dtype=dt)
        self.pos_enc = sinusoidal_positions(self.n_tokens, d).astype(dt)
        self.pos_dec = sinusoidal_positions(self.n_tokens, dd).astype(dt)

    # -- parameter plumbing --

    def params(self) -> list[Param]:
        out = self.embed.params() + [self.cls]
        for blk in self.enc_blocks:
            out += blk.params()
        out += self.enc_norm.params() + self.proj.params() + [self.mask_token]
        for blk in self.dec_blocks:
            out += blk.params()
        out += self.dec_norm.params() + self.head.params()
        return out

    @property
    def n_parameters(self) -> int:
        return int(sum(p.value.size for p in self.params()))

    def zero_grad(self) -> None:
        for p in self.params():
            p.grad[...] = 0.0

    # -- tokenization of batches --

    def batch_tokens(self, spectra: np.ndarray) -> np.ndarray:
        spectra = np.atleast_2d(np.asarray(spectra, dtype=np.float64))
        if spectra.shape[1] != self.n_bands:
            raise ValueError(
                f"spectra have {spectra.shape[1]} bands, model expects {self.n_bands}"
            )
        padded = np.pad(spectra, ((0, 0), (0, self.pad_width)))
        return padded.reshape(
            spectra.shape[0], self.n_tokens, self.config.token_len
        ).astype(self.dtype)

    def _valid_channels(self, token_idx: np.ndarray) -> np.ndarray:
        """(N, M, token_len) mask of non-padded channels at the given tokens."""
        n, m = token_idx.shape
        tl = self.config.token_len
        valid = np.ones((n, m, tl), dtype=bool)
        if self.pad_width:
            last = token_idx == self.n_tokens - 1
            valid[last, tl - self.pad_width :] = False
        return valid

    # -- encoder --

    def encode_tokens(self, seq_emb: np.ndarray) -> np.ndarray:
        """Run the encoder stack on an embedded sequence (N, S, d)."""
        x = seq_emb
        for blk in self.enc_blocks:
            x = blk.forward(x)
        return self.enc_norm.forward(x)

    def _encode_backward(self, d_out: np.ndarray) -> np.ndarray:
        dx = self.enc_norm.backward(d_out)
        for blk in reversed(self.enc_blocks):
            dx = blk.backward(dx)
        return dx

    def encode_batch(self, spectra: np.ndarray, vis_idx: np.ndarray | None = None):
        """([CLS] embeddings (N, d), visible-token embeddings (N, V, d))."""
        tokens = self.batch_tokens(spectra)
        n = tokens.shape[0]
        if vis_idx is None:
            vis_idx = np.tile(np.arange(self.n_tokens), (n, 1))
        rows = np.arange(n)[:, None]
        vis_tokens = tokens[rows, vis_idx]
        emb = self.embed.forward(vis_tokens) + self.pos_enc[vis_idx]
        seq = np.concatenate(
            [np.broadcast_to(self.cls.value, (n, 1, emb.shape[2])), emb], axis=1
        )
        out = self.encode_tokens(seq)
        return out[:, 0, :], out[:, 1:, :]

    # -- full masked forward / backward --

    def forward_loss(self, tokens: np.ndarray, mask_idx: np.ndarray):
        """Masked-reconstruction loss; caches everything backward() needs.

        Returns (loss, reconstruction (N, T, token_len)).
        """
        n = tokens.shape[0]
        cfg = self.config
        rows = np.arange(n)[:, None]
        vis_idx = _complement(mask_idx, self.n_tokens)
        vis_tokens = tokens[rows, vis_idx]
        emb = self.embed.forward(vis_tokens) + self.pos_enc[vis_idx]
        seq = np.concatenate(
            [np.broadcast_to(self.cls.value, (n, 1, cfg.embed_dim)), emb], axis=1
        )
        enc_out = self.encode_tokens(seq)
        # project the whole encoded sequence ([CLS] + visible) into the decoder
        dec_emb = self.proj.forward(enc_out)
        dd = cfg.effective_decoder_dim
        # decoder sequence: [CLS] passthrough at slot 0, then all token slots
        # (visible projections or the learnable mask token) + positions
        dec_seq = np.empty((n, self.n_tokens + 1, dd), dtype=self.dtype)
        dec_seq[:, 0, :] = dec_emb[:, 0, :]
        dec_seq[rows, vis_idx + 1] = dec_emb[:, 1:, :] + self.pos_dec[vis_idx]
        dec_seq[rows, mask_idx + 1] = self.mask_token.value + self.pos_dec[mask_idx]
        x = dec_seq
        for blk in self.dec_blocks:
            x = blk.forward(x)
        dec_out = self.dec_norm.forward(x)
        recon = self.head.forward(dec_out[:, 1:, :])

        pred_m = recon[rows, mask_idx]
        target_m = tokens[rows, mask_idx]
        valid = self._valid_channels(mask_idx)
        resid = np.where(valid, pred_m - target_m, self.dtype(0.0))
        count = int(valid.sum())
        loss = float((resid * resid).astype(np.float64).sum() / count)

        self._cache = (n, rows, vis_idx, mask_idx, resid, count, valid)
        return loss, recon

    def backward(self) -> None:
        n, rows, vis_idx, mask_idx, resid, count, valid = self._cache
        d_recon = np.zeros((n, self.n_tokens, self.config.token_len), dtype=self.dtype)
        d_recon[rows, mask_idx] = 2.0 * resid.astype(self.dtype) / self.dtype(count)
        d_dec_out = np.zeros(
            (n, self.n_tokens + 1, self.config.effective_decoder_dim), dtype=self.dtype
        )
        d_dec_out[:, 1:, :] = self.head.backward(d_recon)
        dx = self.dec_norm.backward(d_dec_out)
        for blk in reversed(self.dec_blocks):
            dx = blk.backward(dx)
        # positional encodings are fixed, gradient passes through unchanged
        self.mask_token.grad += dx[rows, mask_idx + 1].sum(axis=(0, 1))
        d_dec_emb = np.empty(
            (n, vis_idx.shape[1] + 1, self.config.effective_decoder_dim), dtype=self.dtype
        )
        d_dec_emb[:, 0, :] = dx[:, 0, :]
        d_dec_emb[:, 1:, :] = dx[rows, vis_idx + 1]
        d_enc_out = self.proj.backward(d_dec_emb)
        d_seq = self._encode_backward(d_enc_out)
        self.cls.grad += d_seq[:, 0, :].sum(axis=0)
        self.embed.backward(d_seq[:, 1:, :])

    def loss_only(self, tokens: np.ndarray, mask_idx: np.ndarray) -> float:
        loss, _ = self.forward_loss(tokens, mask_idx)
        return loss

    # -- inference --

    def cls_embeddings(self, spectra: np.ndarray) -> np.ndarray:
        """[CLS] representation with nothing masked, (N, embed_dim)."""
        cls_out, _ = self.encode_batch(spectra)
        return cls_out


def encode(network: MAENetwork, seq: TokenSequence):
    """Single-sequence encoder pass; only visible tokens (plus [CLS]) enter."""
    spectrum = detokenize(seq)
    vis = seq.visible[None, :]
    cls_out, vis_out = network.encode_batch(spectrum[None, :], vis_idx=vis)
    return cls_out[0], vis_out[0]


def decode_and_loss(network: MAENetwork, seq: TokenSequence):
    """Reconstruction of the full spectrum plus the masked-channel MSE."""
    if seq.masked is None:
        raise ValueError("sequence has no mask; call random_mask first")
    tokens = network.batch_tokens(detokenize(seq)[None, :])
    loss, recon = network.forward_loss(tokens, seq.masked[None, :])
    recon_seq = TokenSequence(
        tokens=recon[0], n_bands=seq.n_bands, pad_width=seq.pad_width
    )
    return detokenize(recon_seq), loss


def cls_embedding(network: MAENetwork, spectrum: np.ndarray) -> np.ndarray:
    """Whole-spectrum representation: encoder output of [CLS], no masking."""
    return network.cls_embeddings(np.asarray(spectrum)[None, :])[0]


def train_mae(
    spectra: np.ndarray,
    config: MAEConfig,
    val_spectra: np.ndarray | None = None,
    val_fraction: float = 0.1,
) -> tuple[MAENetwork, LossCurve]:
    """Mini-batch SGD-with-momentum training of the masked autoencoder.

    Deterministic under ``config.seed``: initialization, the train/val split,
    per-epoch shuffling and per-batch masks all derive from it. Validation
    masks are drawn once and reused so the validation loss is comparable
    across epochs. Raises :class:`DivergenceError` naming the epoch if the
    loss goes non-finite.
    """
    spectra = np.atleast_2d(np.asarray(spectra, dtype=np.float64))
    if spectra.size == 0:
        raise ValueError("training set is empty")
    if not np.all(np.isfinite(spectra)):
        raise ValueError("training spectra contain non-finite values")
    rng = np.random.default_rng(config.seed)
    net = MAENetwork(config, spectra.shape[1], rng=rng)

    if val_spectra is None:
        n_val = max(1, int(round(val_fraction * spectra.shape[0])))
        if n_val >= spectra.shape[0]:
            n_val = max(0, spectra.shape[0] - 1)
        perm = rng.permutation(spectra.shape[0])
        val_spectra = spectra[perm[:n_val]]
        spectra = spectra[perm[n_val:]]
    else:
        val_spectra = np.atleast_2d(np.asarray(val_spectra, dtype=np.float64))

    m = mask_count(net.n_tokens, config.mask_ratio)
    val_tokens = net.batch_tokens(val_spectra) if val_spectra.size else None
    val_masks = (
        _batch_masks(rng, val_spectra.shape[0], net.n_tokens, m)
        if val_spectra.size
        else None
    )

    optimizer = SGDMomentum(
        net.params(), lr=config.learning_rate, weight_decay=config.weight_decay
    )
    curve = LossCurve()
    n_train = spectra.shape[0]
    for epoch in range(config.epochs):
        epoch_rng = np.random.default_rng([config.seed, 7919, epoch])
        order = epoch_rng.permutation(n_train)
        sq_sum = 0.0
        entries = 0
        for start in range(0, n_train, config.batch_size):
            batch = spectra[order[start : start + config.batch_size]]
            tokens = net.batch_tokens(batch)
            masks = _batch_masks(epoch_rng, batch.shape[0], net.n_tokens, m)
            optimizer.zero_grad()
            loss, _ = net.forward_loss(tokens, masks)
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite training loss at epoch {epoch}")
            net.backward()
            optimizer.step()
            count = net._cache[5]
            sq_sum += loss * count
            entries += count
        train_loss = sq_sum / max(entries, 1)
        if val_tokens is not None:
            val_loss = net.loss_only(val_tokens, val_masks)
        else:
            val_loss = float("nan")
        if not np.isfinite(train_loss) or (val_tokens is not None and not np.isfinite(val_loss)):
            raise DivergenceError(f"non-finite loss at epoch {epoch}")
        for p in net.params():
            if not np.all(np.isfinite(p.value)):
                raise DivergenceError(f"non-finite parameter {p.name} at epoch {epoch}")
        curve.train.append(float(train_loss))
        curve.validation.append(float(val_loss))
    return net, curve


def gradient_check(
    network: MAENetwork,
    spectra: np.ndarray,
    tolerance: float = 1e-4,
    n_coords: int = 200,
    step: float = 1e-5,
    seed: int = 0,
    mask_idx: np.ndarray | None = None,
) -> float:
    """Max relative error between analytic and central-finite-difference grads.

    Relative error per coordinate is |a - n| / max(|a| + |n|, 1e-4), checked
    on ``n_coords`` randomly chosen parameter coordinates with a fixed mask.
    Raises :class:`GradientCheckError` naming the worst coordinate when the
    tolerance is exceeded.
    """
    if network.n_parameters > 10_000:
        raise ValueError("gradient_check is limited to models with <= 10^4 parameters")
    spectra = np.atleast_2d(np.asarray(spectra, dtype=np.float64))
    tokens = network.batch_tokens(spectra)
    rng = np.random.default_rng(seed)
    if mask_idx is None:
        m = mask_count(network.n_tokens, network.config.mask_ratio)
        mask_idx = _batch_masks(rng, spectra.shape[0], network.n_tokens, m)

    network.zero_grad()
    loss, _ = network.forward_loss(tokens, mask_idx)
    network.backward()
    params = network.params()
    sizes = [p.value.size for p in params]
    total = sum(sizes)
    coords = rng.choice(total, size=min(n_coords, total), replace=False)

    bounds = np.cumsum([0] + sizes)
    worst = (0.0, "", 0, 0.0, 0.0)
    for flat_idx in coords:
        pi = int(np.searchsorted(bounds, flat_idx, side="right") - 1)
        local = int(flat_idx - bounds[pi])
        view = params[pi].value.ravel()
        analytic = float(params[pi].grad.ravel()[local])
        original = view[local]
        view[local] = original + step
        plus = network.loss_only(tokens, mask_idx)
        view[local] = original - step
        minus = network.loss_only(tokens, mask_idx)
        view[local] = original
        numeric = (plus - minus) / (2.0 * step)
        rel = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-4)
        if rel > worst[0]:
            worst = (rel, params[pi].name, local, analytic, numeric)
    # restore caches to the unperturbed point
    network.loss_only(tokens, mask_idx)
    if worst[0] > tolerance:
        raise GradientCheckError(
            f"gradient check failed at {worst[1]}[{worst[2]}]: "
            f"analytic {worst[3]:.3e} vs numeric {worst[4]:.3e} "
            f"(relative error {worst[0]:.3e} > {tolerance})"
        )
    return worst[0]


# -- checkpoints ----------------------------------------------------------------


def save_checkpoint(
    network: MAENetwork, path: str | Path, metadata: dict | None = None
) -> None:
    """Binary layout: magic, little-endian uint32 header length, JSON header
    (config, band count, parameter names/shapes), then all parameters as
    little-endian float64 in declaration order. A JSON metadata sidecar is
    written next to it."""
    params = network.params()
    header = {
        "format": "hsikit-mae",
        "version": 1,
        "config": asdict(network.config),
        "n_bands": network.n_bands,
        "params": [[p.name, list(p.value.shape)] for p in params],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    path = Path(path)
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


def load_checkpoint(path: str | Path) -> MAENetwork:
    raw = Path(path).read_bytes()
    if raw[:8] != _CHECKPOINT_MAGIC:
        raise ValueError("not an hsikit MAE checkpoint")
    (header_len,) = struct.unpack("<I", raw[8:12])
    header = json.loads(raw[12 : 12 + header_len].decode())
    config = MAEConfig(**header["config"])
    net = MAENetwork(config, header["n_bands"])
    flat = np.frombuffer(raw[12 + header_len :], dtype="<f8")
    load_flat_params(net.params(), flat.astype(np.float64))
    return net


class MaskedAutoencoder(BaseEstimator, TransformerMixin):
    """Estimator facade: fit pretrains on spectra, transform returns [CLS]."""

    def __init__(self, token_len=10, embed_dim=32, n_heads=32, encoder_depth=2,
                 decoder_depth=1, decoder_dim=None, decoder_heads=4, mask_ratio=0.7,
                 learning_rate=0.05, weight_decay=0.0, epochs=20, batch_size=128,
                 seed=0):
        self.token_len = token_len
        self.embed_dim = embed_dim
        self.n_heads = n_heads
        self.encoder_depth = encoder_depth
        self.decoder_depth = decoder_depth
        self.decoder_dim = decoder_dim
        self.decoder_heads = decoder_heads
        self.mask_ratio = mask_ratio
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.batch_size = batch_size
        self.seed = seed

    def _config(self) -> MAEConfig:
        return MAEConfig(
            token_len=self.token_len, embed_dim=self.embed_dim, n_heads=self.n_heads,
            encoder_depth=self.encoder_depth, decoder_depth=self.decoder_depth,
            decoder_dim=self.decoder_dim, decoder_heads=self.decoder_heads,
            mask_ratio=self.mask_ratio,
            learning_rate=self.learning_rate, weight_decay=self.weight_decay,
            epochs=self.epochs, batch_size=self.batch_size, seed=self.seed,
        )

    def fit(self, X, y=None):
        self.network_, self.loss_curve_ = train_mae(np.asarray(X), self._config())
        return self

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "network_")
        return self.network_.cls_embeddings(np.asarray(X, dtype=np.float64))
