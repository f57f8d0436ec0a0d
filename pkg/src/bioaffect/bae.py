"""Bio auto-encoder: a 1000-sample channel window to a 128-value latent and back.

Encoder: three valid conv/ReLU/maxpool blocks, then a fully connected
bottleneck. Decoder: a fully connected expansion, then index unpooling
mirrored against the encoder's pools interleaved with full (transposed)
convolutions, ending in a ReLU so reconstructions stay non-negative like
the [0, 1]-scaled inputs.

One model per channel; latent codes from different channels never share
parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .errors import GraphError, ShapeError
from .params import ParamStore
from .signals import BioSegment, Channel
from .tensor import Tensor


@dataclass(frozen=True)
class BaeArch:
    """Layer sizes; the default is the production configuration."""

    seg_len: int = 1000
    kernels: tuple = (200, 100, 50)
    enc_filters: tuple = (16, 8, 4)
    latent: int = 128
    pool: int = 2

    def __post_init__(self):
        if len(self.kernels) != len(self.enc_filters):
            raise ShapeError("kernels and enc_filters must have equal length")

    @classmethod
    def toy(cls) -> "BaeArch":
        return cls(seg_len=40, kernels=(9, 5, 3), enc_filters=(4, 3, 2), latent=6)

    def encoder_chain(self) -> list:
        """Lengths after each conv and pool, in order."""
        chain = []
        length = self.seg_len
        for k in self.kernels:
            length = length - k + 1
            chain.append(length)
            length = (length - self.pool) // self.pool + 1
            chain.append(length)
        return chain

    def decoder_chain(self) -> list:
        """Lengths after each unpool and conv, ending at seg_len."""
        enc = self.encoder_chain()
        # Unpool targets are the encoder pre-pool lengths in reverse; each
        # full conv then lands exactly on the next pooled length.
        chain = []
        for i in range(len(self.kernels) - 1, -1, -1):
            chain.append(enc[2 * i])
            chain.append(enc[2 * i - 1] if i > 0 else self.seg_len)
        return chain

    @property
    def flat_width(self) -> int:
        return self.enc_filters[-1] * self.encoder_chain()[-1]


@dataclass
class LatentVector:
    """The compact per-channel code emitted by the encoder bottleneck."""

    z: np.ndarray
    channel: Channel

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=np.float64)
        if self.z.ndim != 1:
            raise ShapeError("latent vector must be 1D")
        if not np.isfinite(self.z).all():
            raise ShapeError("latent vector contains non-finite values")


class BaeModel:
    """Encoder/decoder parameter bundle for one bio channel."""

    def __init__(self, store: ParamStore, channel: Channel, arch: BaeArch = BaeArch(),
                 prefix: str | None = None):
        self.store = store
        self.channel = channel
        self.arch = arch
        self.prefix = prefix if prefix is not None else f"bae.{channel.value}."
        self._build()

    def _build(self):
        arch = self.arch
        p = self.prefix
        in_ch = 1
        for i, (k, f) in enumerate(zip(arch.kernels, arch.enc_filters), start=1):
            self.store.create(f"{p}enc.conv{i}.w", (f, in_ch, k))
            self.store.create(f"{p}enc.conv{i}.b", (f,), init="zeros")
            in_ch = f
        self.store.create(f"{p}enc.fc.w", (arch.latent, arch.flat_width))
        self.store.create(f"{p}enc.fc.b", (arch.latent,), init="zeros")
        self.store.create(f"{p}dec.fc.w", (arch.flat_width, arch.latent))
        self.store.create(f"{p}dec.fc.b", (arch.flat_width,), init="zeros")
        n = len(arch.kernels)
        dec_out = list(arch.enc_filters[:-1][::-1]) + [1]  # mirror, then 1 channel
        in_ch = arch.enc_filters[-1]
        for j, (k, f) in enumerate(zip(arch.kernels[::-1], dec_out), start=n + 1):
            self.store.create(f"{p}dec.conv{j}.w", (f, in_ch, k))
            self.store.create(f"{p}dec.conv{j}.b", (f,), init="zeros")
            in_ch = f
        # Chain sanity at construction: mirrored lengths must meet exactly.
        enc, dec = self.arch.encoder_chain(), self.arch.decoder_chain()
        assert dec[-1] == arch.seg_len and len(dec) == len(enc), (enc, dec)

    def _p(self, name: str) -> Tensor:
        return self.store[self.prefix + name]

    def encode_graph(self, x: Tensor) -> tuple:
        """Graph-building encoder; returns (latent tensor, pool indices)."""
        arch = self.arch
        if x.data.ndim == 1:
            x = T.reshape(x, (1, arch.seg_len))
        if x.data.shape != (1, arch.seg_len):
            raise ShapeError(
                f"encoder input must have {arch.seg_len} samples, got {x.data.shape}"
            )
        chain = arch.encoder_chain()
        indices = []
        h = x
        for i in range(1, len(arch.kernels) + 1):
            h = T.conv1d_valid(h, self._p(f"enc.conv{i}.w"))
            h = T.relu(T.add_channel_bias(h, self._p(f"enc.conv{i}.b")))
            assert h.data.shape[1] == chain[2 * i - 2], (h.data.shape, chain)
            h, idx = T.maxpool1d(h, window=arch.pool, stride=arch.pool)
            assert h.data.shape[1] == chain[2 * i - 1], (h.data.shape, chain)
            indices.append(idx)
        z = T.linear(T.flatten(h), self._p("enc.fc.w"), self._p("enc.fc.b"))
        return z, tuple(indices)

    def decode_graph(self, z: Tensor, indices: tuple) -> Tensor:
        """Graph-building decoder; consumes the encoder's pool indices."""
        arch = self.arch
        if z.data.shape != (arch.latent,):
            raise ShapeError(
                f"latent must have length {arch.latent}, got {z.data.shape}"
            )
        if len(indices) != len(arch.kernels):
            raise GraphError(
                f"need {len(arch.kernels)} pool index sets, got {len(indices)}"
            )
        enc_chain = arch.encoder_chain()
        dec_chain = arch.decoder_chain()
        h = T.linear(z, self._p("dec.fc.w"), self._p("dec.fc.b"))
        h = T.reshape(h, (arch.enc_filters[-1], enc_chain[-1]))
        n = len(arch.kernels)
        for step, i in enumerate(range(n - 1, -1, -1)):
            idx = indices[i]
            if idx.indices.shape != h.data.shape:
                raise GraphError(
                    f"stale pool indices: {idx.indices.shape} vs {h.data.shape}"
                )
            h = T.unpool1d(h, idx, target_len=enc_chain[2 * i])
            assert h.data.shape[1] == dec_chain[2 * step], (h.data.shape, dec_chain)
            layer = n + 1 + step
            h = T.conv1d_full(h, self._p(f"dec.conv{layer}.w"))
            h = T.relu(T.add_channel_bias(h, self._p(f"dec.conv{layer}.b")))
            assert h.data.shape[1] == dec_chain[2 * step + 1], (h.data.shape, dec_chain)
        return h

    # Typed, non-graph entry points.

    def encode(self, segment) -> tuple:
        window = segment.window if isinstance(segment, BioSegment) else np.asarray(segment)
        z, indices = self.encode_graph(Tensor(window.reshape(-1)))
        return LatentVector(z.data.copy(), self.channel), indices

    def decode(self, latent, indices) -> np.ndarray:
        z = latent.z if isinstance(latent, LatentVector) else np.asarray(latent)
        recon = self.decode_graph(Tensor(z), indices)
        return recon.data.reshape(-1).copy()


def reconstruction_loss(x, x_hat) -> float:
    """Mean squared error between a window and its reconstruction."""
    a = np.asarray(x, dtype=np.float64).reshape(-1)
    b = np.asarray(x_hat, dtype=np.float64).reshape(-1)
    if a.shape != b.shape:
        raise ShapeError(f"reconstruction_loss: shapes {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


@dataclass
class PretrainConfig:
    epochs: int = 30
    lr: float = 1e-4
    batch_size: int = 8
    seed: int = 0

    @classmethod
    def from_json(cls, path):
        import json
        from pathlib import Path

        return cls(**json.loads(Path(path).read_text()))


@dataclass
class PretrainResult:
    model: BaeModel
    # losses[0] is the dataset MSE before training; one entry per epoch after.
    losses: list = field(default_factory=list)


def _dataset_mse(model: BaeModel, windows: list) -> float:
    total = 0.0
    for w in windows:
        z, idx = model.encode_graph(Tensor(np.asarray(w)))
        recon = model.decode_graph(z, idx)
        total += reconstruction_loss(w, recon.data)
    return total / len(windows)


def pretrain(
    windows: list,
    channel: Channel,
    epochs: int,
    seed: int,
    arch: BaeArch = BaeArch(),
    lr: float = 1e-4,
    batch_size: int = 8,
) -> PretrainResult:
    """Train one channel's auto-encoder on reconstruction loss alone."""
    from .optim import AdamState, adam_step

    if not windows:
        raise GraphError("pretrain needs at least one window")
    windows = [np.asarray(w, dtype=np.float64).reshape(-1) for w in windows]
    store = ParamStore(rng_seed=seed)
    model = BaeModel(store, channel, arch=arch)
    state = AdamState(store, lr=lr)
    rng = np.random.default_rng([int(seed), 606])
    losses = [_dataset_mse(model, windows)]
    for _ in range(epochs):
        order = rng.permutation(len(windows))
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            store.zero_grads()
            batch_loss = 0.0
            for j in batch:
                z, idx = model.encode_graph(Tensor(windows[j]))
                recon = model.decode_graph(z, idx)
                loss = T.mse_loss(recon, windows[j].reshape(1, -1))
                (loss * (1.0 / batch.size)).backward()
                batch_loss += loss.item()
            adam_step(store, state)
            epoch_loss += batch_loss / batch.size
            n_batches += 1
        losses.append(epoch_loss / n_batches)
    return PretrainResult(model=model, losses=losses)
