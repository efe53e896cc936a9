"""Desk-scale network definitions and their inference wrappers.

The discriminator is a light CNN: four conv + max-feature-map blocks with
max pooling, global average pooling and a sigmoid head. The singer embedder
is a TDNN with three dilated residual blocks (dilations 1, 2, 3) and
squeeze-excitation, attentive statistics pooling, a linear embedding layer
and a softmax classifier head used only in training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from ..audio import AudioClip, MelConfig, StftConfig, log_mel
from ..errors import ConfigError
from ..nn import LayerSpec, Network
from ..nn.archive import encode_archive, fingerprint


@dataclass(frozen=True)
class ModelConfig:
    n_mels: int = 80
    lcnn_channels: tuple = (8, 16, 16, 32)
    # pool the LCNN over time only and keep the frequency rows for the head;
    # a band-limited artifact is invisible once frequency is averaged away
    lcnn_keep_frequency: bool = True
    tdnn_channels: int = 32
    tdnn_dilations: tuple = (1, 2, 3)
    squeeze_excite: bool = True
    attention_dim: int = 16
    embed_dim: int = 64


def lcnn_specs(cfg: ModelConfig = ModelConfig()) -> list[tuple[str, LayerSpec]]:
    c1, c2, c3, c4 = cfg.lcnn_channels
    specs = [
        ("input_bn", LayerSpec("batchnorm", {"channels": 1, "affine": False})),
        ("conv1", LayerSpec("conv2d", {"in_channels": 1, "out_channels": c1, "kernel": 5, "stride": 2})),
        ("mfm1", LayerSpec("mfm")),
        ("pool1", LayerSpec("max_pool2d", {"kernel": 2})),
    ]
    prev = c1 // 2
    for i, c in enumerate((c2, c3, c4), start=2):
        specs += [
            (f"conv{i}", LayerSpec("conv2d", {"in_channels": prev, "out_channels": c, "kernel": 3, "padding": "same"})),
            (f"mfm{i}", LayerSpec("mfm")),
            (f"bn{i}", LayerSpec("batchnorm", {"channels": c // 2})),
            (f"pool{i}", LayerSpec("max_pool2d", {"kernel": 2})),
        ]
        prev = c // 2
    if cfg.lcnn_keep_frequency:
        rows = (cfg.n_mels - 5) // 2 + 1
        for _ in range(4):
            rows //= 2
        if rows < 1:
            raise ConfigError(f"n_mels={cfg.n_mels} leaves no frequency rows after the LCNN pools")
        pool, feats = LayerSpec("mean_pool", {"axes": (2,)}), prev * rows
    else:
        pool, feats = LayerSpec("mean_pool"), prev
    specs += [
        ("gap", pool),
        ("fc1", LayerSpec("dense", {"in_features": feats, "out_features": prev})),
        ("mfm_fc", LayerSpec("mfm")),
        ("out", LayerSpec("dense", {"in_features": prev // 2, "out_features": 1})),
        ("prob", LayerSpec("sigmoid")),
    ]
    return specs


def tdnn_specs(n_classes: int, cfg: ModelConfig = ModelConfig()) -> list[tuple[str, LayerSpec]]:
    c = cfg.tdnn_channels
    specs = [
        ("input_bn", LayerSpec("batchnorm", {"channels": cfg.n_mels, "affine": False})),
        ("frontend", LayerSpec("conv1d", {"in_channels": cfg.n_mels, "out_channels": c, "kernel": 5, "padding": "same"})),
        ("frontend_relu", LayerSpec("relu")),
        ("frontend_bn", LayerSpec("batchnorm", {"channels": c})),
    ]
    for i, d in enumerate(cfg.tdnn_dilations, start=1):
        specs.append((f"block{i}", LayerSpec("dilated_tdnn_block", {
            "channels": c, "kernel": 3, "dilation": d, "se": cfg.squeeze_excite,
            "se_bottleneck": max(2, c // 4),
        })))
    specs += [
        ("pool", LayerSpec("attentive_stats_pool", {"channels": c, "attention": cfg.attention_dim})),
        ("pool_bn", LayerSpec("batchnorm", {"channels": 2 * c})),
        ("embed", LayerSpec("dense", {"in_features": 2 * c, "out_features": cfg.embed_dim})),
        ("classifier", LayerSpec("dense", {"in_features": cfg.embed_dim, "out_features": n_classes})),
        ("probs", LayerSpec("softmax")),
    ]
    return specs


def build_lcnn(cfg: ModelConfig = ModelConfig(), seed: int = 0) -> Network:
    return Network(lcnn_specs(cfg), seed=seed, name="lcnn")


def build_tdnn(n_classes: int, cfg: ModelConfig = ModelConfig(), seed: int = 0) -> Network:
    return Network(tdnn_specs(n_classes, cfg), seed=seed, name="tdnn")


def network_fingerprint(network: Network) -> int:
    return fingerprint(encode_archive(network.state_dict()))


def window_features(
    windows: list[AudioClip],
    stft_cfg: StftConfig = StftConfig(),
    mel_cfg: MelConfig = MelConfig(),
) -> np.ndarray:
    """Stack log-mel features of equal-length windows as float32 [N, T, M]."""
    return np.stack([log_mel(w, stft_cfg, mel_cfg).frames for w in windows]).astype(np.float32)


class Discriminator:
    """Stage-1 model: P(deepfake) for log-mel windows."""

    def __init__(self, network: Network, batch_size: int = 16):
        self.network = network.eval()
        self.batch_size = batch_size
        self.fingerprint = getattr(network, "fingerprint", None) or network_fingerprint(network)

    def logits(self, feats: np.ndarray) -> np.ndarray:
        out = []
        for i in range(0, len(feats), self.batch_size):
            x = feats[i : i + self.batch_size, None, :, :]
            out.append(self.network.forward(x, until="out").data[:, 0])
        return np.concatenate(out)

    def predict(self, feats: np.ndarray) -> np.ndarray:
        """P(deepfake) per window, computed in float64 so it saturates late."""
        return expit(self.logits(feats).astype(np.float64))


class Embedder:
    """Stage-2 model: the linear output of the embedding layer."""

    def __init__(self, network: Network, batch_size: int = 16):
        self.network = network.eval()
        self.batch_size = batch_size
        self.fingerprint = getattr(network, "fingerprint", None) or network_fingerprint(network)

    @property
    def dim(self) -> int:
        return self.network.layers["embed"].params["weight"].shape[0]

    def embed(self, feats: np.ndarray) -> np.ndarray:
        out = []
        for i in range(0, len(feats), self.batch_size):
            x = feats[i : i + self.batch_size].transpose(0, 2, 1)
            out.append(self.network.forward(x, until="embed").data)
        return np.concatenate(out).astype(np.float64)

    def classify(self, feats: np.ndarray) -> np.ndarray:
        out = []
        for i in range(0, len(feats), self.batch_size):
            x = feats[i : i + self.batch_size].transpose(0, 2, 1)
            out.append(self.network.forward(x, until="classifier").data)
        return np.concatenate(out)


def load_discriminator(path, cfg: ModelConfig = ModelConfig(), batch_size: int = 16) -> Discriminator:
    from ..nn.archive import load_weights

    return Discriminator(load_weights(build_lcnn(cfg), path), batch_size)


def load_embedder(path, cfg: ModelConfig = ModelConfig(), batch_size: int = 16) -> Embedder:
    """Build a TDNN sized from the archive's classifier head, then load it."""
    from ..nn.archive import load_weights, read_weights

    head = read_weights(path).get("classifier.weight")
    if head is None:
        from ..errors import IncompatibleWeightsError

        raise IncompatibleWeightsError(f"{path}: no classifier.weight tensor; not an embedder archive")
    return Embedder(load_weights(build_tdnn(head.shape[0], cfg), path), batch_size)
