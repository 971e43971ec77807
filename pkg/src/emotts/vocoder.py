"""Autoregressive recurrent vocoder over mu-law quantized samples, with the
mu-law codec itself and the training loop."""

import random
from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import dsp
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Manifest
from .errors import AmplitudeOutOfRange, ConfigMismatch, EmptyManifest

DEFAULT_BITS = 9


def mu_law_encode(samples, bits: int = DEFAULT_BITS) -> np.ndarray:
    """Compand with mu-law and quantize to 2^bits levels (even split around zero)."""
    x = samples.samples if isinstance(samples, dsp.Waveform) else np.asarray(samples, dtype=np.float64)
    if np.any(np.abs(x) > 1.0):
        raise AmplitudeOutOfRange("mu-law input must lie in [-1, 1]")
    levels = 1 << bits
    mu = levels - 1
    companded = np.sign(x) * np.log1p(mu * np.abs(x)) / np.log1p(mu)
    return ((companded + 1.0) / 2.0 * mu).astype(np.int64)


def mu_law_decode(level_ids, bits: int = DEFAULT_BITS) -> np.ndarray:
    """Invert mu_law_encode up to quantization error (bucket centers)."""
    q = np.asarray(level_ids, dtype=np.float64)
    levels = 1 << bits
    mu = levels - 1
    companded = (q + 0.5) / mu * 2.0 - 1.0
    out = np.sign(companded) * (np.exp(np.abs(companded) * np.log1p(mu)) - 1.0) / mu
    return np.clip(out, -1.0, 1.0)


def mu_law_compand(samples, bits: int = DEFAULT_BITS) -> np.ndarray:
    """The continuous companding map alone (where quantization error lives)."""
    x = np.asarray(samples, dtype=np.float64)
    mu = (1 << bits) - 1
    return np.sign(x) * np.log1p(mu * np.abs(x)) / np.log1p(mu)


@dataclass
class VocoderConfig:
    bits: int = DEFAULT_BITS
    n_mels: int = 80
    hop_samples: int = 200
    conv_channels: int = 64
    residual_blocks: int = 2
    sample_emb_dim: int = 32
    gru_size: int = 128
    fc_size: int = 128
    upsample_factors: tuple = (5, 5, 8)

    def __post_init__(self):
        self.upsample_factors = tuple(self.upsample_factors)
        prod = 1
        for f in self.upsample_factors:
            prod *= f
        if prod != self.hop_samples:
            raise ValueError(
                f"upsample factors {self.upsample_factors} must multiply to hop "
                f"{self.hop_samples}")

    @property
    def levels(self) -> int:
        return 1 << self.bits


class VocoderModel(nn.Module):
    """Residual-convolution conditioner, transposed-conv upsampler, recurrent core."""

    def __init__(self, cfg: VocoderConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.conv_channels
        self.conv_in = nn.Conv1d(cfg.n_mels, ch, 5, padding=2)
        self.res_convs = nn.ModuleList(
            nn.Conv1d(ch, ch, 3, padding=1) for _ in range(cfg.residual_blocks)
        )
        self.upsample = nn.ModuleList(
            nn.ConvTranspose1d(ch, ch, kernel_size=f, stride=f) for f in cfg.upsample_factors
        )
        self.sample_embedding = nn.Embedding(cfg.levels, cfg.sample_emb_dim)
        self.gru = nn.GRU(ch + cfg.sample_emb_dim, cfg.gru_size, batch_first=True)
        self.fc1 = nn.Linear(cfg.gru_size, cfg.fc_size)
        self.fc2 = nn.Linear(cfg.fc_size, cfg.levels)

    def condition(self, mel: torch.Tensor) -> torch.Tensor:
        """mel: (B, T, n_mels) -> per-sample features (B, T*hop, channels)."""
        x = self.conv_in(mel.transpose(1, 2))
        for conv in self.res_convs:
            x = x + F.relu(conv(x))
        for up in self.upsample:
            x = up(x)
        return x.transpose(1, 2)

    def logits(self, cond: torch.Tensor, prev_levels: torch.Tensor, hx=None):
        """cond: (B, N, ch); prev_levels: (B, N) int64 -> (B, N, levels), hidden."""
        emb = self.sample_embedding(prev_levels)
        out, hx = self.gru(torch.cat([cond, emb], dim=2), hx)
        return self.fc2(F.relu(self.fc1(out))), hx


def _check_mel(mel: dsp.MelSpectrogram, cfg: VocoderConfig) -> None:
    if mel.n_mels != cfg.n_mels:
        raise ConfigMismatch(f"vocoder expects {cfg.n_mels} mel bins, got {mel.n_mels}")
    if mel.config.hop_samples != cfg.hop_samples:
        raise ConfigMismatch(
            f"vocoder expects hop {cfg.hop_samples}, got {mel.config.hop_samples}")


def wavernn_generate(mel: dsp.MelSpectrogram, model: VocoderModel,
                     seed: int = 0, argmax: bool = False) -> dsp.Waveform:
    """Generate audio sample by sample; output length is exactly T * hop."""
    cfg = model.cfg
    _check_mel(mel, cfg)
    model.eval()
    generator = torch.Generator()
    generator.manual_seed(seed)
    with torch.no_grad():
        cond = model.condition(torch.as_tensor(mel.frames, dtype=torch.float32).unsqueeze(0))
        n = cond.shape[1]
        out = np.empty(n, dtype=np.int64)
        prev = torch.full((1, 1), cfg.levels // 2, dtype=torch.long)
        hx = None
        for i in range(n):
            logits, hx = model.logits(cond[:, i : i + 1], prev, hx)
            if argmax:
                level = int(torch.argmax(logits[0, 0]))
            else:
                probs = F.softmax(logits[0, 0], dim=-1)
                level = int(torch.multinomial(probs, 1, generator=generator))
            out[i] = level
            prev = torch.full((1, 1), level, dtype=torch.long)
    return dsp.Waveform(samples=mu_law_decode(out, cfg.bits),
                        sample_rate=mel.config.sample_rate)


@dataclass
class VocoderTrainConfig:
    steps: int = 600
    lr: float = 3e-4
    batch_size: int = 4
    crop_frames: int = 8
    seed: int = 0


def train_vocoder(
    manifest: Manifest,
    train_config: VocoderTrainConfig | None = None,
    model_config: VocoderConfig | None = None,
    out_path=None,
) -> tuple[VocoderModel, list]:
    """Teacher-forced next-sample cross-entropy training on (mel, audio) pairs."""
    train_config = train_config or VocoderTrainConfig()
    model_config = model_config or VocoderConfig()
    if len(manifest) == 0:
        raise EmptyManifest("vocoder training needs at least one utterance")

    torch.manual_seed(train_config.seed)
    model = VocoderModel(model_config)
    optimizer = torch.optim.Adam(model.parameters(), lr=train_config.lr)
    rng = random.Random(train_config.seed)
    hop = model_config.hop_samples

    pairs = []
    for rec in manifest.records:
        wav = dsp.load_audio(rec.audio_path)
        mel = dsp.mel_spectrogram(wav, dsp.SYNTHESIZER_MEL)
        levels = mu_law_encode(np.clip(wav.samples, -1.0, 1.0), model_config.bits)
        usable = min(mel.n_frames, len(levels) // hop)
        pairs.append((mel.frames[:usable].astype(np.float32), levels[: usable * hop]))

    losses = []
    model.train()
    crop = min(train_config.crop_frames, min(p[0].shape[0] for p in pairs))
    mid = model_config.levels // 2
    for _ in range(train_config.steps):
        mels, targets, prevs = [], [], []
        for _ in range(train_config.batch_size):
            frames, levels = pairs[rng.randrange(len(pairs))]
            t0 = rng.randrange(max(frames.shape[0] - crop, 1))
            mels.append(frames[t0 : t0 + crop])
            seg = levels[t0 * hop : (t0 + crop) * hop]
            targets.append(seg)
            prevs.append(np.concatenate([[levels[t0 * hop - 1] if t0 > 0 else mid], seg[:-1]]))
        cond = model.condition(torch.as_tensor(np.stack(mels)))
        logits, _ = model.logits(cond, torch.as_tensor(np.stack(prevs)))
        loss = F.cross_entropy(logits.reshape(-1, model_config.levels),
                               torch.as_tensor(np.stack(targets)).reshape(-1))
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(float(loss.item()))

    if out_path is not None:
        save_checkpoint(out_path, kind="vocoder", model_config=asdict(model_config),
                        state_dict=model.state_dict(), seed=train_config.seed,
                        extra={"loss_curve": losses})
    return model, losses


def load_vocoder(path) -> VocoderModel:
    payload = load_checkpoint(path, expected_kind="vocoder")
    cfg = VocoderConfig(**payload["model_config"])
    model = VocoderModel(cfg)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
