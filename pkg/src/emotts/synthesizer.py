"""Conditioned sequence-to-sequence text-to-mel model: text front-end, encoder,
location-sensitive attention decoder with stop token, PostNet, and training."""

import logging
from dataclasses import dataclass, field, asdict

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import dsp
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Manifest
from .encoder import EMBEDDING_DIM, embed_record, load_encoder
from .errors import (
    EmptyText,
    MissingEncoderCheckpoint,
    MissingFile,
    ShapeMismatch,
    UninitializedState,
)

log = logging.getLogger(__name__)

PAD_ID = 0
EOS_ID = 1
VOCAB_CHARS = "abcdefghijklmnopqrstuvwxyz0123456789 .,!?'-"
CHAR_TO_ID = {c: i + 2 for i, c in enumerate(VOCAB_CHARS)}
VOCAB_SIZE = len(VOCAB_CHARS) + 2


@dataclass
class TextSequence:
    ids: list[int]
    text: str
    dropped: int = 0

    def __len__(self) -> int:
        return len(self.ids)


def text_to_sequence(text: str) -> TextSequence:
    """Lowercase, drop out-of-vocabulary characters with a warning, append EOS."""
    cleaned = text.lower()
    ids, dropped = [], 0
    for ch in cleaned:
        if ch in CHAR_TO_ID:
            ids.append(CHAR_TO_ID[ch])
        else:
            dropped += 1
    if not ids:
        raise EmptyText(f"no encodable characters in {text!r}")
    if dropped:
        log.warning("text_to_sequence: dropped %d characters outside the vocabulary", dropped)
    ids.append(EOS_ID)
    return TextSequence(ids=ids, text=text, dropped=dropped)


@dataclass
class SynthesizerConfig:
    n_mels: int = 80
    char_emb_dim: int = 256
    encoder_conv_layers: int = 3
    encoder_kernel: int = 5
    encoder_dim: int = 256
    condition_dim: int = EMBEDDING_DIM
    prenet_dim: int = 256
    attention_dim: int = 128
    attention_filters: int = 32
    attention_kernel: int = 31
    decoder_dim: int = 512
    postnet_channels: int = 256
    postnet_layers: int = 5
    postnet_kernel: int = 5
    conv_dropout: float = 0.1
    prenet_dropout: float = 0.5
    # Pre-net dropout stays active during autoregressive inference; it
    # stabilizes generation. Flip this flag to disable.
    prenet_dropout_at_inference: bool = True
    stop_threshold: float = 0.5
    max_steps: int = 1000
    stop_pos_weight: float = 5.0

    @property
    def memory_dim(self) -> int:
        return self.encoder_dim + self.condition_dim


class TextEncoder(nn.Module):
    """Character embedding, convolution stack, and a bidirectional recurrent layer."""

    def __init__(self, cfg: SynthesizerConfig):
        super().__init__()
        self.cfg = cfg
        self.embedding = nn.Embedding(VOCAB_SIZE, cfg.char_emb_dim, padding_idx=PAD_ID)
        pad = (cfg.encoder_kernel - 1) // 2
        self.convs = nn.ModuleList(
            nn.Conv1d(cfg.char_emb_dim, cfg.char_emb_dim, cfg.encoder_kernel, padding=pad)
            for _ in range(cfg.encoder_conv_layers)
        )
        self.lstm = nn.LSTM(cfg.char_emb_dim, cfg.encoder_dim // 2,
                            batch_first=True, bidirectional=True)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        """ids: (batch, T_enc) -> memory (batch, T_enc, encoder_dim)."""
        x = self.embedding(ids).transpose(1, 2)
        for conv in self.convs:
            x = F.dropout(F.relu(conv(x)), self.cfg.conv_dropout, self.training)
        outputs, _ = self.lstm(x.transpose(1, 2))
        return outputs


class Prenet(nn.Module):
    """Two fully connected layers on the previous frame; dropout handled by caller."""

    def __init__(self, cfg: SynthesizerConfig):
        super().__init__()
        self.fc1 = nn.Linear(cfg.n_mels, cfg.prenet_dim)
        self.fc2 = nn.Linear(cfg.prenet_dim, cfg.prenet_dim)


class LocationAttention(nn.Module):
    """Additive attention conditioned on previous and cumulative weights."""

    def __init__(self, cfg: SynthesizerConfig):
        super().__init__()
        self.query_layer = nn.Linear(cfg.decoder_dim, cfg.attention_dim, bias=False)
        self.memory_layer = nn.Linear(cfg.memory_dim, cfg.attention_dim, bias=False)
        pad = (cfg.attention_kernel - 1) // 2
        self.location_conv = nn.Conv1d(2, cfg.attention_filters, cfg.attention_kernel,
                                       padding=pad, bias=False)
        self.location_dense = nn.Linear(cfg.attention_filters, cfg.attention_dim, bias=False)
        self.v = nn.Linear(cfg.attention_dim, 1, bias=False)

    def forward(self, query, processed_memory, memory, weights_cat, mask=None):
        processed_query = self.query_layer(query).unsqueeze(1)
        processed_location = self.location_dense(self.location_conv(weights_cat).transpose(1, 2))
        energies = self.v(torch.tanh(processed_query + processed_location + processed_memory))
        energies = energies.squeeze(-1)
        if mask is not None:
            energies = energies.masked_fill(mask, -1e9)
        weights = F.softmax(energies, dim=1)
        context = torch.bmm(weights.unsqueeze(1), memory).squeeze(1)
        return context, weights


class PostNet(nn.Module):
    """Residual convolutional refiner over the predicted mel."""

    def __init__(self, cfg: SynthesizerConfig):
        super().__init__()
        pad = (cfg.postnet_kernel - 1) // 2
        channels = [cfg.n_mels] + [cfg.postnet_channels] * (cfg.postnet_layers - 1) + [cfg.n_mels]
        self.convs = nn.ModuleList(
            nn.Conv1d(channels[i], channels[i + 1], cfg.postnet_kernel, padding=pad)
            for i in range(cfg.postnet_layers)
        )

    def forward(self, mel: torch.Tensor) -> torch.Tensor:
        """mel: (batch, T, n_mels) -> residual of the same shape."""
        x = mel.transpose(1, 2)
        for conv in self.convs[:-1]:
            x = torch.tanh(conv(x))
        return self.convs[-1](x).transpose(1, 2)


class SynthesizerModel(nn.Module):
    def __init__(self, cfg: SynthesizerConfig):
        super().__init__()
        self.cfg = cfg
        self.text_encoder = TextEncoder(cfg)
        self.prenet = Prenet(cfg)
        self.attention_rnn = nn.LSTMCell(cfg.prenet_dim + cfg.memory_dim, cfg.decoder_dim)
        self.attention = LocationAttention(cfg)
        self.decoder_rnn = nn.LSTMCell(cfg.decoder_dim + cfg.memory_dim, cfg.decoder_dim)
        self.frame_proj = nn.Linear(cfg.decoder_dim + cfg.memory_dim, cfg.n_mels)
        self.stop_proj = nn.Linear(cfg.decoder_dim + cfg.memory_dim, 1)
        self.postnet = PostNet(cfg)
        # Normalization statistics of the training corpus mels.
        self.register_buffer("mel_mean", torch.zeros(cfg.n_mels))
        self.register_buffer("mel_std", torch.ones(cfg.n_mels))
        # Affine standardization of incoming condition embeddings; embedding
        # differences between conditions are small in absolute terms, and the
        # decoder sees them at a useful scale only after standardization.
        self.register_buffer("cond_mean", torch.zeros(cfg.condition_dim))
        self.register_buffer("cond_std", torch.ones(cfg.condition_dim))

    def set_mel_stats(self, mean: np.ndarray, std: np.ndarray) -> None:
        self.mel_mean.copy_(torch.as_tensor(mean, dtype=torch.float32))
        self.mel_std.copy_(torch.as_tensor(std, dtype=torch.float32).clamp_min(1e-3))

    def set_condition_stats(self, mean: np.ndarray, std: np.ndarray) -> None:
        self.cond_mean.copy_(torch.as_tensor(mean, dtype=torch.float32))
        self.cond_std.copy_(torch.as_tensor(std, dtype=torch.float32).clamp_min(1e-4))

    def standardize_condition(self, cond: torch.Tensor) -> torch.Tensor:
        return (cond - self.cond_mean) / self.cond_std

    def normalize_mel(self, frames: np.ndarray) -> np.ndarray:
        return (frames - self.mel_mean.numpy()) / self.mel_std.numpy()

    def denormalize_mel(self, frames: np.ndarray) -> np.ndarray:
        return frames * self.mel_std.numpy() + self.mel_mean.numpy()


def encode_text(seq: TextSequence, model: SynthesizerModel) -> np.ndarray:
    """Memory rows for one sequence, shape (len(seq), encoder_dim)."""
    model.eval()
    with torch.no_grad():
        ids = torch.tensor([seq.ids], dtype=torch.long)
        memory = model.text_encoder(ids)[0]
    return memory.numpy().astype(np.float64)


def concat_condition(memory: np.ndarray, emb_final: np.ndarray) -> np.ndarray:
    """Broadcast-concatenate the condition embedding to every memory row."""
    memory = np.asarray(memory, dtype=np.float64)
    emb_final = np.asarray(emb_final, dtype=np.float64)
    if emb_final.ndim != 1 or emb_final.shape[0] != EMBEDDING_DIM:
        raise ShapeMismatch(f"condition embedding must have {EMBEDDING_DIM} dims, "
                            f"got shape {emb_final.shape}")
    if memory.ndim != 2:
        raise ShapeMismatch(f"memory must be 2-D, got shape {memory.shape}")
    tiled = np.tile(emb_final, (memory.shape[0], 1))
    return np.concatenate([memory, tiled], axis=1)


@dataclass
class DecoderState:
    """Everything one autoregressive step needs; treat as immutable."""

    memory: torch.Tensor  # (B, T_enc, memory_dim)
    processed_memory: torch.Tensor
    mask: torch.Tensor | None
    h_att: torch.Tensor
    c_att: torch.Tensor
    h_dec: torch.Tensor
    c_dec: torch.Tensor
    weights: torch.Tensor
    weights_cum: torch.Tensor
    context: torch.Tensor
    rng_state: torch.Tensor | None = None


def init_decoder_state(model: SynthesizerModel, conditioned_memory: torch.Tensor,
                       mask: torch.Tensor | None = None, seed: int = 0) -> DecoderState:
    """Fresh decoder state for a (batch of) conditioned memory."""
    b, t_enc, _ = conditioned_memory.shape
    zeros = conditioned_memory.new_zeros
    gen = torch.Generator()
    gen.manual_seed(seed)
    return DecoderState(
        memory=conditioned_memory,
        processed_memory=model.attention.memory_layer(conditioned_memory),
        mask=mask,
        h_att=zeros(b, model.cfg.decoder_dim),
        c_att=zeros(b, model.cfg.decoder_dim),
        h_dec=zeros(b, model.cfg.decoder_dim),
        c_dec=zeros(b, model.cfg.decoder_dim),
        weights=zeros(b, t_enc),
        weights_cum=zeros(b, t_enc),
        context=zeros(b, model.cfg.memory_dim),
        rng_state=gen.get_state(),
    )


def _prenet_forward(model: SynthesizerModel, frame: torch.Tensor,
                    generator: torch.Generator | None) -> torch.Tensor:
    cfg = model.cfg
    p = cfg.prenet_dropout
    apply_dropout = model.training or cfg.prenet_dropout_at_inference

    def drop(x):
        if not apply_dropout or p <= 0.0:
            return x
        if generator is None:
            return F.dropout(x, p, training=True)
        keep = (torch.rand(x.shape, generator=generator) >= p).to(x.dtype)
        return x * keep / (1.0 - p)

    x = drop(F.relu(model.prenet.fc1(frame)))
    return drop(F.relu(model.prenet.fc2(x)))


def decode_step(model: SynthesizerModel, state: DecoderState,
                prev_frame: torch.Tensor):
    """One autoregressive step.

    prev_frame: (B, n_mels) in the normalized mel domain (zeros at t=0).
    Returns (frame, stop_logit, attention_weights, new_state).
    """
    if not isinstance(state, DecoderState):
        raise UninitializedState("decoder state must come from init_decoder_state")
    generator = None
    if state.rng_state is not None:
        generator = torch.Generator()
        generator.set_state(state.rng_state)

    pre = _prenet_forward(model, prev_frame, generator)
    h_att, c_att = model.attention_rnn(
        torch.cat([pre, state.context], dim=1), (state.h_att, state.c_att))
    weights_cat = torch.stack([state.weights, state.weights_cum], dim=1)
    context, weights = model.attention(
        h_att, state.processed_memory, state.memory, weights_cat, state.mask)
    h_dec, c_dec = model.decoder_rnn(
        torch.cat([h_att, context], dim=1), (state.h_dec, state.c_dec))
    hidden = torch.cat([h_dec, context], dim=1)
    frame = model.frame_proj(hidden)
    stop_logit = model.stop_proj(hidden).squeeze(-1)

    new_state = DecoderState(
        memory=state.memory,
        processed_memory=state.processed_memory,
        mask=state.mask,
        h_att=h_att, c_att=c_att, h_dec=h_dec, c_dec=c_dec,
        weights=weights, weights_cum=state.weights_cum + weights,
        context=context,
        rng_state=generator.get_state() if generator is not None else None,
    )
    return frame, stop_logit, weights, new_state


@dataclass
class SynthesisResult:
    """Autoregressive synthesis output; mels are stored normalized, with the
    model's statistics attached for conversion back to log-mel."""

    mel_before: np.ndarray  # (T_dec, n_mels), normalized
    mel_after: np.ndarray
    stop_step: int
    attention: np.ndarray  # (T_dec, T_enc)
    truncated: bool
    mel_mean: np.ndarray = field(repr=False, default=None)
    mel_std: np.ndarray = field(repr=False, default=None)

    def to_log_mel(self, which: str = "after") -> dsp.MelSpectrogram:
        frames = self.mel_after if which == "after" else self.mel_before
        frames = frames * self.mel_std + self.mel_mean
        frames = np.maximum(frames, np.log(dsp.SYNTHESIZER_MEL.log_floor))
        return dsp.MelSpectrogram(frames=frames, config=dsp.SYNTHESIZER_MEL)


def synthesize(text: str, emb_final: np.ndarray, model: SynthesizerModel,
               max_steps: int | None = None, seed: int = 0) -> SynthesisResult:
    """Generate a mel spectrogram for text under a condition embedding."""
    cfg = model.cfg
    max_steps = max_steps or cfg.max_steps
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    seq = text_to_sequence(text)
    emb_final = np.asarray(emb_final, dtype=np.float64)
    if emb_final.shape != (cfg.condition_dim,):
        raise ShapeMismatch(f"condition embedding must have shape ({cfg.condition_dim},), "
                            f"got {emb_final.shape}")

    model.eval()
    with torch.no_grad():
        ids = torch.tensor([seq.ids], dtype=torch.long)
        memory = model.text_encoder(ids)
        cond = model.standardize_condition(torch.as_tensor(emb_final, dtype=torch.float32))
        conditioned = torch.cat(
            [memory, cond.expand(1, memory.shape[1], -1)], dim=2)
        state = init_decoder_state(model, conditioned, seed=seed)

        frames, stops, weights = [], [], []
        prev = torch.zeros(1, cfg.n_mels)
        truncated = True
        stop_step = max_steps - 1
        for t in range(max_steps):
            frame, stop_logit, w, state = decode_step(model, state, prev)
            frames.append(frame)
            stops.append(stop_logit)
            weights.append(w)
            prev = frame
            if torch.sigmoid(stop_logit).item() > cfg.stop_threshold:
                stop_step = t
                truncated = False
                break
        mel_before = torch.cat(frames, dim=0)
        mel_after = mel_before + model.postnet(mel_before.unsqueeze(0))[0]

    return SynthesisResult(
        mel_before=mel_before.numpy().astype(np.float64),
        mel_after=mel_after.numpy().astype(np.float64),
        stop_step=stop_step,
        attention=torch.cat(weights, dim=0).numpy().astype(np.float64),
        truncated=truncated,
        mel_mean=model.mel_mean.numpy().astype(np.float64),
        mel_std=model.mel_std.numpy().astype(np.float64),
    )


# --- training -----------------------------------------------------------------

def mel_losses(mel_before, mel_after, stop_logits, targets, lengths,
               stop_pos_weight: float = 5.0) -> dict:
    """Masked MSE on both mel predictions plus weighted stop-token BCE."""
    b, t, _ = targets.shape
    steps = torch.arange(t).unsqueeze(0)
    mask = (steps < lengths.unsqueeze(1)).float()  # (B, T)
    denom = mask.sum() * targets.shape[2]

    mse_before = (((mel_before - targets) ** 2) * mask.unsqueeze(2)).sum() / denom
    mse_after = (((mel_after - targets) ** 2) * mask.unsqueeze(2)).sum() / denom

    stop_targets = (steps == (lengths.unsqueeze(1) - 1)).float()
    bce = F.binary_cross_entropy_with_logits(
        stop_logits, stop_targets,
        pos_weight=torch.tensor(stop_pos_weight), reduction="none")
    stop_loss = (bce * mask).sum() / mask.sum()

    total = mse_before + mse_after + stop_loss
    return {"total": total, "mse_before": mse_before, "mse_after": mse_after,
            "stop": stop_loss}


def teacher_forced_forward(model: SynthesizerModel, ids, conditions, targets, lengths):
    """Run the decoder with the target frame fed at every step (ratio 1)."""
    memory = model.text_encoder(ids)
    conditions = model.standardize_condition(conditions)
    conditioned = torch.cat(
        [memory, conditions.unsqueeze(1).expand(-1, memory.shape[1], -1)], dim=2)
    mask = ids.eq(PAD_ID)
    state = init_decoder_state(model, conditioned, mask=mask)
    state.rng_state = None  # training dropout uses the global RNG

    b, t, _ = targets.shape
    frames, stops, weights = [], [], []
    prev = targets.new_zeros(b, model.cfg.n_mels)
    for step in range(t):
        frame, stop_logit, w, state = decode_step(model, state, prev)
        frames.append(frame)
        stops.append(stop_logit)
        weights.append(w)
        prev = targets[:, step]
    mel_before = torch.stack(frames, dim=1)
    mel_after = mel_before + model.postnet(mel_before)
    return mel_before, mel_after, torch.stack(stops, dim=1), torch.stack(weights, dim=1)


def train_step(batch: dict, model: SynthesizerModel, optimizer=None) -> dict:
    """One teacher-forced optimization step; returns detached loss components."""
    model.train()
    mel_before, mel_after, stops, _ = teacher_forced_forward(
        model, batch["ids"], batch["conditions"], batch["targets"], batch["lengths"])
    losses = mel_losses(mel_before, mel_after, stops, batch["targets"], batch["lengths"],
                        stop_pos_weight=model.cfg.stop_pos_weight)
    if optimizer is not None:
        optimizer.zero_grad()
        losses["total"].backward()
        nn.utils.clip_grad_norm_(model.parameters(), 1.0)
        optimizer.step()
    return {k: float(v.item()) for k, v in losses.items()}


@dataclass
class SynthesizerTrainConfig:
    stage1_steps: int = 500   # neutral-only pretraining
    stage2_steps: int = 1500  # emotional fine-tuning
    batch_size: int = 30
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-6
    seed: int = 0
    # Stop early once the smoothed teacher-forced mel MSE falls below this.
    target_mse: float | None = None


def lr_at(step: int, total_steps: int, lr_start: float, lr_end: float) -> float:
    """Exponential decay from lr_start to lr_end over total_steps."""
    if total_steps <= 1:
        return lr_end
    frac = min(max(step / (total_steps - 1), 0.0), 1.0)
    return lr_start * (lr_end / lr_start) ** frac


def _prepare_utterances(manifest: Manifest, encoder_model, mel_cfg=dsp.SYNTHESIZER_MEL):
    """Per-record text ids, condition embedding, and log-mel target."""
    utts = []
    for rec in manifest.records:
        wav = dsp.load_audio(rec.audio_path)
        mel = dsp.mel_spectrogram(wav, mel_cfg)
        utts.append({
            "record": rec,
            "ids": text_to_sequence(rec.transcript).ids,
            "embedding": embed_record(rec, encoder_model),
            "mel": mel.frames,
        })
    return utts


def _batch_from(utts, model: SynthesizerModel) -> dict:
    ids_max = max(len(u["ids"]) for u in utts)
    t_max = max(u["mel"].shape[0] for u in utts)
    b = len(utts)
    ids = torch.full((b, ids_max), PAD_ID, dtype=torch.long)
    targets = torch.zeros(b, t_max, model.cfg.n_mels)
    lengths = torch.zeros(b, dtype=torch.long)
    conditions = torch.zeros(b, model.cfg.condition_dim)
    for i, u in enumerate(utts):
        ids[i, : len(u["ids"])] = torch.tensor(u["ids"])
        t = u["mel"].shape[0]
        targets[i, :t] = torch.as_tensor(model.normalize_mel(u["mel"]), dtype=torch.float32)
        lengths[i] = t
        conditions[i] = torch.as_tensor(u["embedding"], dtype=torch.float32)
    return {"ids": ids, "targets": targets, "lengths": lengths, "conditions": conditions}


def train_synthesizer(
    manifest: Manifest,
    encoder_ckpt,
    train_config: SynthesizerTrainConfig | None = None,
    model_config: SynthesizerConfig | None = None,
    out_path=None,
) -> tuple[SynthesizerModel, dict]:
    """Two-stage training: neutral pretrain, then emotional fine-tune.

    The condition encoder is loaded once, used to embed each utterance, and
    never updated.
    """
    train_config = train_config or SynthesizerTrainConfig()
    model_config = model_config or SynthesizerConfig()
    try:
        encoder_model = load_encoder(encoder_ckpt)
    except MissingFile as exc:
        raise MissingEncoderCheckpoint(str(exc)) from exc
    for p in encoder_model.parameters():
        p.requires_grad_(False)

    torch.manual_seed(train_config.seed)
    model = SynthesizerModel(model_config)

    utts = _prepare_utterances(manifest, encoder_model)
    all_mels = np.concatenate([u["mel"] for u in utts], axis=0)
    model.set_mel_stats(all_mels.mean(axis=0), all_mels.std(axis=0))
    all_conds = np.stack([u["embedding"] for u in utts])
    model.set_condition_stats(all_conds.mean(axis=0), all_conds.std(axis=0))

    optimizer = torch.optim.Adam(model.parameters(), lr=train_config.lr_start,
                                 betas=train_config.adam_betas, eps=train_config.adam_eps)
    total_steps = train_config.stage1_steps + train_config.stage2_steps
    neutral = [u for u in utts if u["record"].emotion == "neutral"]

    import random as _random
    rng = _random.Random(train_config.seed)
    curve = []
    step = 0

    def run_stage(pool, n_steps):
        nonlocal step
        if not pool:
            return False
        for _ in range(n_steps):
            if len(pool) > train_config.batch_size:
                chosen = rng.sample(pool, train_config.batch_size)
            else:
                chosen = pool
            batch = _batch_from(chosen, model)
            lr = lr_at(step, total_steps, train_config.lr_start, train_config.lr_end)
            for group in optimizer.param_groups:
                group["lr"] = lr
            losses = train_step(batch, model, optimizer)
            curve.append(losses["mse_after"])
            step += 1
            if (train_config.target_mse is not None and len(curve) >= 10
                    and float(np.mean(curve[-10:])) < train_config.target_mse):
                return True
        return False

    done = run_stage(neutral, train_config.stage1_steps) if len(neutral) < len(utts) else False
    if not done:
        run_stage(utts, train_config.stage2_steps)

    extra = {"loss_curve": curve, "steps": step}
    if out_path is not None:
        save_checkpoint(out_path, kind="synthesizer", model_config=asdict(model_config),
                        state_dict=model.state_dict(), phase="emotional",
                        seed=train_config.seed, extra=extra)
    return model, extra


def load_synthesizer(path) -> SynthesizerModel:
    payload = load_checkpoint(path, expected_kind="synthesizer")
    cfg = SynthesizerConfig(**payload["model_config"])
    model = SynthesizerModel(cfg)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model
