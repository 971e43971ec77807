"""Condition encoder: speaker/emotion embeddings, the centroid-similarity loss,
its two-phase training, and the embedding arithmetic used at inference."""

import random
from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn

from . import dsp
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Manifest
from .errors import (
    DegenerateEmbedding,
    EmptyGroup,
    InsufficientEmotions,
    InsufficientSpeakers,
    ShapeMismatch,
)

EMBEDDING_DIM = 256


@dataclass
class EncoderConfig:
    """Architecture of the embedding network (recurrent stack + projection)."""

    n_mels: int = 40
    frames: int = dsp.ENCODER_FRAMES
    layers: int = 3
    hidden: int = 768
    emb_dim: int = EMBEDDING_DIM


@dataclass
class EncoderTrainConfig:
    steps: int = 400
    lr: float = 1e-4
    # Column layout per batch; speaker phase uses speakers x utterances,
    # emotion phase uses speakers x emotions x utterances.
    batch_speakers: int = 6
    batch_emotions: int = 2
    utterances_per_column: int = 5
    seed: int = 0
    # When set, each training crop samples a random length in
    # [min_crop_frames, frames] before padding. Inference reads the recurrent
    # output at the last valid frame, so embedding short clips only works if
    # training visited short readout positions too.
    min_crop_frames: int | None = None


class EncoderModel(nn.Module):
    """Recurrent embedding network; output is always a unit-norm vector."""

    def __init__(self, config: EncoderConfig):
        super().__init__()
        self.config = config
        self.lstm = nn.LSTM(config.n_mels, config.hidden, config.layers, batch_first=True)
        self.projection = nn.Linear(config.hidden, config.emb_dim)

    def forward(self, features: torch.Tensor, lengths: torch.Tensor | None = None) -> torch.Tensor:
        """features: (batch, frames, n_mels) -> unit-norm embeddings (batch, emb_dim).

        lengths gives the number of non-padding frames per item; the recurrent
        output is read at the last valid frame so fixed-shape padding cannot
        wash the utterance out.
        """
        outputs, _ = self.lstm(features)
        if lengths is None:
            last = outputs[:, -1, :]
        else:
            idx = (lengths - 1).clamp_min(0).to(torch.long)
            last = outputs[torch.arange(outputs.shape[0]), idx, :]
        raw = self.projection(last)
        return raw / torch.linalg.norm(raw, dim=-1, keepdim=True).clamp_min(1e-12)


@dataclass
class SimilarityBatch:
    """Embeddings grouped into columns; one column per speaker (speaker phase)
    or per (speaker, emotion) pair (emotion phase)."""

    embeddings: torch.Tensor  # (n_columns, members, dim)
    phase: str = "speaker"
    keys: tuple = ()

    def __post_init__(self):
        if self.embeddings.ndim != 3:
            raise ShapeMismatch(
                f"similarity batch needs (columns, members, dim), got {tuple(self.embeddings.shape)}"
            )


def centroids(batch: SimilarityBatch) -> torch.Tensor:
    """Per-column mean embeddings, shape (n_columns, dim)."""
    emb = batch.embeddings
    if emb.shape[0] == 0 or emb.shape[1] == 0:
        raise EmptyGroup("similarity batch has an empty column")
    return emb.mean(dim=1)


def _cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    na = torch.linalg.norm(a, dim=-1)
    nb = torch.linalg.norm(b, dim=-1)
    if torch.any(na < 1e-12) or torch.any(nb < 1e-12):
        raise DegenerateEmbedding("cosine similarity of a zero-norm vector is undefined")
    return (a * b).sum(dim=-1) / (na * nb)


def ge2e_loss(batch: SimilarityBatch) -> torch.Tensor:
    """Centroid-similarity loss summed over every (embedding, centroid) pair.

    A matched pair (embedding scored against its own column's centroid)
    contributes -sigmoid(cos); every other pair contributes +sigmoid(cos).
    When scoring an embedding against its own centroid, the centroid is
    recomputed without that embedding (columns of one keep cos = 1).
    """
    emb = batch.embeddings
    n_cols, members, dim = emb.shape
    cents = centroids(batch)

    # Mismatched pairs: every embedding against every other column's centroid.
    flat = emb.reshape(-1, dim)
    cos_all = _cosine(flat.unsqueeze(1), cents.unsqueeze(0).expand(flat.shape[0], -1, -1))
    col_of = torch.arange(n_cols).repeat_interleave(members)
    mismatch = torch.ones_like(cos_all, dtype=torch.bool)
    mismatch[torch.arange(flat.shape[0]), col_of] = False
    loss = torch.sigmoid(cos_all[mismatch]).sum()

    # Matched pairs with own-embedding exclusion.
    if members > 1:
        excl = (cents.unsqueeze(1) * members - emb) / (members - 1)
    else:
        excl = emb
    cos_own = _cosine(flat, excl.reshape(-1, dim))
    loss = loss - torch.sigmoid(cos_own).sum()
    return loss


def encode(features, model: EncoderModel) -> np.ndarray:
    """Embed one fixed-shape feature matrix; returns a unit-norm vector."""
    if isinstance(features, dsp.MfccMatrix):
        frames = features.frames
        valid = features.valid_frames
    else:
        frames = np.asarray(features)
        valid = frames.shape[0]
    expected = (model.config.frames, model.config.n_mels)
    if frames.shape != expected:
        raise ShapeMismatch(f"encoder expects {expected} features, got {frames.shape}")
    model.eval()
    with torch.no_grad():
        x = torch.as_tensor(frames, dtype=torch.float32).unsqueeze(0)
        emb = model(x, torch.tensor([valid]))[0]
    return emb.numpy().astype(np.float64)


def embed_record(record, model: EncoderModel) -> np.ndarray:
    """Load a manifest record's audio and embed it."""
    wav = dsp.load_audio(record.audio_path)
    return encode(dsp.mfcc(wav, dsp.ENCODER_MFCC, fixed_frames=model.config.frames), model)


def emotion_vector(emb_en: np.ndarray, emb_neu: np.ndarray) -> np.ndarray:
    """Isolate the emotion component: emotional minus neutral embedding of one speaker."""
    emb_en = np.asarray(emb_en, dtype=np.float64)
    emb_neu = np.asarray(emb_neu, dtype=np.float64)
    if emb_en.shape != emb_neu.shape:
        raise ShapeMismatch(f"embedding shapes differ: {emb_en.shape} vs {emb_neu.shape}")
    return emb_en - emb_neu


def condition_vector(emb_ref: np.ndarray, emb_em: np.ndarray) -> np.ndarray:
    """Final conditioning vector: reference-voice embedding plus emotion component.

    The sum is deliberately not re-normalized; projecting back onto the unit
    sphere would shrink the emotion offset away.
    """
    emb_ref = np.asarray(emb_ref, dtype=np.float64)
    emb_em = np.asarray(emb_em, dtype=np.float64)
    if emb_ref.shape != emb_em.shape:
        raise ShapeMismatch(f"embedding shapes differ: {emb_ref.shape} vs {emb_em.shape}")
    return emb_ref + emb_em


# --- training ----------------------------------------------------------------

def _feature_cache(manifest: Manifest, config: EncoderConfig) -> dict:
    """Full-length (unpadded) filterbank features per utterance id."""
    cache = {}
    for rec in manifest.records:
        wav = dsp.load_audio(rec.audio_path)
        cache[rec.id] = dsp.mfcc(wav, dsp.ENCODER_MFCC).frames.astype(np.float32)
    return cache


def _crop(frames: np.ndarray, n_frames: int, rng: random.Random,
          min_frames: int | None = None) -> tuple[np.ndarray, int]:
    """Random contiguous crop, right-padded at the log floor to n_frames rows.

    Returns the crop and its count of valid (non-padding) rows. With
    min_frames set, the crop length is drawn from [min_frames, n_frames].
    """
    t = frames.shape[0]
    want = n_frames
    if min_frames is not None:
        want = rng.randint(min(min_frames, t), n_frames)
    take = min(t, want)
    start = rng.randrange(t - take + 1) if t > take else 0
    crop = frames[start : start + take]
    if take < n_frames:
        pad = np.full((n_frames - take, frames.shape[1]), np.log(dsp.ENCODER_MFCC.log_floor),
                      dtype=frames.dtype)
        crop = np.concatenate([crop, pad])
    return crop, take


def _sample_columns(groups: dict, n_columns: int, members: int, rng: random.Random) -> list:
    keys = sorted(groups)
    chosen = rng.sample(keys, min(n_columns, len(keys)))
    columns = []
    for key in chosen:
        pool = groups[key]
        ids = rng.sample(pool, members) if len(pool) >= members else [
            pool[rng.randrange(len(pool))] for _ in range(members)
        ]
        columns.append((key, ids))
    return columns


def _train(
    model: EncoderModel,
    groups: dict,
    n_columns: int,
    config: EncoderTrainConfig,
    cache: dict,
) -> list:
    rng = random.Random(config.seed)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    losses = []
    model.train()
    for _ in range(config.steps):
        columns = _sample_columns(groups, n_columns, config.utterances_per_column, rng)
        crops = [_crop(cache[uid], model.config.frames, rng, config.min_crop_frames)
                 for _, ids in columns for uid in ids]
        feats = np.stack([c[0] for c in crops])
        lengths = torch.tensor([c[1] for c in crops])
        emb = model(torch.as_tensor(feats), lengths)
        batch = SimilarityBatch(
            embeddings=emb.reshape(len(columns), config.utterances_per_column, -1),
            phase="speaker" if isinstance(columns[0][0], str) else "emotion",
            keys=tuple(key for key, _ in columns),
        )
        # The loss itself is a plain sum over pairs; dividing by the pair count
        # here keeps optimizer step sizes independent of the batch layout.
        n_pairs = len(columns) ** 2 * config.utterances_per_column
        loss = ge2e_loss(batch) / n_pairs
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        losses.append(float(loss.item()))
    return losses


def train_speaker_phase(
    manifest: Manifest,
    train_config: EncoderTrainConfig | None = None,
    model_config: EncoderConfig | None = None,
    out_path=None,
) -> tuple[EncoderModel, list]:
    """Phase one: similarity columns keyed by speaker."""
    train_config = train_config or EncoderTrainConfig()
    model_config = model_config or EncoderConfig()

    groups = {}
    for rec in manifest.records:
        groups.setdefault(rec.speaker_id, []).append(rec.id)
    usable = {k: v for k, v in groups.items() if len(v) >= 2}
    if len(usable) < 2:
        raise InsufficientSpeakers(
            f"need >= 2 speakers with >= 2 utterances, found {len(usable)}"
        )

    torch.manual_seed(train_config.seed)
    model = EncoderModel(model_config)
    cache = _feature_cache(manifest, model_config)
    losses = _train(model, usable, train_config.batch_speakers, train_config, cache)
    if out_path is not None:
        save_checkpoint(
            out_path, kind="condition_encoder", model_config=asdict(model_config),
            state_dict=model.state_dict(), phase="speaker", seed=train_config.seed,
            extra={"loss_curve": losses},
        )
    return model, losses


def finetune_emotion_phase(
    manifest: Manifest,
    base_checkpoint,
    train_config: EncoderTrainConfig | None = None,
    out_path=None,
) -> tuple[EncoderModel, list]:
    """Phase two: same loss, columns keyed by (speaker, emotion)."""
    train_config = train_config or EncoderTrainConfig()
    model = load_encoder(base_checkpoint)

    groups = {}
    for rec in manifest.records:
        groups.setdefault((rec.speaker_id, rec.emotion), []).append(rec.id)
    usable = {k: v for k, v in groups.items() if len(v) >= 2}
    speakers_with_emotions = {}
    for (spk, emo) in usable:
        speakers_with_emotions.setdefault(spk, set()).add(emo)
    if not any(len(emos) >= 2 for emos in speakers_with_emotions.values()):
        raise InsufficientEmotions("need >= 2 emotions for at least one speaker")

    n_columns = train_config.batch_speakers * train_config.batch_emotions
    cache = _feature_cache(manifest, model.config)
    losses = _train(model, usable, n_columns, train_config, cache)
    if out_path is not None:
        save_checkpoint(
            out_path, kind="condition_encoder", model_config=asdict(model.config),
            state_dict=model.state_dict(), phase="emotion", seed=train_config.seed,
            extra={"loss_curve": losses},
        )
    return model, losses


def load_encoder(path) -> EncoderModel:
    payload = load_checkpoint(path, expected_kind="condition_encoder")
    config = EncoderConfig(**payload["model_config"])
    model = EncoderModel(config)
    try:
        model.load_state_dict(payload["state_dict"])
    except RuntimeError as exc:
        raise ShapeMismatch(
            f"checkpoint weights do not fit the declared architecture: {exc}") from exc
    model.eval()
    return model
