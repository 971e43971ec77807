"""Emotion classifiers (convolutional and recurrent) and augmentation-policy
assembly of their training sets."""

import random
from dataclasses import dataclass, asdict

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from . import dsp
from .checkpoint import load_checkpoint, save_checkpoint
from .data import Manifest, UtteranceRecord
from .errors import LabelSetMismatch, ShapeMismatch, TooFewClasses

CNN_CROP_FRAMES = 128
SPEED_FACTORS = (0.9, 1.1)
# Cross-corpus runs keep only the shared emotion inventory.
TRAINABLE_EMOTIONS = ("angry", "happy", "neutral", "sad")


def extract_ser_features(source, kind: str = "cnn"):
    """Features for one utterance: fixed-shape matrix for the convolutional
    classifier, variable-length sequence for the recurrent one, or the
    40-dim time-averaged vector."""
    if isinstance(source, UtteranceRecord):
        wav = dsp.load_audio(source.audio_path)
    elif isinstance(source, dsp.Waveform):
        wav = source
    else:
        wav = dsp.load_audio(source)
    if kind == "cnn":
        return dsp.mfcc(wav, dsp.SER_MFCC, fixed_frames=CNN_CROP_FRAMES).frames
    if kind == "lstm":
        return dsp.mfcc(wav, dsp.SER_MFCC).frames
    if kind == "mean":
        return dsp.mfcc_mean(dsp.mfcc(wav, dsp.SER_MFCC))
    raise ValueError(f"unknown feature kind: {kind!r}")


class SerCnnModel(nn.Module):
    """One convolution, batch normalization, then a dense layer into softmax."""

    def __init__(self, n_classes: int, n_mels: int = 40, channels: int = 16):
        super().__init__()
        self.conv = nn.Conv1d(n_mels, channels, 5, padding=2)
        self.norm = nn.BatchNorm1d(channels)
        self.dense = nn.Linear(channels * CNN_CROP_FRAMES, n_classes)
        self.n_mels = n_mels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """x: (B, frames, n_mels) -> logits (B, n_classes)."""
        h = F.relu(self.norm(self.conv(x.transpose(1, 2))))
        return self.dense(h.flatten(1))


class SerLstmModel(nn.Module):
    """A recurrent layer, three dense layers with dropout between, softmax head."""

    def __init__(self, n_classes: int, n_mels: int = 40, hidden: int = 64,
                 dropout: float = 0.5):
        super().__init__()
        self.lstm = nn.LSTM(n_mels, hidden, batch_first=True)
        self.fc1 = nn.Linear(hidden, hidden)
        self.drop1 = nn.Dropout(dropout)
        self.fc2 = nn.Linear(hidden, hidden // 2)
        self.drop2 = nn.Dropout(dropout)
        self.fc3 = nn.Linear(hidden // 2, n_classes)
        self.n_mels = n_mels

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        outputs, _ = self.lstm(x)
        h = outputs[:, -1, :]
        h = self.drop1(F.relu(self.fc1(h)))
        h = self.drop2(F.relu(self.fc2(h)))
        return self.fc3(h)


def predict(model: nn.Module, features: np.ndarray) -> np.ndarray:
    """Probability distribution over the model's label set for one utterance."""
    features = np.asarray(features, dtype=np.float32)
    if features.ndim != 2 or features.shape[1] != model.n_mels:
        raise ShapeMismatch(
            f"expected (frames, {model.n_mels}) features, got {features.shape}")
    if isinstance(model, SerCnnModel) and features.shape[0] != CNN_CROP_FRAMES:
        raise ShapeMismatch(
            f"convolutional classifier expects {CNN_CROP_FRAMES} frames, got {features.shape[0]}")
    model.eval()
    with torch.no_grad():
        logits = model(torch.as_tensor(features).unsqueeze(0))
        probs = F.softmax(logits[0], dim=-1)
    return probs.numpy().astype(np.float64)


@dataclass
class AugmentationPolicy:
    source: str = "none"  # none | speed_perturb | synthetic
    gender: str = "both"  # male | female | both
    copies: int = 1

    def __post_init__(self):
        if self.source not in ("none", "speed_perturb", "synthetic"):
            raise ValueError(f"unknown augmentation source: {self.source!r}")
        if self.gender not in ("male", "female", "both"):
            raise ValueError(f"unknown gender filter: {self.gender!r}")
        if self.source != "none" and self.copies < 1:
            raise ValueError("copies must be >= 1 for augmenting policies")


def policy_from_name(name: str) -> AugmentationPolicy:
    """Map a policy column name to its AugmentationPolicy."""
    table = {
        "baseline": AugmentationPolicy(source="none"),
        "speed_perturb": AugmentationPolicy(source="speed_perturb"),
        "synthetic_male": AugmentationPolicy(source="synthetic", gender="male"),
        "synthetic_female": AugmentationPolicy(source="synthetic", gender="female"),
        "synthetic_both": AugmentationPolicy(source="synthetic", gender="both"),
    }
    if name not in table:
        raise ValueError(f"unknown policy name: {name!r}")
    return table[name]


def _is_training_record(rec: UtteranceRecord) -> bool:
    return rec.split in ("train", "none")


def augment_dataset(real: Manifest, synthetic: Manifest | None,
                    policy: AugmentationPolicy, out_dir=None) -> Manifest:
    """Assemble a training manifest under an augmentation policy.

    Real records are never mutated or dropped; augmented material only ever
    joins the training portion. The speed policy writes resampled copies at
    factors 0.9 and 1.1 next to out_dir; the synthetic policy appends
    synthetic records filtered by gender.
    """
    records = [UtteranceRecord(**asdict(r)) for r in real.records]

    if policy.source == "none":
        return Manifest(records=records, provenance=real.provenance + "; policy none")

    if policy.source == "speed_perturb":
        if out_dir is None:
            raise ValueError("speed_perturb augmentation needs an output directory")
        for rec in [r for r in records if _is_training_record(r)]:
            wav = dsp.load_audio(rec.audio_path)
            for factor in SPEED_FACTORS:
                out_path = f"{out_dir}/{rec.id}_sp{factor}.wav"
                dsp.save_audio(dsp.speed_perturb(wav, factor), out_path)
                records.append(UtteranceRecord(**{
                    **asdict(rec),
                    "id": f"{rec.id}_sp{factor}",
                    "audio_path": out_path,
                    "split": rec.split,
                }))
        return Manifest(records=records,
                        provenance=real.provenance + "; policy speed_perturb x2")

    if synthetic is None:
        raise ValueError("synthetic augmentation needs a synthetic manifest")
    real_emotions = {r.emotion for r in real.records}
    extra_emotions = {r.emotion for r in synthetic.records} - real_emotions
    if extra_emotions:
        raise LabelSetMismatch(
            f"synthetic labels {sorted(extra_emotions)} missing from the real label set")
    pool = [r for r in synthetic.records
            if policy.gender == "both" or r.gender == policy.gender]
    for copy_idx in range(policy.copies):
        suffix = "" if copy_idx == 0 else f"_c{copy_idx}"
        for rec in pool:
            records.append(UtteranceRecord(**{
                **asdict(rec),
                "id": f"syn_{rec.id}{suffix}",
                "split": "train",
            }))
    return Manifest(
        records=records,
        provenance=real.provenance + f"; policy synthetic gender={policy.gender}")


@dataclass
class SerTrainConfig:
    epochs: int | None = None  # default depends on model kind
    lr: float = 1e-3
    batch_size: int = 16
    seed: int = 0


DEFAULT_EPOCHS = {"cnn": 45, "lstm": 100}


def _labels_for(manifest: Manifest) -> list[str]:
    present = sorted({r.emotion for r in manifest.records if r.emotion in TRAINABLE_EMOTIONS})
    if len(present) < 2:
        raise TooFewClasses(f"need >= 2 trainable emotion classes, found {present}")
    return present


def _pad_batch(features: list[np.ndarray]) -> torch.Tensor:
    t_max = max(f.shape[0] for f in features)
    out = np.full((len(features), t_max, features[0].shape[1]),
                  np.log(dsp.SER_MFCC.log_floor), dtype=np.float32)
    for i, f in enumerate(features):
        out[i, : f.shape[0]] = f
    return torch.as_tensor(out)


def train_ser(manifest: Manifest, model_kind: str = "cnn",
              epochs: int | None = None, seed: int = 0,
              lr: float = 1e-3, batch_size: int = 16,
              out_path=None) -> tuple[nn.Module, dict]:
    """Train a classifier on the manifest's training portion; keep the state
    that scored best on the validation portion (train accuracy when no
    validation split exists)."""
    if model_kind not in ("cnn", "lstm"):
        raise ValueError(f"unknown model kind: {model_kind!r}")
    epochs = epochs if epochs is not None else DEFAULT_EPOCHS[model_kind]

    labels = _labels_for(manifest)
    index = {label: i for i, label in enumerate(labels)}
    train_recs = [r for r in manifest.records
                  if _is_training_record(r) and r.emotion in index]
    val_recs = [r for r in manifest.records if r.split == "val" and r.emotion in index]
    if not train_recs:
        raise TooFewClasses("no training records with trainable emotions")
    if len({r.emotion for r in train_recs}) < 2:
        raise TooFewClasses("training split holds fewer than 2 emotion classes")

    torch.manual_seed(seed)
    rng = random.Random(seed)
    feats = {r.id: extract_ser_features(r, model_kind).astype(np.float32)
             for r in manifest.records if r.emotion in index}

    model = SerCnnModel(len(labels)) if model_kind == "cnn" else SerLstmModel(len(labels))
    optimizer = torch.optim.Adam(model.parameters(), lr=lr)

    def accuracy(records):
        if not records:
            return None
        model.eval()
        correct = 0
        with torch.no_grad():
            for r in records:
                logits = model(torch.as_tensor(feats[r.id]).unsqueeze(0))
                correct += int(int(torch.argmax(logits[0])) == index[r.emotion])
        return correct / len(records)

    best_state = {k: v.clone() for k, v in model.state_dict().items()}
    best_acc = -1.0
    curve = []
    for _ in range(epochs):
        model.train()
        order = list(train_recs)
        rng.shuffle(order)
        epoch_loss = 0.0
        for lo in range(0, len(order), batch_size):
            chunk = order[lo : lo + batch_size]
            x = _pad_batch([feats[r.id] for r in chunk])
            y = torch.tensor([index[r.emotion] for r in chunk])
            loss = F.cross_entropy(model(x), y)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.item()) * len(chunk)
        curve.append(epoch_loss / len(order))
        val_acc = accuracy(val_recs)
        score = val_acc if val_acc is not None else accuracy(train_recs)
        if score > best_acc:
            best_acc = score
            best_state = {k: v.clone() for k, v in model.state_dict().items()}

    model.load_state_dict(best_state)
    info = {"labels": labels, "best_score": best_acc, "loss_curve": curve,
            "train_accuracy": accuracy(train_recs)}
    if out_path is not None:
        save_checkpoint(out_path, kind=f"ser_{model_kind}",
                        model_config={"kind": model_kind, "n_classes": len(labels)},
                        state_dict=model.state_dict(), seed=seed,
                        extra={"labels": labels, "loss_curve": curve})
    return model, info


def load_ser(path) -> tuple[nn.Module, list[str], str]:
    payload = load_checkpoint(path)
    if not str(payload.get("kind", "")).startswith("ser_"):
        raise ShapeMismatch(f"not an emotion-classifier checkpoint: {path}")
    kind = payload["model_config"]["kind"]
    n_classes = payload["model_config"]["n_classes"]
    model = SerCnnModel(n_classes) if kind == "cnn" else SerLstmModel(n_classes)
    model.load_state_dict(payload["state_dict"])
    model.eval()
    return model, payload["extra"]["labels"], kind


def evaluate_ser(ckpt_path, manifest: Manifest) -> dict:
    """Accuracy, per-class recall, and the confusion matrix on a test manifest."""
    from .evaluation import confusion_matrix

    model, labels, kind = load_ser(ckpt_path)
    records = [r for r in manifest.records if r.emotion in set(labels)]
    predictions, truths = [], []
    for rec in records:
        probs = predict(model, extract_ser_features(rec, kind))
        predictions.append(labels[int(np.argmax(probs))])
        truths.append(rec.emotion)
    matrix = confusion_matrix(predictions, truths, labels)
    total = int(matrix.sum())
    accuracy = float(np.trace(matrix) / total) if total else 0.0
    recall = {}
    for i, label in enumerate(labels):
        support = int(matrix[i].sum())
        recall[label] = float(matrix[i, i] / support) if support else None
    return {"accuracy": accuracy, "per_class_recall": recall,
            "confusion": matrix.tolist(), "labels": labels, "n": total}
