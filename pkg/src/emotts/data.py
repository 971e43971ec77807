"""Corpus manifests, deterministic splits, layout scanners, and the generated toy corpus."""

import json
import logging
import random
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .dsp import TARGET_SAMPLE_RATE, Waveform, save_audio
from .errors import BadRatios, EmptyCorpus, MissingRoot, WriteFailure

log = logging.getLogger(__name__)

GENDERS = ("male", "female", "unknown")
EMOTIONS = ("neutral", "angry", "happy", "sad", "other")
SPLITS = ("train", "val", "test", "none")

RECORD_FIELDS = (
    "id", "audio_path", "transcript", "speaker_id", "gender", "emotion", "corpus", "split",
)

# Transcripts for generated corpora; short pangram-ish lines keep text encodings compact.
PANGRAMS = (
    "a quick jolt.",
    "vex the dwarf.",
    "big fox jumps.",
    "my zeal waned.",
    "pack the quiz.",
    "jove hid back.",
    "waltz nymphs.",
    "quick fig jam.",
    "sly brown cod.",
    "dozy bat hums.",
)


@dataclass
class UtteranceRecord:
    id: str
    audio_path: str
    transcript: str
    speaker_id: str
    gender: str = "unknown"
    emotion: str = "other"
    corpus: str = "generic"
    split: str = "none"

    def __post_init__(self):
        if self.gender not in GENDERS:
            raise ValueError(f"gender must be one of {GENDERS}, got {self.gender!r}")
        if self.emotion not in EMOTIONS:
            raise ValueError(f"emotion must be one of {EMOTIONS}, got {self.emotion!r}")
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")


@dataclass
class Manifest:
    records: list[UtteranceRecord] = field(default_factory=list)
    provenance: str = ""

    def __post_init__(self):
        ids = [r.id for r in self.records]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ValueError(f"duplicate record ids in manifest: {dupes[:5]}")

    def __len__(self) -> int:
        return len(self.records)

    def subset(self, predicate) -> "Manifest":
        return Manifest(records=[r for r in self.records if predicate(r)],
                        provenance=self.provenance)

    def split_subset(self, split: str) -> "Manifest":
        return self.subset(lambda r: r.split == split)

    def speakers(self) -> list[str]:
        return sorted({r.speaker_id for r in self.records})

    def emotions(self) -> list[str]:
        return sorted({r.emotion for r in self.records})

    def save(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(json.dumps(asdict(rec), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "Manifest":
        path = Path(path)
        if not path.exists():
            raise MissingRoot(f"no such manifest: {path}")
        records = []
        with open(path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(UtteranceRecord(**json.loads(line)))
        return cls(records=records, provenance=str(path))


# --- corpus layout scanners -------------------------------------------------

RAVDESS_EMOTIONS = {
    "01": "neutral", "02": "other", "03": "happy", "04": "sad",
    "05": "angry", "06": "other", "07": "other", "08": "other",
}
CREMAD_EMOTIONS = {
    "ANG": "angry", "HAP": "happy", "SAD": "sad", "NEU": "neutral",
    "DIS": "other", "FEA": "other",
}
SAVEE_EMOTIONS = {
    "a": "angry", "h": "happy", "sa": "sad", "n": "neutral",
    "d": "other", "f": "other", "su": "other",
}
EMODB_EMOTIONS = {
    "W": "angry", "F": "happy", "T": "sad", "N": "neutral",
    "L": "other", "E": "other", "A": "other",
}
EMODB_MALE = {"03", "10", "11", "12", "15"}
TESS_EMOTIONS = {
    "angry": "angry", "happy": "happy", "sad": "sad", "neutral": "neutral",
    "fear": "other", "disgust": "other", "ps": "other",
}


def _parse_tess(path: Path):
    # OAF_word_emotion.wav; both TESS speakers are female.
    parts = path.stem.split("_")
    if len(parts) < 3:
        return None
    speaker, emotion_raw = parts[0], parts[-1].lower()
    emotion = TESS_EMOTIONS.get(emotion_raw)
    if emotion is None:
        return None
    return speaker, "female", emotion, " ".join(parts[1:-1])


def _parse_ravdess(path: Path):
    # modality-vocal-emotion-intensity-statement-repetition-actor.wav
    parts = path.stem.split("-")
    if len(parts) != 7:
        return None
    emotion = RAVDESS_EMOTIONS.get(parts[2])
    if emotion is None:
        return None
    actor = parts[6]
    try:
        gender = "male" if int(actor) % 2 == 1 else "female"
    except ValueError:
        return None
    return f"actor{actor}", gender, emotion, ""


def _parse_cremad(path: Path):
    # actorID_sentence_emotion_level.wav
    parts = path.stem.split("_")
    if len(parts) != 4:
        return None
    emotion = CREMAD_EMOTIONS.get(parts[2])
    if emotion is None:
        return None
    return parts[0], "unknown", emotion, parts[1]


def _parse_savee(path: Path):
    # <speaker>_<emotion-code><take>.wav with 1-2 letter emotion codes; all male.
    parts = path.stem.split("_")
    if len(parts) != 2:
        return None
    code = parts[1].rstrip("0123456789")
    emotion = SAVEE_EMOTIONS.get(code)
    if emotion is None:
        return None
    return parts[0], "male", emotion, ""


def _parse_emodb(path: Path):
    # <speaker 2 digits><text code 3 chars><emotion letter><version>.wav
    stem = path.stem
    if len(stem) < 6:
        return None
    emotion = EMODB_EMOTIONS.get(stem[5])
    if emotion is None:
        return None
    speaker = stem[:2]
    gender = "male" if speaker in EMODB_MALE else "female"
    return speaker, gender, emotion, stem[2:5]


def _parse_speaker_emotion_dirs(path: Path):
    # <root>/<speaker>/<emotion>/file.wav trees (the emotional-voices layout).
    emotion = path.parent.name.lower()
    if emotion not in EMOTIONS:
        emotion_map = {"amused": "happy", "anger": "angry", "sleepiness": "other",
                       "disgust": "other", "sleepy": "other"}
        emotion = emotion_map.get(emotion)
        if emotion is None:
            return None
    return path.parent.parent.name, "unknown", emotion, ""


def _parse_librispeech(path: Path):
    # <root>/<speaker>/<chapter>/<speaker>-<chapter>-<utt>.wav with sidecar
    # <speaker>-<chapter>.trans.txt transcript files; all neutral read speech.
    speaker = path.parent.parent.name
    if not speaker.isdigit() and not path.stem.split("-")[0]:
        return None
    transcript = ""
    trans = path.parent / f"{path.parent.parent.name}-{path.parent.name}.trans.txt"
    if trans.exists():
        for line in trans.read_text(encoding="utf-8").splitlines():
            utt_id, _, text = line.partition(" ")
            if utt_id == path.stem:
                transcript = text.strip().lower()
                break
    return speaker, "unknown", "neutral", transcript


_LAYOUT_PARSERS = {
    "tess": _parse_tess,
    "ravdess": _parse_ravdess,
    "crema-d": _parse_cremad,
    "savee": _parse_savee,
    "emodb": _parse_emodb,
    "evd": _parse_speaker_emotion_dirs,
    "librispeech": _parse_librispeech,
}


def scan_corpus(root, layout: str) -> Manifest:
    """Build a manifest from an on-disk corpus tree, one record per parseable WAV."""
    root = Path(root)
    if not root.exists():
        raise MissingRoot(f"corpus root does not exist: {root}")
    if layout not in set(_LAYOUT_PARSERS) | {"generic"}:
        raise ValueError(f"unknown corpus layout: {layout!r}")

    if layout == "generic":
        sidecar = root / "metadata.jsonl"
        if sidecar.exists():
            records = []
            with open(sidecar, encoding="utf-8") as fh:
                for line in fh:
                    line = line.strip()
                    if not line:
                        continue
                    row = json.loads(line)
                    row.setdefault("corpus", "generic")
                    row["audio_path"] = str((root / row["audio_path"]).resolve())
                    records.append(UtteranceRecord(**row))
            if not records:
                raise EmptyCorpus(f"sidecar metadata has no records: {sidecar}")
            return Manifest(records=records, provenance=f"generic scan of {root}")

    wavs = sorted(root.rglob("*.wav"))
    records, skipped = [], 0
    for path in wavs:
        if layout == "generic":
            parsed = (path.parent.name if path.parent != root else "unknown",
                      "unknown", "other", "")
        else:
            parsed = _LAYOUT_PARSERS[layout](path)
        if parsed is None:
            skipped += 1
            continue
        speaker, gender, emotion, transcript = parsed
        records.append(UtteranceRecord(
            id=f"{layout}:{path.stem}",
            audio_path=str(path.resolve()),
            transcript=transcript,
            speaker_id=speaker,
            gender=gender,
            emotion=emotion,
            corpus=layout,
        ))
    if skipped:
        log.warning("scan_corpus(%s): skipped %d unparseable files", layout, skipped)
    if not records:
        raise EmptyCorpus(f"no parseable audio under {root} for layout {layout!r}")
    return Manifest(records=records, provenance=f"{layout} scan of {root}; skipped={skipped}")


def split_manifest(
    manifest: Manifest,
    ratios: tuple[float, float, float] = (0.7, 0.1, 0.2),
    seed: int = 0,
    mode: str = "random",
) -> Manifest:
    """Assign train/val/test splits by seeded permutation then contiguous slicing.

    mode "random" permutes utterances; mode "by-speaker" permutes speakers and
    keeps each speaker's utterances in a single split.
    """
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be positive and sum to 1, got {ratios}")
    if mode not in ("random", "by-speaker"):
        raise ValueError(f"unknown split mode: {mode!r}")

    rng = random.Random(seed)

    def assign(units: list) -> dict:
        order = list(units)
        rng.shuffle(order)
        n = len(order)
        n_train = round(ratios[0] * n)
        n_val = round(ratios[1] * n)
        n_train = min(n_train, n)
        n_val = min(n_val, n - n_train)
        labels = {}
        for i, unit in enumerate(order):
            if i < n_train:
                labels[unit] = "train"
            elif i < n_train + n_val:
                labels[unit] = "val"
            else:
                labels[unit] = "test"
        return labels

    if mode == "random":
        labels = assign([r.id for r in manifest.records])
        key = lambda r: r.id
    else:
        labels = assign(manifest.speakers())
        key = lambda r: r.speaker_id

    out = [UtteranceRecord(**{**asdict(r), "split": labels[key(r)]}) for r in manifest.records]
    return Manifest(records=out, provenance=manifest.provenance + f"; split {mode} seed={seed}")


# --- generated toy corpus ----------------------------------------------------

@dataclass
class ToyCorpusConfig:
    n_speakers: int = 2
    n_emotions: int = 2
    utterances_per_cell: int = 5
    duration_s: float = 1.0
    seed: int = 0
    sample_rate: int = TARGET_SAMPLE_RATE
    # Reuse the same transcripts for every (speaker, emotion) cell so that each
    # text exists in every condition; condition-swap experiments rely on this.
    paired_texts: bool = True
    # First speaker index; lets a second corpus introduce unseen voices.
    speaker_offset: int = 0

    def __post_init__(self):
        if min(self.n_speakers, self.n_emotions, self.utterances_per_cell) < 1:
            raise ValueError("toy corpus counts must all be >= 1")
        if self.n_emotions > 4:
            raise ValueError("toy corpus supports at most 4 emotions (neutral/angry/happy/sad)")


# Per-emotion prosody signature: amplitude scale, pitch slope (octaves over the
# utterance), spectral tilt (relative level of upper harmonics), vibrato depth,
# and breathiness (noise floor). Contrasts are deliberately strong so that the
# cells stay discriminable at desk scale.
_TOY_EMOTIONS = {
    "neutral": dict(amp=0.30, slope=0.0, tilt=0.45, vibrato=0.0, noise=0.002),
    "angry": dict(amp=0.68, slope=0.3, tilt=1.4, vibrato=0.0, noise=0.012),
    "happy": dict(amp=0.45, slope=0.7, tilt=0.8, vibrato=7.0, noise=0.002),
    "sad": dict(amp=0.14, slope=-0.55, tilt=0.05, vibrato=0.0, noise=0.001),
}
_TOY_EMOTION_ORDER = ("neutral", "angry", "happy", "sad")


def toy_speaker_pitch(speaker_index: int) -> float:
    """Base pitch in Hz for a toy speaker; spaced far enough apart to separate cleanly."""
    return 110.0 * (2.0 ** (speaker_index / 2.5))


def _synth_toy_utterance(
    text: str, speaker_index: int, emotion: str, cfg: ToyCorpusConfig, rng: np.random.Generator
) -> Waveform:
    """Character-driven harmonic tone: each character maps to a pitch step, the
    emotion shapes level, pitch slope, brightness, and vibrato."""
    sig = _TOY_EMOTIONS[emotion]
    sr = cfg.sample_rate
    n = int(round(cfg.duration_s * sr))
    chars = [c for c in text if c.isalnum()] or ["x"]
    seg = n // len(chars)
    base = toy_speaker_pitch(speaker_index)

    t = np.arange(n) / sr
    # Per-character pitch offsets give the signal a text-dependent melody.
    offsets = np.zeros(n)
    gate = np.ones(n)
    for i, c in enumerate(chars):
        lo = i * seg
        hi = n if i == len(chars) - 1 else (i + 1) * seg
        offsets[lo:hi] = ((ord(c) * 7) % 12 - 6) / 12.0
        fade = min(seg // 8 + 1, max(1, (hi - lo) // 4))
        gate[lo : lo + fade] *= np.linspace(0.2, 1.0, fade)
        gate[hi - fade : hi] *= np.linspace(1.0, 0.2, fade)

    progress = t / max(cfg.duration_s, 1e-9)
    pitch = base * 2.0 ** (offsets / 2.0 + sig["slope"] * progress)
    if sig["vibrato"]:
        pitch = pitch * 2.0 ** (0.03 * np.sin(2 * np.pi * sig["vibrato"] * t))
    phase = 2 * np.pi * np.cumsum(pitch) / sr

    wave = np.sin(phase)
    wave += sig["tilt"] * 0.6 * np.sin(2 * phase)
    wave += sig["tilt"] * 0.4 * np.sin(3 * phase)
    wave += sig["tilt"] ** 2 * 0.25 * np.sin(5 * phase)
    envelope = 0.75 + 0.25 * np.sin(np.pi * progress)
    wave = wave * gate * envelope * sig["amp"] / (1.0 + 1.25 * sig["tilt"])
    wave += rng.normal(0.0, sig["noise"], n)
    return Waveform(samples=np.clip(wave, -1.0, 1.0), sample_rate=sr)


def make_toy_corpus(cfg: ToyCorpusConfig, out_dir) -> Manifest:
    """Generate a deterministic synthetic corpus where speakers differ by pitch
    and emotions by a fixed prosody signature; writes WAVs plus manifest.jsonl."""
    out_dir = Path(out_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise WriteFailure(f"cannot create toy corpus dir {out_dir}: {exc}") from exc

    emotions = _TOY_EMOTION_ORDER[: cfg.n_emotions]
    records = []
    for s in range(cfg.speaker_offset, cfg.speaker_offset + cfg.n_speakers):
        speaker = f"spk{s}"
        gender = "male" if s % 2 == 0 else "female"
        for emotion in emotions:
            for u in range(cfg.utterances_per_cell):
                if cfg.paired_texts:
                    text = PANGRAMS[(s * cfg.utterances_per_cell + u) % len(PANGRAMS)]
                else:
                    text = PANGRAMS[(len(records) + u) % len(PANGRAMS)]
                uid = f"{speaker}_{emotion}_{u:03d}"
                # Independent stream per utterance keeps generation order-free.
                rng = np.random.default_rng([cfg.seed, s, emotions.index(emotion), u])
                wav = _synth_toy_utterance(text, s, emotion, cfg, rng)
                rel = Path(speaker) / emotion / f"{uid}.wav"
                try:
                    save_audio(wav, out_dir / rel)
                except OSError as exc:
                    raise WriteFailure(f"cannot write {out_dir / rel}: {exc}") from exc
                records.append(UtteranceRecord(
                    id=uid,
                    audio_path=str((out_dir / rel).resolve()),
                    transcript=text,
                    speaker_id=speaker,
                    gender=gender,
                    emotion=emotion,
                    corpus="toy",
                ))
    manifest = Manifest(records=records, provenance=f"toy corpus seed={cfg.seed}")
    manifest.save(out_dir / "manifest.jsonl")
    return manifest
