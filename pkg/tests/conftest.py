"""Shared fixtures: toy corpora and session-scoped trained models.

Training fixtures are deliberately session-scoped; several test modules and
the acceptance suite reuse the same trained artifacts.
"""

import numpy as np
import pytest
import torch

torch.set_num_threads(1)  # small models run faster without intra-op threading

from emotts import data, dsp, encoder, synthesizer, vocoder

ENCODER_MODEL_CONFIG = encoder.EncoderConfig(hidden=128, layers=2)
ENCODER_SPEAKER_TRAIN = encoder.EncoderTrainConfig(
    steps=150, lr=1e-3, batch_speakers=4, utterances_per_column=5,
    seed=0, min_crop_frames=40)
ENCODER_EMOTION_TRAIN = encoder.EncoderTrainConfig(
    steps=500, lr=2e-3, batch_speakers=4, batch_emotions=3,
    utterances_per_column=5, seed=1, min_crop_frames=40)

SYNTH_MODEL_CONFIG = synthesizer.SynthesizerConfig(
    char_emb_dim=48, encoder_dim=96, prenet_dim=128, decoder_dim=192,
    attention_dim=96, attention_filters=16, attention_kernel=15,
    postnet_channels=96, max_steps=200)
SYNTH_TRAIN_CONFIG = synthesizer.SynthesizerTrainConfig(
    stage1_steps=150, stage2_steps=1850, batch_size=10, seed=0,
    target_mse=0.030, lr_end=1e-4)

VOCODER_MODEL_CONFIG = vocoder.VocoderConfig(conv_channels=48, gru_size=128, fc_size=128)
VOCODER_TRAIN_CONFIG = vocoder.VocoderTrainConfig(steps=900, lr=1e-3, batch_size=3,
                                                  crop_frames=10, seed=0)


def sine_wave(freq: float, duration_s: float = 1.0, amplitude: float = 0.5,
              sr: int = 16000) -> dsp.Waveform:
    t = np.arange(int(duration_s * sr)) / sr
    return dsp.Waveform(samples=amplitude * np.sin(2 * np.pi * freq * t), sample_rate=sr)


@pytest.fixture(scope="session")
def toy_corpus_main(tmp_path_factory):
    """4 speakers x 3 emotions x 10 utterances at 2 s; last two per cell held out."""
    root = tmp_path_factory.mktemp("toy_main")
    cfg = data.ToyCorpusConfig(n_speakers=4, n_emotions=3, utterances_per_cell=10,
                               duration_s=2.0, seed=7)
    manifest = data.make_toy_corpus(cfg, root)
    train = data.Manifest(
        records=[r for r in manifest.records if int(r.id.split("_")[-1]) < 8])
    held = data.Manifest(
        records=[r for r in manifest.records if int(r.id.split("_")[-1]) >= 8])
    return {"root": root, "manifest": manifest, "train": train, "held": held}


@pytest.fixture(scope="session")
def trained_encoder(toy_corpus_main, tmp_path_factory):
    """Speaker phase then emotion phase on the main toy corpus."""
    import time

    out = tmp_path_factory.mktemp("encoder_ckpt")
    speaker_ckpt = out / "encoder_speaker.pt"
    emotion_ckpt = out / "encoder_emotion.pt"
    start = time.time()
    model, speaker_losses = encoder.train_speaker_phase(
        toy_corpus_main["train"], ENCODER_SPEAKER_TRAIN, ENCODER_MODEL_CONFIG,
        out_path=speaker_ckpt)
    model, emotion_losses = encoder.finetune_emotion_phase(
        toy_corpus_main["train"], speaker_ckpt, ENCODER_EMOTION_TRAIN,
        out_path=emotion_ckpt)
    train_seconds = time.time() - start
    return {
        "model": model,
        "speaker_ckpt": speaker_ckpt,
        "emotion_ckpt": emotion_ckpt,
        "speaker_losses": speaker_losses,
        "emotion_losses": emotion_losses,
        "train_seconds": train_seconds,
    }


@pytest.fixture(scope="session")
def verification_encoder(toy_corpus_main, tmp_path_factory):
    """Speaker-phase-only encoder for the verification protocol (the EER and
    t-SNE evaluations use a speaker-verification model, not the condition
    encoder). Fixed 80-frame crops; recorded seed."""
    out = tmp_path_factory.mktemp("verification_ckpt") / "verification.pt"
    config = encoder.EncoderTrainConfig(steps=300, lr=1e-3, batch_speakers=4,
                                        utterances_per_column=5, seed=1)
    model, losses = encoder.train_speaker_phase(
        toy_corpus_main["train"], config, ENCODER_MODEL_CONFIG, out_path=out)
    return {"model": model, "ckpt": out, "losses": losses}


@pytest.fixture(scope="session")
def synth_corpus(tmp_path_factory):
    """10 utterances (2 speakers x 2 emotions) with texts paired across emotions."""
    root = tmp_path_factory.mktemp("toy_synth")
    cfg = data.ToyCorpusConfig(n_speakers=2, n_emotions=2, utterances_per_cell=3,
                               duration_s=1.0, seed=11)
    manifest = data.make_toy_corpus(cfg, root)
    records = [r for r in manifest.records
               if not (r.speaker_id == "spk1" and r.id.endswith("002"))]
    ten = data.Manifest(records=records)
    assert len(ten) == 10
    pair_of = {}
    for r in ten.records:
        for other in ten.records:
            if (other.speaker_id == r.speaker_id and other.transcript == r.transcript
                    and other.emotion != r.emotion):
                pair_of[r.id] = other.id
    assert len(pair_of) == 10
    return {"root": root, "manifest": ten, "pair_of": pair_of}


@pytest.fixture(scope="session")
def trained_synth(synth_corpus, trained_encoder, tmp_path_factory):
    """Synthesizer overfit on the 10-utterance corpus, conditioned by the
    session encoder; exposes per-utterance embeddings and normalized targets."""
    out = tmp_path_factory.mktemp("synth_ckpt") / "synth.pt"
    model, info = synthesizer.train_synthesizer(
        synth_corpus["manifest"], trained_encoder["emotion_ckpt"],
        SYNTH_TRAIN_CONFIG, SYNTH_MODEL_CONFIG, out_path=out)
    enc_model = trained_encoder["model"]
    embeddings, targets = {}, {}
    for rec in synth_corpus["manifest"].records:
        embeddings[rec.id] = encoder.embed_record(rec, enc_model)
        wav = dsp.load_audio(rec.audio_path)
        targets[rec.id] = model.normalize_mel(dsp.mel_spectrogram(wav).frames)
    return {"model": model, "ckpt": out, "info": info,
            "embeddings": embeddings, "targets": targets}


@pytest.fixture(scope="session")
def sine_corpus(tmp_path_factory):
    """Three 440 Hz utterances for vocoder training."""
    root = tmp_path_factory.mktemp("sine_corpus")
    records = []
    for i, amp in enumerate((0.5, 0.4, 0.45)):
        path = root / f"sine{i}.wav"
        dsp.save_audio(sine_wave(440.0, duration_s=1.0, amplitude=amp), path)
        records.append(data.UtteranceRecord(
            id=f"sine{i}", audio_path=str(path), transcript="a steady tone.",
            speaker_id="tone", gender="unknown", emotion="neutral", corpus="sine"))
    return {"root": root, "manifest": data.Manifest(records=records), "freq": 440.0}


@pytest.fixture(scope="session")
def trained_vocoder(sine_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("vocoder_ckpt") / "vocoder.pt"
    model, losses = vocoder.train_vocoder(
        sine_corpus["manifest"], VOCODER_TRAIN_CONFIG, VOCODER_MODEL_CONFIG, out_path=out)
    return {"model": model, "ckpt": out, "losses": losses}
