import json

import numpy as np
import pytest

from emotts import cli, data, dsp
from conftest import sine_wave


def run_cli(argv) -> int:
    return cli.main(argv)


class TestDispatch:
    def test_unknown_subcommand_exits_2(self, capsys):
        with pytest.raises(SystemExit) as err:
            run_cli(["frobnicate"])
        assert err.value.code == 2

    def test_missing_required_flag_exits_2(self, capsys):
        with pytest.raises(SystemExit) as err:
            run_cli(["data", "scan", "--layout", "tess"])
        assert err.value.code == 2
        assert "usage" in capsys.readouterr().err

    def test_module_error_exits_1(self, tmp_path, capsys):
        (tmp_path / "empty").mkdir()
        code = run_cli(["data", "scan", "--root", str(tmp_path / "empty"),
                        "--layout", "tess", "--out", str(tmp_path / "m.jsonl")])
        assert code == 1
        assert "error EmptyCorpus" in capsys.readouterr().err

    def test_eer_happy_path(self, tmp_path, capsys):
        trials = tmp_path / "t.json"
        trials.write_text(json.dumps({"genuine": [0.9, 0.8, 0.3],
                                      "impostor": [0.7, 0.2, 0.1]}))
        code = run_cli(["eval", "eer", "--trials", str(trials)])
        assert code == 0
        out = capsys.readouterr().out
        assert "EER 0.333333" in out


class TestDataPipeline:
    def test_toy_scan_split_round_trip(self, tmp_path, capsys):
        corpus = tmp_path / "corpus"
        assert run_cli(["data", "toy", "--out", str(corpus), "--speakers", "2",
                        "--emotions", "2", "--per-cell", "2", "--duration", "0.5",
                        "--seed", "3"]) == 0
        manifest = tmp_path / "scan.jsonl"
        assert run_cli(["data", "scan", "--root", str(corpus), "--layout", "evd",
                        "--out", str(manifest)]) == 0
        split = tmp_path / "split.jsonl"
        assert run_cli(["data", "split", "--manifest", str(manifest),
                        "--ratios", "0.5,0.25,0.25", "--seed", "1",
                        "--out", str(split)]) == 0
        out = data.Manifest.load(split)
        assert len(out) == 8
        assert {r.split for r in out.records} <= {"train", "val", "test"}


class TestVocodeFallback:
    def test_griffin_lim_without_checkpoint(self, tmp_path, capsys):
        mel = dsp.mel_spectrogram(sine_wave(440.0, 0.5))
        mel_path = tmp_path / "m.mel"
        dsp.write_matrix(mel_path, mel.frames)
        out_path = tmp_path / "out.wav"
        assert run_cli(["vocode", "--mel", str(mel_path), "--out", str(out_path),
                        "--iterations", "30"]) == 0
        wav = dsp.load_audio(out_path)
        assert abs(dsp.dominant_frequency(wav) - 440.0) <= 20.0


class TestEncoderCli:
    def test_embed_writes_matrix(self, tmp_path, trained_encoder):
        audio = tmp_path / "a.wav"
        dsp.save_audio(sine_wave(220.0, 1.0), audio)
        out = tmp_path / "emb.mat"
        assert run_cli(["encoder", "embed", "--ckpt", str(trained_encoder["emotion_ckpt"]),
                        "--audio", str(audio), "--out", str(out)]) == 0
        emb = dsp.read_matrix(out)
        assert emb.shape == (1, 256)
        assert abs(np.linalg.norm(emb[0]) - 1.0) < 1e-4


class TestSynthCli:
    def test_text_to_mel_and_wav(self, tmp_path, trained_synth, trained_encoder,
                                 synth_corpus, capsys):
        records = synth_corpus["manifest"].records
        ref = next(r for r in records if r.emotion == "neutral")
        emo = next(r for r in records
                   if r.emotion == "angry" and r.speaker_id == ref.speaker_id)
        mel_out = tmp_path / "synth.mel"
        code = run_cli([
            "synth", "--text", records[0].transcript,
            "--ref-audio", ref.audio_path,
            "--emotion-audio", emo.audio_path,
            "--neutral-audio", ref.audio_path,
            "--encoder-ckpt", str(trained_encoder["emotion_ckpt"]),
            "--ckpt", str(trained_synth["ckpt"]),
            "--max-steps", "150",
            "--out", str(mel_out)])
        assert code == 0
        frames = dsp.read_matrix(mel_out)
        assert frames.shape[1] == 80
        assert frames.shape[0] >= 1

    def test_missing_inputs_exit_1(self, capsys):
        assert run_cli(["synth", "--text", "hello"]) == 1
        assert "error" in capsys.readouterr().err
