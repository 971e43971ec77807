import wave as wave_mod

import numpy as np
import pytest

from emotts import dsp
from emotts.errors import (
    AudioTooShort,
    EmptyAudio,
    FactorOutOfRange,
    InvalidSpectrogram,
    MissingFile,
    UnsupportedFormat,
)
from conftest import sine_wave


def write_wav(path, samples, sr, channels=1, sampwidth=2):
    pcm = np.round(np.clip(samples, -1, 1) * 32767).astype("<i2")
    with wave_mod.open(str(path), "wb") as out:
        out.setnchannels(channels)
        out.setsampwidth(sampwidth)
        out.setframerate(sr)
        out.writeframes(pcm.tobytes())


class TestLoadAudio:
    def test_mono_16k_sample_count(self, tmp_path):
        path = tmp_path / "a.wav"
        write_wav(path, np.zeros(16000) + 0.1, 16000)
        wav = dsp.load_audio(path)
        assert len(wav) == 16000
        assert wav.sample_rate == 16000

    def test_stereo_32k_downmix_resample(self, tmp_path):
        path = tmp_path / "b.wav"
        stereo = np.zeros(32000 * 2)
        stereo[0::2] = 0.2
        stereo[1::2] = -0.2
        write_wav(path, stereo, 32000, channels=2)
        wav = dsp.load_audio(path)
        assert len(wav) == 16000

    def test_all_zeros_ok(self, tmp_path):
        path = tmp_path / "z.wav"
        write_wav(path, np.zeros(1600), 16000)
        wav = dsp.load_audio(path)
        assert np.all(wav.samples == 0.0)

    def test_missing_file(self, tmp_path):
        with pytest.raises(MissingFile):
            dsp.load_audio(tmp_path / "nope.wav")

    def test_not_a_wav(self, tmp_path):
        path = tmp_path / "text.wav"
        path.write_text("not audio")
        with pytest.raises(UnsupportedFormat):
            dsp.load_audio(path)

    def test_wrong_bit_depth(self, tmp_path):
        path = tmp_path / "w8.wav"
        with wave_mod.open(str(path), "wb") as out:
            out.setnchannels(1)
            out.setsampwidth(1)
            out.setframerate(16000)
            out.writeframes(bytes(100))
        with pytest.raises(UnsupportedFormat):
            dsp.load_audio(path)

    def test_empty_audio(self, tmp_path):
        path = tmp_path / "empty.wav"
        with wave_mod.open(str(path), "wb") as out:
            out.setnchannels(1)
            out.setsampwidth(2)
            out.setframerate(16000)
        with pytest.raises(EmptyAudio):
            dsp.load_audio(path)

    def test_round_trip_save_load(self, tmp_path):
        wav = sine_wave(300.0, 0.5)
        path = tmp_path / "rt.wav"
        dsp.save_audio(wav, path)
        back = dsp.load_audio(path)
        assert len(back) == len(wav)
        assert np.max(np.abs(back.samples - wav.samples)) < 1e-4


class TestMelSpectrogram:
    def test_frame_count_16000(self):
        mel = dsp.mel_spectrogram(sine_wave(440.0, 1.0))
        assert mel.frames.shape == (77, 80)

    def test_frame_count_formula_random(self):
        rng = np.random.default_rng(3)
        for _ in range(25):
            win = int(rng.integers(2, 50)) * 16
            hop = int(rng.integers(1, win // 16 + 1)) * 16
            n = int(rng.integers(win, 6 * win))
            assert dsp.frame_count(n, win, hop) == 1 + (n - win) // hop

    def test_silence_hits_log_floor(self):
        mel = dsp.mel_spectrogram(dsp.Waveform(np.zeros(16000)))
        assert np.allclose(mel.frames, np.log(1e-5))

    def test_sine_argmax_bin_matches_filter_centers(self):
        # oracle: filter center frequencies from the filterbank definition
        mel = dsp.mel_spectrogram(sine_wave(440.0, 1.0))
        centers = dsp.mel_filter_centers(dsp.SYNTHESIZER_MEL)
        argmax_bin = int(np.argmax(mel.frames.mean(axis=0)))
        assert argmax_bin == int(np.argmin(np.abs(centers - 440.0)))

    def test_deterministic(self):
        wav = sine_wave(523.0, 0.7)
        a = dsp.mel_spectrogram(wav).frames
        b = dsp.mel_spectrogram(wav).frames
        assert np.array_equal(a, b)

    def test_too_short(self):
        with pytest.raises(AudioTooShort):
            dsp.mel_spectrogram(dsp.Waveform(np.zeros(100)))

    def test_entries_bounded_below(self):
        mel = dsp.mel_spectrogram(sine_wave(440.0, 0.5, amplitude=0.01))
        assert np.all(mel.frames >= np.log(1e-5) - 1e-12)


class TestMfcc:
    def test_encoder_shape_80x40(self):
        feats = dsp.encoder_features(sine_wave(200.0, 1.0))
        assert feats.frames.shape == (80, 40)
        assert feats.valid_frames == 40  # 1 s of 25 ms non-overlapping frames

    def test_encoder_truncates_long(self):
        feats = dsp.encoder_features(sine_wave(200.0, 3.0))
        assert feats.frames.shape == (80, 40)
        assert feats.valid_frames == 80

    def test_ser_hop_64ms(self):
        feats = dsp.mfcc(sine_wave(150.0, 2.0), dsp.SER_MFCC)
        assert feats.frames.shape == (31, 40)

    def test_silence_constant(self):
        feats = dsp.mfcc(dsp.Waveform(np.zeros(16000)), dsp.SER_MFCC)
        assert np.allclose(feats.frames, np.log(1e-5))

    def test_too_short_single_frame(self):
        with pytest.raises(AudioTooShort):
            dsp.mfcc(dsp.Waveform(np.zeros(100)), dsp.SER_MFCC)

    def test_dct_variant_changes_basis(self):
        wav = sine_wave(330.0, 1.0)
        plain = dsp.mfcc(wav, dsp.SER_MFCC)
        cepstral = dsp.mfcc(wav, dsp.SER_MFCC, use_dct=True)
        assert plain.frames.shape == cepstral.frames.shape
        assert not np.allclose(plain.frames, cepstral.frames)


class TestMfccMean:
    def test_constant_matrix(self):
        m = dsp.MfccMatrix(frames=np.full((7, 40), 3.25))
        assert np.allclose(dsp.mfcc_mean(m), np.full(40, 3.25))

    def test_two_row_arithmetic(self):
        rows = np.stack([np.arange(1.0, 41.0), np.arange(3.0, 43.0)])
        assert np.allclose(dsp.mfcc_mean(dsp.MfccMatrix(frames=rows)),
                           np.arange(2.0, 42.0))

    def test_matches_bruteforce_mean(self):
        rng = np.random.default_rng(0)
        frames = rng.normal(size=(10, 40))
        # independent oracle: explicit python loops
        expected = [sum(frames[t][j] for t in range(10)) / 10 for j in range(40)]
        assert np.allclose(dsp.mfcc_mean(dsp.MfccMatrix(frames=frames)), expected)

    def test_permutation_invariant_over_time(self):
        rng = np.random.default_rng(1)
        frames = rng.normal(size=(12, 40))
        shuffled = frames[rng.permutation(12)]
        assert np.allclose(dsp.mfcc_mean(dsp.MfccMatrix(frames=frames)),
                           dsp.mfcc_mean(dsp.MfccMatrix(frames=shuffled)))


class TestGriffinLim:
    def test_sine_reconstruction_peak(self):
        mel = dsp.mel_spectrogram(sine_wave(440.0, 1.0))
        out = dsp.griffin_lim(mel, iterations=60, seed=0)
        assert abs(dsp.dominant_frequency(out) - 440.0) <= 15.0

    def test_all_floor_is_near_silence(self):
        mel = dsp.MelSpectrogram(np.full((30, 80), np.log(1e-5)), dsp.SYNTHESIZER_MEL)
        out = dsp.griffin_lim(mel, iterations=5)
        assert np.sqrt(np.mean(out.samples**2)) < 1e-3

    def test_deterministic_per_seed(self):
        mel = dsp.mel_spectrogram(sine_wave(440.0, 0.5))
        a = dsp.griffin_lim(mel, iterations=10, seed=4)
        b = dsp.griffin_lim(mel, iterations=10, seed=4)
        assert np.array_equal(a.samples, b.samples)

    def test_output_length_contract(self):
        mel = dsp.mel_spectrogram(sine_wave(440.0, 0.9))
        out = dsp.griffin_lim(mel, iterations=3)
        assert len(out) == (mel.n_frames - 1) * 200 + 800

    def test_rejects_non_finite(self):
        frames = np.zeros((10, 80))
        frames[3, 4] = np.nan
        with pytest.raises(InvalidSpectrogram):
            dsp.griffin_lim(dsp.MelSpectrogram(frames, dsp.SYNTHESIZER_MEL), 3)


class TestSpeedPerturb:
    def test_identity_factor(self):
        wav = sine_wave(220.0, 0.5)
        out = dsp.speed_perturb(wav, 1.0)
        assert np.array_equal(out.samples, wav.samples)

    def test_length_arithmetic(self):
        out = dsp.speed_perturb(dsp.Waveform(np.zeros(16000)), 0.9)
        assert len(out) == 17778

    def test_pitch_scales_with_factor(self):
        out = dsp.speed_perturb(sine_wave(440.0, 1.0), 1.1)
        assert abs(dsp.dominant_frequency(out) - 484.0) <= 5.0

    def test_round_trip_length(self):
        wav = sine_wave(330.0, 1.0)
        for factor in (0.9, 1.1, 1.25, 0.8):
            back = dsp.speed_perturb(dsp.speed_perturb(wav, factor), 1.0 / factor)
            assert abs(len(back) - len(wav)) <= 1

    def test_factor_out_of_range(self):
        wav = sine_wave(330.0, 0.1)
        with pytest.raises(FactorOutOfRange):
            dsp.speed_perturb(wav, 0.4)
        with pytest.raises(FactorOutOfRange):
            dsp.speed_perturb(wav, 2.5)


class TestMatrixIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(5)
        matrix = rng.normal(size=(13, 7))
        path = tmp_path / "m.mat"
        dsp.write_matrix(path, matrix)
        back = dsp.read_matrix(path)
        assert back.shape == (13, 7)
        assert np.allclose(back, matrix, atol=1e-6)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.mat"
        path.write_bytes(b"NOTMAGIC" + bytes(16))
        with pytest.raises(UnsupportedFormat):
            dsp.read_matrix(path)

    def test_missing(self, tmp_path):
        with pytest.raises(MissingFile):
            dsp.read_matrix(tmp_path / "none.mat")
