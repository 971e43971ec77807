import numpy as np
import pytest
import torch

from emotts import data, dsp, synthesizer as syn
from emotts.errors import (
    EmptyText,
    MissingEncoderCheckpoint,
    ShapeMismatch,
    UninitializedState,
)


SMALL_CONFIG = syn.SynthesizerConfig(
    char_emb_dim=32, encoder_dim=64, prenet_dim=64, decoder_dim=96,
    attention_dim=48, attention_filters=8, attention_kernel=7,
    postnet_channels=32, max_steps=50)


@pytest.fixture()
def small_model():
    torch.manual_seed(0)
    return syn.SynthesizerModel(SMALL_CONFIG)


class TestTextToSequence:
    def test_simple(self):
        seq = syn.text_to_sequence("Hi.")
        assert seq.ids == [syn.CHAR_TO_ID["h"], syn.CHAR_TO_ID["i"],
                           syn.CHAR_TO_ID["."], syn.EOS_ID]

    def test_case_folding(self):
        assert syn.text_to_sequence("HI").ids == syn.text_to_sequence("hi").ids

    def test_out_of_vocabulary_dropped_with_warning(self):
        seq = syn.text_to_sequence("héllo")
        assert seq.dropped == 1
        assert seq.ids[:-1] == [syn.CHAR_TO_ID[c] for c in "hllo"]
        assert seq.ids[-1] == syn.EOS_ID

    def test_empty_after_cleaning(self):
        with pytest.raises(EmptyText):
            syn.text_to_sequence("éé")


class TestEncodeText:
    def test_memory_rows_match_length(self, small_model):
        seq = syn.text_to_sequence("quick.")
        memory = syn.encode_text(seq, small_model)
        assert memory.shape == (len(seq.ids), SMALL_CONFIG.encoder_dim)

    def test_deterministic_in_inference(self, small_model):
        seq = syn.text_to_sequence("same text")
        a = syn.encode_text(seq, small_model)
        b = syn.encode_text(seq, small_model)
        assert np.array_equal(a, b)

    def test_bidirectional_context(self, small_model):
        # editing a later character changes memory rows before the edit
        a = syn.encode_text(syn.text_to_sequence("abcdef"), small_model)
        b = syn.encode_text(syn.text_to_sequence("abcdxf"), small_model)
        assert not np.allclose(a[0], b[0])


class TestConcatCondition:
    def test_zero_embedding_appends_zeros(self, small_model):
        memory = syn.encode_text(syn.text_to_sequence("abc"), small_model)
        out = syn.concat_condition(memory, np.zeros(256))
        assert out.shape == (memory.shape[0], memory.shape[1] + 256)
        assert np.all(out[:, memory.shape[1]:] == 0.0)
        assert np.allclose(out[:, :memory.shape[1]], memory)

    def test_embedding_changes_only_last_columns(self, small_model):
        memory = syn.encode_text(syn.text_to_sequence("abc"), small_model)
        rng = np.random.default_rng(0)
        a = syn.concat_condition(memory, rng.normal(size=256))
        b = syn.concat_condition(memory, rng.normal(size=256))
        d = memory.shape[1]
        assert np.array_equal(a[:, :d], b[:, :d])
        assert not np.allclose(a[:, d:], b[:, d:])

    def test_row_count_unchanged(self, small_model):
        memory = syn.encode_text(syn.text_to_sequence("rows stay"), small_model)
        out = syn.concat_condition(memory, np.ones(256))
        assert out.shape[0] == memory.shape[0]

    def test_dimension_check(self, small_model):
        memory = syn.encode_text(syn.text_to_sequence("abc"), small_model)
        with pytest.raises(ShapeMismatch):
            syn.concat_condition(memory, np.zeros(100))


def conditioned_memory(model, text, emb=None):
    seq = syn.text_to_sequence(text)
    ids = torch.tensor([seq.ids])
    with torch.no_grad():
        memory = model.text_encoder(ids)
        cond = torch.zeros(1, memory.shape[1], model.cfg.condition_dim)
        if emb is not None:
            cond = torch.as_tensor(emb, dtype=torch.float32).expand(1, memory.shape[1], -1)
        return torch.cat([memory, cond], dim=2)


class TestDecodeStep:
    def test_first_step_contract(self, small_model):
        mem = conditioned_memory(small_model, "hello there")
        state = syn.init_decoder_state(small_model, mem, seed=0)
        with torch.no_grad():
            frame, stop_logit, weights, new_state = syn.decode_step(
                small_model, state, torch.zeros(1, 80))
        assert frame.shape == (1, 80)
        assert torch.isfinite(frame).all()
        assert float(weights.sum()) == pytest.approx(1.0, abs=1e-5)
        assert (weights >= 0).all()

    def test_same_state_twice_identical(self, small_model):
        mem = conditioned_memory(small_model, "hello there")
        state = syn.init_decoder_state(small_model, mem, seed=1)
        prev = torch.zeros(1, 80)
        f1, s1, w1, _ = syn.decode_step(small_model, state, prev)
        f2, s2, w2, _ = syn.decode_step(small_model, state, prev)
        assert torch.equal(f1, f2) and torch.equal(s1, s2) and torch.equal(w1, w2)

    def test_requires_initialized_state(self, small_model):
        with pytest.raises(UninitializedState):
            syn.decode_step(small_model, None, torch.zeros(1, 80))


class TestSynthesize:
    def test_max_steps_one_truncates(self, small_model):
        result = syn.synthesize("abc", np.zeros(256), small_model, max_steps=1)
        assert result.mel_before.shape[0] == 1
        assert result.truncated or result.stop_step == 0

    def test_postnet_residual_contract(self, small_model):
        result = syn.synthesize("abcd", np.zeros(256), small_model, max_steps=4)
        with torch.no_grad():
            residual = small_model.postnet(
                torch.as_tensor(result.mel_before, dtype=torch.float32).unsqueeze(0)
            )[0].numpy()
        assert np.allclose(result.mel_after - result.mel_before, residual, atol=1e-5)

    def test_attention_rows_simplex(self, small_model):
        result = syn.synthesize("simplex rows", np.zeros(256), small_model, max_steps=6)
        sums = result.attention.sum(axis=1)
        assert np.allclose(sums, 1.0, atol=1e-5)
        assert (result.attention >= 0).all()

    def test_deterministic_function_of_text(self, small_model):
        emb = np.full(256, 0.1)
        a = syn.synthesize("same words", emb, small_model, max_steps=8, seed=2)
        b = syn.synthesize("same words", emb, small_model, max_steps=8, seed=2)
        assert np.array_equal(a.mel_after, b.mel_after)

    def test_condition_shape_checked(self, small_model):
        with pytest.raises(ShapeMismatch):
            syn.synthesize("abc", np.zeros(100), small_model, max_steps=2)


class TestTrainStep:
    def test_zero_loss_when_prediction_equals_target(self):
        lengths = torch.tensor([5, 3])
        target = torch.randn(2, 5, 80)
        stops = torch.full((2, 5), -20.0)
        stops[0, 4] = 20.0
        stops[1, 2] = 20.0
        losses = syn.mel_losses(target, target, stops, target, lengths)
        assert float(losses["mse_before"]) == 0.0
        assert float(losses["mse_after"]) == 0.0
        assert float(losses["stop"]) < 1e-6

    def test_loss_finite_positive_on_random_init(self, small_model):
        torch.manual_seed(1)
        batch = {
            "ids": torch.tensor([syn.text_to_sequence("ab cd").ids]),
            "conditions": torch.zeros(1, 256),
            "targets": torch.randn(1, 12, 80),
            "lengths": torch.tensor([12]),
        }
        losses = syn.train_step(batch, small_model)
        assert np.isfinite(losses["total"]) and losses["total"] > 0

    def test_teacher_forcing_uses_only_past_targets(self, small_model):
        torch.manual_seed(2)
        ids = torch.tensor([syn.text_to_sequence("abcdef").ids])
        cond = torch.zeros(1, 256)
        lengths = torch.tensor([10])
        target_a = torch.randn(1, 10, 80)
        target_b = target_a.clone()
        t0 = 6
        target_b[0, t0] += 1.0
        small_model.eval()
        # identical dropout draws: the masks depend only on the step index
        with torch.no_grad():
            torch.manual_seed(42)
            before_a, _, _, _ = syn.teacher_forced_forward(
                small_model, ids, cond, target_a, lengths)
            torch.manual_seed(42)
            before_b, _, _, _ = syn.teacher_forced_forward(
                small_model, ids, cond, target_b, lengths)
        assert torch.allclose(before_a[:, : t0 + 1], before_b[:, : t0 + 1])
        assert not torch.allclose(before_a[:, t0 + 1 :], before_b[:, t0 + 1 :])

    def test_overfit_smoke_two_utterances(self, synth_corpus, trained_encoder):
        # 500 steps on a 2-utterance batch must halve the loss vs step-10 average
        records = synth_corpus["manifest"].records[:2]
        manifest = data.Manifest(records=list(records))
        cfg = syn.SynthesizerTrainConfig(stage1_steps=0, stage2_steps=500,
                                         batch_size=2, seed=0, lr_end=1e-4)
        torch.manual_seed(0)
        model, info = syn.train_synthesizer(manifest, trained_encoder["emotion_ckpt"],
                                            cfg, SMALL_CONFIG)
        curve = info["loss_curve"]
        early = float(np.mean(curve[5:15]))
        late = float(np.mean(curve[-10:]))
        assert late <= 0.5 * early


class TestLrSchedule:
    def test_final_lr(self):
        assert syn.lr_at(1999, 2000, 1e-3, 1e-5) == pytest.approx(1e-5, rel=0.1)

    def test_initial_lr(self):
        assert syn.lr_at(0, 2000, 1e-3, 1e-5) == pytest.approx(1e-3, rel=1e-6)

    def test_monotone_decay(self):
        values = [syn.lr_at(s, 100, 1e-3, 1e-5) for s in range(100)]
        assert all(a >= b for a, b in zip(values, values[1:]))


class TestTrainSynthesizer:
    def test_missing_encoder_checkpoint(self, synth_corpus, tmp_path):
        with pytest.raises(MissingEncoderCheckpoint):
            syn.train_synthesizer(synth_corpus["manifest"], tmp_path / "absent.pt",
                                  syn.SynthesizerTrainConfig(stage1_steps=0, stage2_steps=1))

    def test_encoder_weights_untouched(self, synth_corpus, trained_encoder, tmp_path):
        import hashlib
        digest_before = hashlib.sha256(
            trained_encoder["emotion_ckpt"].read_bytes()).hexdigest()
        cfg = syn.SynthesizerTrainConfig(stage1_steps=0, stage2_steps=3, batch_size=4)
        syn.train_synthesizer(synth_corpus["manifest"], trained_encoder["emotion_ckpt"],
                              cfg, SMALL_CONFIG)
        digest_after = hashlib.sha256(
            trained_encoder["emotion_ckpt"].read_bytes()).hexdigest()
        assert digest_before == digest_after


class TestTrainedSynth:
    def test_condition_changes_output(self, trained_synth, synth_corpus):
        model = trained_synth["model"]
        embs = trained_synth["embeddings"]
        rec = synth_corpus["manifest"].records[0]
        other = synth_corpus["pair_of"][rec.id]
        a = syn.synthesize(rec.transcript, embs[rec.id], model, max_steps=150, seed=3)
        b = syn.synthesize(rec.transcript, embs[other], model, max_steps=150, seed=3)
        n = min(len(a.mel_after), len(b.mel_after))
        assert float(np.mean((a.mel_after[:n] - b.mel_after[:n]) ** 2)) > 0.0

    def test_stop_token_fires_on_training_sentence(self, trained_synth, synth_corpus):
        model = trained_synth["model"]
        rec = synth_corpus["manifest"].records[0]
        result = syn.synthesize(rec.transcript, trained_synth["embeddings"][rec.id],
                                model, max_steps=200, seed=3)
        assert not result.truncated

    def test_log_mel_conversion_respects_floor(self, trained_synth, synth_corpus):
        model = trained_synth["model"]
        rec = synth_corpus["manifest"].records[0]
        result = syn.synthesize(rec.transcript, trained_synth["embeddings"][rec.id],
                                model, max_steps=100, seed=3)
        mel = result.to_log_mel("after")
        assert np.all(mel.frames >= np.log(dsp.SYNTHESIZER_MEL.log_floor) - 1e-9)
