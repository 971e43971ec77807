"""Unified command line: data prep, training, synthesis, vocoding, SER,
evaluation, and the listening-test service."""

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import dsp
from .errors import EmottsError


def _add_data_commands(sub):
    p = sub.add_parser("data", help="corpus scanning, splits, toy generation")
    ds = p.add_subparsers(dest="data_cmd", required=True)

    scan = ds.add_parser("scan", help="scan a corpus tree into a manifest")
    scan.add_argument("--root", required=True)
    scan.add_argument("--layout", required=True,
                      choices=["librispeech", "evd", "tess", "ravdess", "crema-d",
                               "savee", "emodb", "generic"])
    scan.add_argument("--out", required=True)

    split = ds.add_parser("split", help="assign train/val/test splits")
    split.add_argument("--manifest", required=True)
    split.add_argument("--ratios", default="0.7,0.1,0.2")
    split.add_argument("--seed", type=int, default=0)
    split.add_argument("--mode", default="random", choices=["random", "by-speaker"])
    split.add_argument("--out", required=True)

    toy = ds.add_parser("toy", help="generate the synthetic toy corpus")
    toy.add_argument("--out", required=True)
    toy.add_argument("--speakers", type=int, default=2)
    toy.add_argument("--emotions", type=int, default=2)
    toy.add_argument("--per-cell", type=int, default=5)
    toy.add_argument("--duration", type=float, default=1.0)
    toy.add_argument("--seed", type=int, default=0)


def _add_encoder_commands(sub):
    p = sub.add_parser("encoder", help="condition-encoder training and embedding")
    es = p.add_subparsers(dest="encoder_cmd", required=True)

    for name in ("train-speaker", "finetune-emotion"):
        t = es.add_parser(name)
        t.add_argument("--manifest", required=True)
        t.add_argument("--out", required=True)
        t.add_argument("--steps", type=int, default=400)
        t.add_argument("--lr", type=float, default=1e-4)
        t.add_argument("--seed", type=int, default=0)
        t.add_argument("--hidden", type=int, default=768)
        t.add_argument("--layers", type=int, default=3)
        if name == "finetune-emotion":
            t.add_argument("--ckpt", required=True)

    emb = es.add_parser("embed", help="embed one audio file")
    emb.add_argument("--ckpt", required=True)
    emb.add_argument("--audio", required=True)
    emb.add_argument("--out", required=True, help="binary matrix file (1 x 256)")


def _add_synth_commands(sub):
    p = sub.add_parser("synth", help="synthesize mel/wav from text, or train")
    p.add_argument("--text")
    p.add_argument("--ref-audio", help="reference voice sample")
    p.add_argument("--emotion-audio", help="emotional sample of one speaker")
    p.add_argument("--neutral-audio", help="neutral sample of the same speaker")
    p.add_argument("--encoder-ckpt")
    p.add_argument("--ckpt", help="synthesizer checkpoint")
    p.add_argument("--vocoder-ckpt", help="use this vocoder instead of Griffin-Lim")
    p.add_argument("--out", help="output .mel (matrix) or .wav path")
    p.add_argument("--max-steps", type=int, default=1000)
    p.add_argument("--train-manifest", help="train instead of synthesizing")
    p.add_argument("--stage1-steps", type=int, default=500)
    p.add_argument("--stage2-steps", type=int, default=1500)
    p.add_argument("--seed", type=int, default=0)


def _add_vocode_commands(sub):
    p = sub.add_parser("vocode", help="mel to waveform")
    p.add_argument("--mel", required=True, help="binary matrix file of log-mel frames")
    p.add_argument("--ckpt", help="vocoder checkpoint; Griffin-Lim fallback if omitted")
    p.add_argument("--out", required=True)
    p.add_argument("--iterations", type=int, default=60, help="Griffin-Lim iterations")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--train-manifest", help="train a vocoder instead")
    p.add_argument("--steps", type=int, default=600)


def _add_ser_commands(sub):
    p = sub.add_parser("ser", help="emotion classifier training and evaluation")
    ss = p.add_subparsers(dest="ser_cmd", required=True)

    t = ss.add_parser("train")
    t.add_argument("--manifest", required=True)
    t.add_argument("--kind", default="cnn", choices=["cnn", "lstm"])
    t.add_argument("--epochs", type=int)
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--out", required=True)

    e = ss.add_parser("eval")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--manifest", required=True)
    e.add_argument("--out", help="JSON report path (stdout otherwise)")

    a = ss.add_parser("augment")
    a.add_argument("--manifest", required=True)
    a.add_argument("--policy", required=True,
                   choices=["baseline", "speed_perturb", "synthetic_male",
                            "synthetic_female", "synthetic_both"])
    a.add_argument("--synthetic-manifest")
    a.add_argument("--work-dir", required=True)
    a.add_argument("--out", required=True)


def _add_eval_commands(sub):
    p = sub.add_parser("eval", help="metrics and experiment runner")
    es = p.add_subparsers(dest="eval_cmd", required=True)

    eer_p = es.add_parser("eer")
    eer_p.add_argument("--trials", required=True,
                       help="JSON file with 'genuine' and 'impostor' score lists")

    sv = es.add_parser("speaker-verification")
    sv.add_argument("--encoder-ckpt", required=True)
    sv.add_argument("--enroll", required=True)
    sv.add_argument("--test", required=True)
    sv.add_argument("--system", default="proposed")

    ts = es.add_parser("tsne")
    ts.add_argument("--encoder-ckpt", required=True)
    ts.add_argument("--manifest", required=True)
    ts.add_argument("--out", required=True)
    ts.add_argument("--perplexity", type=float, default=15.0)
    ts.add_argument("--seed", type=int, default=0)
    ts.add_argument("--label", default="emotion", choices=["emotion", "speaker", "both"])

    mos = es.add_parser("mos")
    mos.add_argument("--ratings", required=True, help="JSON-lines rating export")

    run = es.add_parser("run")
    run.add_argument("--spec", required=True)


def _add_serve_commands(sub):
    p = sub.add_parser("mos-serve", help="run the listening-test service")
    p.add_argument("--clips", required=True, help="clip manifest (JSON-lines)")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--store", required=True, help="rating store JSON-lines file")
    p.add_argument("--static", help="directory with the browser UI bundle")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="emotts",
        description="multi-speaker emotional TTS toolkit and SER augmentation harness")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_data_commands(sub)
    _add_encoder_commands(sub)
    _add_synth_commands(sub)
    _add_vocode_commands(sub)
    _add_ser_commands(sub)
    _add_eval_commands(sub)
    _add_serve_commands(sub)
    return parser


def _embedding_from_audio(path, encoder_model):
    from .encoder import encode

    wav = dsp.load_audio(path)
    return encode(dsp.mfcc(wav, dsp.ENCODER_MFCC, fixed_frames=encoder_model.config.frames),
                  encoder_model)


def _run_data(args):
    from . import data

    if args.data_cmd == "scan":
        manifest = data.scan_corpus(args.root, args.layout)
        manifest.save(args.out)
        print(f"wrote {len(manifest)} records to {args.out}")
    elif args.data_cmd == "split":
        ratios = tuple(float(x) for x in args.ratios.split(","))
        manifest = data.split_manifest(data.Manifest.load(args.manifest), ratios,
                                       seed=args.seed, mode=args.mode)
        manifest.save(args.out)
        print(f"wrote split manifest to {args.out}")
    else:
        cfg = data.ToyCorpusConfig(n_speakers=args.speakers, n_emotions=args.emotions,
                                   utterances_per_cell=args.per_cell,
                                   duration_s=args.duration, seed=args.seed)
        manifest = data.make_toy_corpus(cfg, args.out)
        print(f"generated {len(manifest)} utterances under {args.out}")


def _run_encoder(args):
    from . import data, encoder

    if args.encoder_cmd == "embed":
        model = encoder.load_encoder(args.ckpt)
        emb = _embedding_from_audio(args.audio, model)
        dsp.write_matrix(args.out, emb.reshape(1, -1))
        print(f"wrote embedding to {args.out}")
        return
    manifest = data.Manifest.load(args.manifest)
    model_config = encoder.EncoderConfig(hidden=args.hidden, layers=args.layers)
    train_config = encoder.EncoderTrainConfig(steps=args.steps, lr=args.lr, seed=args.seed)
    if args.encoder_cmd == "train-speaker":
        _, losses = encoder.train_speaker_phase(manifest, train_config, model_config,
                                                out_path=args.out)
    else:
        _, losses = encoder.finetune_emotion_phase(manifest, args.ckpt, train_config,
                                                   out_path=args.out)
    print(f"final loss {losses[-1]:.4f}; checkpoint at {args.out}")


def _run_synth(args):
    from . import data, synthesizer, vocoder
    from .encoder import emotion_vector, condition_vector, load_encoder

    if args.train_manifest:
        if not (args.encoder_ckpt and args.out):
            raise EmottsError("training needs --encoder-ckpt and --out")
        manifest = data.Manifest.load(args.train_manifest)
        cfg = synthesizer.SynthesizerTrainConfig(
            stage1_steps=args.stage1_steps, stage2_steps=args.stage2_steps, seed=args.seed)
        _, info = synthesizer.train_synthesizer(manifest, args.encoder_ckpt, cfg,
                                                out_path=args.out)
        print(f"trained {info['steps']} steps; checkpoint at {args.out}")
        return

    required = [args.text, args.ref_audio, args.emotion_audio, args.neutral_audio,
                args.encoder_ckpt, args.ckpt, args.out]
    if any(v is None for v in required):
        raise EmottsError("synthesis needs --text --ref-audio --emotion-audio "
                          "--neutral-audio --encoder-ckpt --ckpt --out")
    enc_model = load_encoder(args.encoder_ckpt)
    emb_ref = _embedding_from_audio(args.ref_audio, enc_model)
    emb_en = _embedding_from_audio(args.emotion_audio, enc_model)
    emb_neu = _embedding_from_audio(args.neutral_audio, enc_model)
    emb_final = condition_vector(emb_ref, emotion_vector(emb_en, emb_neu))

    model = synthesizer.load_synthesizer(args.ckpt)
    result = synthesizer.synthesize(args.text, emb_final, model, max_steps=args.max_steps)
    mel = result.to_log_mel("after")
    out = Path(args.out)
    if out.suffix == ".wav":
        if args.vocoder_ckpt:
            wav = vocoder.wavernn_generate(mel, vocoder.load_vocoder(args.vocoder_ckpt))
        else:
            wav = dsp.griffin_lim(mel)
        dsp.save_audio(wav, out)
    else:
        dsp.write_matrix(out, mel.frames)
    flag = " (truncated)" if result.truncated else ""
    print(f"synthesized {mel.n_frames} frames to {out}{flag}")


def _run_vocode(args):
    from . import data, vocoder

    if args.train_manifest:
        manifest = data.Manifest.load(args.train_manifest)
        cfg = vocoder.VocoderTrainConfig(steps=args.steps, seed=args.seed)
        _, losses = vocoder.train_vocoder(manifest, cfg, out_path=args.ckpt or args.out)
        print(f"final loss {losses[-1]:.4f}")
        return
    frames = dsp.read_matrix(args.mel)
    mel = dsp.MelSpectrogram(frames=frames, config=dsp.SYNTHESIZER_MEL)
    if args.ckpt:
        wav = vocoder.wavernn_generate(mel, vocoder.load_vocoder(args.ckpt), seed=args.seed)
    else:
        wav = dsp.griffin_lim(mel, iterations=args.iterations, seed=args.seed)
    dsp.save_audio(wav, args.out)
    print(f"wrote {len(wav)} samples to {args.out}")


def _run_ser(args):
    from . import data, ser

    if args.ser_cmd == "train":
        manifest = data.Manifest.load(args.manifest)
        _, info = ser.train_ser(manifest, model_kind=args.kind, epochs=args.epochs,
                                seed=args.seed, out_path=args.out)
        print(f"labels {info['labels']}; best score {info['best_score']:.3f}; "
              f"checkpoint at {args.out}")
    elif args.ser_cmd == "eval":
        manifest = data.Manifest.load(args.manifest)
        report = ser.evaluate_ser(args.ckpt, manifest)
        text = json.dumps(report, indent=2, sort_keys=True)
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
            print(f"wrote report to {args.out}")
        else:
            print(text)
    else:
        real = data.Manifest.load(args.manifest)
        synthetic = (data.Manifest.load(args.synthetic_manifest)
                     if args.synthetic_manifest else None)
        policy = ser.policy_from_name(args.policy)
        out = ser.augment_dataset(real, synthetic, policy, out_dir=args.work_dir)
        out.save(args.out)
        print(f"wrote {len(out)} records to {args.out}")


def _run_eval(args):
    from . import data, evaluation

    if args.eval_cmd == "eer":
        payload = json.loads(Path(args.trials).read_text(encoding="utf-8"))
        trials = evaluation.TrialSet(genuine=np.asarray(payload["genuine"]),
                                     impostor=np.asarray(payload["impostor"]))
        print(f"EER {evaluation.eer(trials):.6f} (fraction)")
    elif args.eval_cmd == "speaker-verification":
        report = evaluation.speaker_verification_eval(
            args.encoder_ckpt, data.Manifest.load(args.enroll),
            data.Manifest.load(args.test), system=args.system)
        print(evaluation.render_eer_table([report]))
    elif args.eval_cmd == "tsne":
        from .encoder import embed_record, load_encoder

        manifest = data.Manifest.load(args.manifest)
        model = load_encoder(args.encoder_ckpt)
        embeddings = np.stack([embed_record(r, model) for r in manifest.records])
        labeler = {
            "emotion": lambda r: r.emotion,
            "speaker": lambda r: r.speaker_id,
            "both": lambda r: f"{r.speaker_id}|{r.emotion}",
        }[args.label]
        labels = [labeler(r) for r in manifest.records]
        evaluation.tsne_export(embeddings, labels, out_path=args.out,
                               perplexity=args.perplexity, seed=args.seed)
        print(f"wrote {len(labels)} projected points to {args.out}")
    elif args.eval_cmd == "mos":
        rows = [json.loads(line) for line in
                Path(args.ratings).read_text(encoding="utf-8").splitlines() if line.strip()]
        by_system = {}
        for system in sorted({r["system"] for r in rows}):
            system_rows = [r for r in rows if r["system"] == system]
            per = evaluation.mos_aggregate(system_rows, group_key=lambda r: r["emotion"])
            per["overall"] = evaluation.mos_aggregate(system_rows)["overall"]
            by_system[system] = per
        print(evaluation.render_mos_table(by_system))
    else:
        report = evaluation.run_experiment(args.spec)
        print(report.tables["policy_accuracy"])


def _run_serve(args):
    from . import service

    service.serve_forever(args.clips, args.store, port=args.port,
                          static_dir=args.static, base_seed=args.seed)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    runners = {
        "data": _run_data,
        "encoder": _run_encoder,
        "synth": _run_synth,
        "vocode": _run_vocode,
        "ser": _run_ser,
        "eval": _run_eval,
        "mos-serve": _run_serve,
    }
    try:
        runners[args.command](args)
    except EmottsError as exc:
        print(f"error {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
