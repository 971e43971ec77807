"""Quantitative evaluation: EER, confusion matrices, t-SNE exports, MOS
aggregation, and the declarative experiment runner."""

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import (
    EmptyRatings,
    EmptyTrials,
    LengthMismatch,
    MissingArtifact,
    RatingOutOfRange,
    TooFewPoints,
)

MOS_EMOTION_COLUMNS = ("angry", "happy", "sad", "neutral")


@dataclass
class TrialSet:
    """Similarity scores for genuine (same identity) and impostor trials."""

    genuine: np.ndarray
    impostor: np.ndarray

    def __post_init__(self):
        self.genuine = np.asarray(self.genuine, dtype=np.float64)
        self.impostor = np.asarray(self.impostor, dtype=np.float64)
        if self.genuine.size == 0 or self.impostor.size == 0:
            raise EmptyTrials("both genuine and impostor score lists must be nonempty")


def eer(trials: TrialSet) -> float:
    """Equal error rate from a threshold sweep over the observed scores.

    FAR(t) = fraction of impostor scores >= t; FRR(t) = fraction of genuine
    scores < t. Both are step functions changing only at observed scores, so
    the sweep visits each distinct score (plus a sentinel above the maximum)
    and linearly interpolates the operating point where FAR crosses FRR.
    """
    genuine = np.sort(trials.genuine)
    impostor = np.sort(trials.impostor)
    scores = np.unique(np.concatenate([genuine, impostor]))
    thresholds = np.append(scores, scores[-1] + 1.0)

    # counts via binary search on the sorted score arrays
    far = 1.0 - np.searchsorted(impostor, thresholds, side="left") / impostor.size
    frr = np.searchsorted(genuine, thresholds, side="left") / genuine.size

    diff = far - frr  # non-increasing, starts at 1, ends at -1
    k = int(np.argmax(diff <= 0.0))
    if diff[k] == 0.0:
        return float((far[k] + frr[k]) / 2.0)
    alpha = diff[k - 1] / (diff[k - 1] - diff[k])
    return float(far[k - 1] + alpha * (far[k] - far[k - 1]))


def confusion_matrix(predictions, labels, classes) -> np.ndarray:
    """Counts with rows = true class, columns = predicted class."""
    if len(predictions) != len(labels):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(labels)} labels")
    index = {c: i for i, c in enumerate(classes)}
    matrix = np.zeros((len(classes), len(classes)), dtype=np.int64)
    for pred, true in zip(predictions, labels):
        matrix[index[true], index[pred]] += 1
    return matrix


def tsne_export(
    embeddings: np.ndarray,
    labels,
    out_path=None,
    perplexity: float = 15.0,
    iterations: int = 1000,
    seed: int = 0,
) -> np.ndarray:
    """Project embeddings to 2-D and optionally write (x, y, label) rows."""
    from sklearn.manifold import TSNE

    embeddings = np.asarray(embeddings, dtype=np.float64)
    minimum = int(2 * perplexity + 1)
    if embeddings.shape[0] < minimum:
        raise TooFewPoints(
            f"t-SNE needs >= {minimum} points at perplexity {perplexity}, got {embeddings.shape[0]}"
        )
    points = TSNE(
        n_components=2,
        perplexity=perplexity,
        max_iter=iterations,
        random_state=seed,
        init="pca",
    ).fit_transform(embeddings)
    if out_path is not None:
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        with open(out_path, "w", encoding="utf-8") as fh:
            for (x, y), label in zip(points, labels):
                fh.write(f"{x:.6f}\t{y:.6f}\t{label}\n")
    return points


def mos_aggregate(ratings, group_key=None) -> dict:
    """Per-group mean opinion score with a Student-t 95% confidence interval.

    `ratings` is an iterable of objects or dicts carrying `score`; group_key
    maps a rating to its group (default: one overall group). Groups with a
    single rating report a None interval.
    """
    ratings = list(ratings)
    if not ratings:
        raise EmptyRatings("no ratings to aggregate")

    def get_score(r):
        return r["score"] if isinstance(r, dict) else r.score

    groups = {}
    for r in ratings:
        score = get_score(r)
        if score not in (1, 2, 3, 4, 5):
            raise RatingOutOfRange(f"score must be an integer 1..5, got {score!r}")
        key = group_key(r) if group_key else "overall"
        groups.setdefault(key, []).append(float(score))

    out = {}
    for key, values in groups.items():
        arr = np.asarray(values)
        mean = float(arr.mean())
        if arr.size > 1:
            sem = arr.std(ddof=1) / np.sqrt(arr.size)
            half = float(stats.t.ppf(0.975, arr.size - 1) * sem)
        else:
            half = None
        out[key] = {"mean": mean, "ci95": half, "n": int(arr.size)}
    return out


def render_mos_table(aggregates_by_system: dict) -> str:
    """MOS table with one row per system and the emotion columns plus Overall."""
    header = ["System"] + [c.capitalize() for c in MOS_EMOTION_COLUMNS] + ["Overall"]
    rows = [header]
    for system, per_emotion in aggregates_by_system.items():
        row = [system]
        for emo in MOS_EMOTION_COLUMNS + ("overall",):
            cell = per_emotion.get(emo)
            if cell is None:
                row.append("-")
            elif cell["ci95"] is None:
                row.append(f"{cell['mean']:.2f}")
            else:
                row.append(f"{cell['mean']:.2f} +/- {cell['ci95']:.2f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in rows]
    return "\n".join(lines)


# --- speaker-verification protocol -------------------------------------------

def speaker_verification_trials(embeddings: np.ndarray, speakers, centroids_by_speaker: dict):
    """Cosine trials of test embeddings against enrollment centroids."""
    genuine, impostor = [], []
    for emb, spk in zip(embeddings, speakers):
        for enrolled, centroid in centroids_by_speaker.items():
            cos = float(np.dot(emb, centroid) /
                        (np.linalg.norm(emb) * np.linalg.norm(centroid) + 1e-12))
            (genuine if enrolled == spk else impostor).append(cos)
    return TrialSet(genuine=np.asarray(genuine), impostor=np.asarray(impostor))


def speaker_verification_eval(encoder_ckpt, enroll_manifest, test_manifest,
                              system: str = "proposed") -> dict:
    """Enroll per-speaker centroids, score test clips, report the EER."""
    from .encoder import embed_record, load_encoder

    model = load_encoder(encoder_ckpt)
    cents = {}
    for spk in enroll_manifest.speakers():
        embs = [embed_record(r, model) for r in enroll_manifest.records if r.speaker_id == spk]
        cents[spk] = np.mean(embs, axis=0)
    test_embs = np.stack([embed_record(r, model) for r in test_manifest.records])
    test_spk = [r.speaker_id for r in test_manifest.records]
    trials = speaker_verification_trials(test_embs, test_spk, cents)
    rate = eer(trials)
    return {
        "system": system,
        "n_samples": len(test_manifest),
        "eer": rate,
        "unit": "fraction",
        "n_genuine": int(trials.genuine.size),
        "n_impostor": int(trials.impostor.size),
    }


def render_eer_table(rows) -> str:
    """Verification-EER table: one row per system, sample count, EER (fraction)."""
    header = ["System", "# of samples", "EER"]
    body = [[r["system"], str(r["n_samples"]), f"{r['eer']:.4f}"] for r in rows]
    table = [header] + body
    widths = [max(len(row[i]) for row in table) for i in range(3)]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in table)


# --- experiment runner --------------------------------------------------------

POLICY_COLUMNS = ("baseline", "speed_perturb", "synthetic_male", "synthetic_female",
                  "synthetic_both")


@dataclass
class EvalReport:
    experiment_id: str
    seed: int
    config: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)

    def save(self, path) -> None:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(self.to_json(), encoding="utf-8")


def render_policy_table(metrics: dict, datasets, policies=POLICY_COLUMNS) -> str:
    """Accuracy table: one row per evaluation dataset, one column per policy."""
    header = ["Dataset"] + list(policies)
    rows = [header]
    for ds in datasets:
        row = [ds]
        for pol in policies:
            value = metrics.get(f"{pol}/{ds}")
            row.append("-" if value is None else f"{100.0 * value:.1f}")
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows)


def run_experiment(spec_path) -> EvalReport:
    """Execute a declared augmentation experiment: train an emotion classifier
    under each policy and evaluate on the listed test manifests.

    Spec file (JSON): experiment_id, seed, train_manifest, test_manifests
    (name -> path), synthetic_manifest, policies, model_kind, epochs,
    work_dir, and optional classifier overrides.
    """
    from .data import Manifest
    from . import ser

    spec_path = Path(spec_path)
    if not spec_path.exists():
        raise MissingArtifact(f"experiment spec not found: {spec_path}")
    spec = json.loads(spec_path.read_text(encoding="utf-8"))

    for key in ("experiment_id", "train_manifest", "test_manifests", "policies", "work_dir"):
        if key not in spec:
            raise MissingArtifact(f"experiment spec is missing required field {key!r}")
    unknown = set(spec["policies"]) - set(POLICY_COLUMNS)
    if unknown:
        raise MissingArtifact(f"unknown policies in spec: {sorted(unknown)}")

    seed = int(spec.get("seed", 0))
    model_kind = spec.get("model_kind", "cnn")
    epochs = spec.get("epochs")
    work_dir = Path(spec["work_dir"])

    def load_manifest(path, label):
        if not Path(path).exists():
            raise MissingArtifact(f"{label} manifest not found: {path}")
        return Manifest.load(path)

    train = load_manifest(spec["train_manifest"], "train")
    tests = {name: load_manifest(path, f"test[{name}]")
             for name, path in spec["test_manifests"].items()}
    synthetic = None
    if any(p.startswith("synthetic") for p in spec["policies"]):
        if "synthetic_manifest" not in spec:
            raise MissingArtifact("spec field 'synthetic_manifest' required by synthetic policies")
        synthetic = load_manifest(spec["synthetic_manifest"], "synthetic")

    metrics = {}
    for policy_name in spec["policies"]:
        policy = ser.policy_from_name(policy_name)
        augmented = ser.augment_dataset(train, synthetic, policy,
                                        out_dir=work_dir / f"aug_{policy_name}")
        ckpt_path = work_dir / f"ser_{policy_name}.pt"
        ser.train_ser(augmented, model_kind=model_kind, epochs=epochs,
                      seed=seed, out_path=ckpt_path)
        for name, test_manifest in tests.items():
            result = ser.evaluate_ser(ckpt_path, test_manifest)
            metrics[f"{policy_name}/{name}"] = result["accuracy"]

    table = render_policy_table(metrics, sorted(tests), policies=tuple(spec["policies"]))
    report = EvalReport(
        experiment_id=spec["experiment_id"],
        seed=seed,
        config=spec,
        metrics=metrics,
        tables={"policy_accuracy": table},
    )
    report.save(work_dir / f"{spec['experiment_id']}.report.json")
    return report
