"""Paired test-set evaluation and report emission.

Every evaluated model scores the exact same frozen mixture list, so the
comparison is paired rather than resampled.  Reports carry per-utterance
records plus aggregates (mean SI-SDRi, gate routing accuracy, parameter
counts) and can be written as CSV and JSON.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import data, dsp
from .clustering import ClusterModel
from .embedding import embed, features
from .enhancer import DenoiseNet, enhance, si_sdr
from .ensemble import EnsembleModel, enhance_hard, gru_layer_params, param_counts

EVAL_SNRS = (-5.0, 0.0, 5.0, 10.0)

SUMMARY_COLUMNS = ("model", "K", "H", "total_params", "effective_params",
                   "mean_sisdri", "gate_accuracy")
RECORD_COLUMNS = ("utt_id", "speaker", "snr_db", "input_sisdr",
                  "output_sisdr", "sisdri", "chosen_k", "gate_entropy")


@dataclass
class EvalRecord:
    utt_id: str
    speaker: str
    snr_db: float
    input_sisdr: float
    output_sisdr: float
    sisdri: float
    chosen_k: int | None = None
    gate_entropy: float | None = None


@dataclass
class EvalReport:
    model: str
    K: int
    hidden: int
    total_params: int
    effective_params: int
    records: list[EvalRecord] = field(default_factory=list)
    gate_accuracy: float | None = None

    @property
    def mean_sisdri(self) -> float:
        return float(np.mean([r.sisdri for r in self.records]))

    def mean_by_snr(self) -> dict[float, float]:
        out: dict[float, list[float]] = {}
        for r in self.records:
            out.setdefault(r.snr_db, []).append(r.sisdri)
        return {s: float(np.mean(v)) for s, v in sorted(out.items())}


def build_testset(corpus, seed, split="test", n_per_snr=8, n_uniform=16,
                  snrs=EVAL_SNRS, length=data.SEGMENT_LEN):
    """Frozen, seeded mixture list: stratified fixed SNRs plus uniform draws."""
    rng = data.worker_rng(seed, 901)
    samples = []
    for snr in snrs:
        for _ in range(n_per_snr):
            samples.append(data.sample_mixture(
                corpus, split, rng, length=length, snr_db=float(snr)))
    for _ in range(n_uniform):
        samples.append(data.sample_mixture(corpus, split, rng, length=length))
    return samples


def _entropy(p: np.ndarray) -> float:
    p = np.clip(np.asarray(p, dtype=np.float64), 1e-12, 1.0)
    return float(-np.sum(p * np.log(p)))


def test_speaker_labels(corpus, embed_net, cluster: ClusterModel, seed,
                        split="test", renders_per_utt=2) -> dict[str, int]:
    """Diagnostic nearest-centroid label for each held-out speaker.

    Held-out speakers have no k-means label by construction (zero-shot);
    this assigns the centroid nearest their mean noisy embedding.
    """
    rng = data.worker_rng(seed, 902)
    pool = corpus.noise_pool(split)
    labels = {}
    for spk, utts in sorted(corpus.by_speaker(split).items()):
        zs = []
        for u in utts:
            for _ in range(renders_per_utt):
                seg = data.sample_segment(u.waveform, rng, data.SEGMENT_LEN)
                nz = pool[int(rng.integers(len(pool)))]
                m = data.mix(seg, data.sample_segment(nz.waveform, rng,
                                                      data.SEGMENT_LEN),
                             float(rng.uniform(-5.0, 10.0)))
                zs.append(embed(features(m.mixture), embed_net))
        labels[spk] = cluster.label_of(np.mean(zs, axis=0))
    return labels


def evaluate(model, testset, model_name, speaker_labels=None,
             cfg=dsp.StftConfig()) -> EvalReport:
    """Score one model on a frozen mixture list.

    ``model`` is a DenoiseNet (scored with a plain forward pass), an
    EnsembleModel (scored with hard argmax routing), or None for the
    identity passthrough (mask of ones).
    """
    if isinstance(model, EnsembleModel):
        K = model.K
        hidden = model.specialists[0].hidden
        total, effective = param_counts(K, hidden)
    elif isinstance(model, DenoiseNet):
        K, hidden = 1, model.hidden
        n_bins = model.b_out.value.shape[0]
        total = (gru_layer_params(n_bins, hidden)
                 + gru_layer_params(hidden, hidden)
                 + hidden * n_bins + n_bins)
        effective = total
    elif model is None:
        K, hidden, total, effective = 0, 0, 0, 0
    else:
        raise TypeError(f"cannot evaluate model of type {type(model)!r}")

    report = EvalReport(model=model_name, K=K, hidden=hidden,
                        total_params=total, effective_params=effective)
    routed_hits = 0
    routed_total = 0
    for i, sample in enumerate(testset):
        chosen = None
        entropy = None
        if isinstance(model, EnsembleModel):
            est, k_star, p = enhance_hard(sample.mixture, model, cfg)
            chosen = int(k_star)
            entropy = _entropy(p)
            if speaker_labels is not None and sample.speaker_id in speaker_labels:
                routed_total += 1
                routed_hits += int(chosen == speaker_labels[sample.speaker_id])
        elif isinstance(model, DenoiseNet):
            est, _ = enhance(sample.mixture, model, cfg)
        else:
            est = sample.mixture
        # the analyzed length can be slightly shorter than the mixture
        # (no-padding STFT); score input and output on the same support
        L = len(est)
        inp = si_sdr(sample.mixture[:L], sample.clean[:L])
        out = si_sdr(est, sample.clean[:L])
        report.records.append(EvalRecord(
            utt_id=f"mix{i:04d}", speaker=sample.speaker_id,
            snr_db=float(sample.snr_db), input_sisdr=inp, output_sisdr=out,
            sisdri=out - inp, chosen_k=chosen, gate_entropy=entropy))
    if routed_total:
        report.gate_accuracy = routed_hits / routed_total
    return report


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def summary_rows(reports: list[EvalReport]) -> list[dict]:
    rows = []
    for r in reports:
        rows.append({"model": r.model, "K": r.K, "H": r.hidden,
                     "total_params": r.total_params,
                     "effective_params": r.effective_params,
                     "mean_sisdri": r.mean_sisdri,
                     "gate_accuracy": r.gate_accuracy})
    return rows


def emit_report(reports: list[EvalReport], out_dir) -> list[str]:
    """Write per-utterance records CSV, summary CSV, and summary JSON.

    Returns the list of file paths written.
    """
    import os
    os.makedirs(out_dir, exist_ok=True)
    written = []

    records_path = os.path.join(out_dir, "records.csv")
    with open(records_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(("model",) + RECORD_COLUMNS)
        for r in reports:
            for rec in r.records:
                w.writerow([r.model] + [_fmt(getattr(rec, c))
                                        for c in RECORD_COLUMNS])
    written.append(records_path)

    summary_path = os.path.join(out_dir, "summary.csv")
    with open(summary_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(SUMMARY_COLUMNS)
        for row in summary_rows(reports):
            w.writerow([_fmt(row[c]) for c in SUMMARY_COLUMNS])
    written.append(summary_path)

    json_path = os.path.join(out_dir, "summary.json")
    with open(json_path, "w", encoding="utf-8") as f:
        json.dump({"models": summary_rows(reports)}, f, indent=2,
                  sort_keys=True)
        f.write("\n")
    written.append(json_path)
    return written


def parse_summary(path) -> list[dict]:
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            parsed = dict(row)
            for k in ("K", "H", "total_params", "effective_params"):
                parsed[k] = int(row[k])
            parsed["mean_sisdri"] = float(row["mean_sisdri"])
            parsed["gate_accuracy"] = (float(row["gate_accuracy"])
                                       if row["gate_accuracy"] else None)
            rows.append(parsed)
    return rows
