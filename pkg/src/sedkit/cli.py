"""Pipeline orchestration: one subcommand per stage, wired by a run directory.

Run directory layout: runs/<name>/{corpus,checkpoints,clusters,reports,logs}.
Every artifact is accompanied by a .meta.json recording the hash of the
resolved config that produced it plus the content hashes of its inputs, so
`evaluate` can refuse to mix artifacts from different configurations.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

import numpy as np

from . import data, eval as eval_mod
from .checkpoint import content_hash, load_params, save_params
from .clustering import ClusterModel, cluster_speakers, speaker_means
from .config import ConfigError, RunConfig, apply_overrides, load_config
from .embedding import (EmbedNet, SvTrainConfig, embed, features,
                        pair_accuracy, train_sv)
from .enhancer import EnhTrainConfig, pretrain_specialist, train_denoiser
from .ensemble import (EnsembleModel, FinetuneConfig, GateTrainConfig,
                       LAMBDA_FINETUNE, finetune, gate_accuracy,
                       pretrain_gate)
from .model_io import (denoise_from_arrays, embed_from_arrays,
                       ensemble_from_arrays, net_to_arrays)


class StageError(RuntimeError):
    """A pipeline stage cannot run; message names the prerequisite."""


# --- run-directory plumbing ---

def _dirs(cfg: RunConfig) -> dict[str, str]:
    out = {}
    for sub in ("corpus", "checkpoints", "clusters", "reports", "logs"):
        out[sub] = os.path.join(cfg.out_dir, sub)
    return out


def _write_meta(artifact_path, cfg: RunConfig, inputs: dict[str, str]):
    meta = {"config_hash": cfg.hash(), "inputs": inputs}
    with open(artifact_path + ".meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")


def _read_meta(artifact_path) -> dict:
    meta_path = artifact_path + ".meta.json"
    if not os.path.exists(meta_path):
        return {}
    with open(meta_path, encoding="utf-8") as f:
        return json.load(f)


def _log_stage(cfg: RunConfig, stage, payload: dict):
    d = _dirs(cfg)["logs"]
    os.makedirs(d, exist_ok=True)
    entry = {"stage": stage, "config_hash": cfg.hash(),
             "config": cfg.to_dict(), "time": time.strftime("%Y-%m-%dT%H:%M:%S")}
    entry.update(payload)
    with open(os.path.join(d, f"{stage}.json"), "w", encoding="utf-8") as f:
        json.dump(entry, f, indent=2, sort_keys=True)
        f.write("\n")


def _require(path, stage, prerequisite):
    if not os.path.exists(path):
        raise StageError(
            f"{stage} requires {path!r}; run `{prerequisite}` first")
    return path


def _corpus_dir(cfg: RunConfig) -> str:
    return cfg.corpus_dir or _dirs(cfg)["corpus"]


def _load_corpus(cfg: RunConfig, stage):
    d = _corpus_dir(cfg)
    _require(os.path.join(d, "utterances.jsonl"), stage, "synth-data")
    return data.load_corpus(d)


def _sv_path(cfg):
    return os.path.join(_dirs(cfg)["checkpoints"], "sv.ckpt")


def _cluster_path(cfg):
    return os.path.join(_dirs(cfg)["clusters"], f"kmeans_k{cfg.k}.json")


def _gate_path(cfg):
    return os.path.join(_dirs(cfg)["checkpoints"], f"gate_k{cfg.k}.ckpt")


def _spec_path(cfg, label):
    return os.path.join(_dirs(cfg)["checkpoints"],
                        f"spec_k{cfg.k}_h{cfg.hidden}_{label}.ckpt")


def _baseline_path(cfg):
    return os.path.join(_dirs(cfg)["checkpoints"],
                        f"baseline_h{cfg.hidden}.ckpt")


def _ensemble_path(cfg):
    return os.path.join(_dirs(cfg)["checkpoints"],
                        f"ensemble_k{cfg.k}_h{cfg.hidden}.ckpt")


# --- stages ---

def stage_synth_data(cfg: RunConfig) -> int:
    d = _corpus_dir(cfg)
    corpus = data.synth_corpus(
        n_speakers=cfg.n_speakers,
        utterances_per_speaker=cfg.utterances_per_speaker,
        seed=cfg.seed, n_val_speakers=cfg.n_val_speakers,
        n_test_speakers=cfg.n_test_speakers)
    data.save_corpus(corpus, d)
    _write_meta(os.path.join(d, "utterances.jsonl"), cfg, {})
    _log_stage(cfg, "synth-data", {
        "n_train": len(corpus.split("train")),
        "n_val": len(corpus.split("val")),
        "n_test": len(corpus.split("test")), "dir": d})
    print(f"synth-data: wrote corpus to {d}")
    return 0


def stage_train_sv(cfg: RunConfig) -> int:
    corpus = _load_corpus(cfg, "train-sv")
    sv_cfg = SvTrainConfig(steps=cfg.sv_steps, batch_pairs=cfg.sv_batch_pairs,
                           crop_samples=cfg.crop_samples, lr=cfg.lr_train)
    net = train_sv(corpus, sv_cfg, seed=cfg.seed)
    path = _sv_path(cfg)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    save_params(path, net_to_arrays(net, "embed."))
    _write_meta(path, cfg, {})
    acc = pair_accuracy(net, corpus, data.worker_rng(cfg.seed, 830),
                        n_pairs=128, crop=cfg.crop_samples, split="train")
    _log_stage(cfg, "train-sv", {"checkpoint": path,
                                 "checkpoint_hash": content_hash(path),
                                 "train_pair_accuracy": acc})
    print(f"train-sv: wrote {path} (fresh-pair accuracy {acc:.3f})")
    return 0


def _clustering_means(cfg, corpus, net):
    rng = data.worker_rng(cfg.seed, 840)
    pool = corpus.noise_pool("train")
    by_speaker = {}
    for spk, utts in sorted(corpus.by_speaker("train").items()):
        zs = []
        for u in utts:
            for _ in range(2):
                seg = data.sample_segment(u.waveform, rng, data.SEGMENT_LEN)
                nz = pool[int(rng.integers(len(pool)))]
                m = data.mix(seg,
                             data.sample_segment(nz.waveform, rng,
                                                 data.SEGMENT_LEN),
                             float(rng.uniform(-5.0, 10.0)))
                zs.append(embed(features(m.mixture), net))
        by_speaker[spk] = zs
    return speaker_means(by_speaker)


def stage_cluster(cfg: RunConfig) -> int:
    corpus = _load_corpus(cfg, "cluster")
    sv_path = _require(_sv_path(cfg), "cluster (requires embed checkpoint)",
                       "train-sv")
    net = embed_from_arrays(load_params(sv_path), "embed.")
    means = _clustering_means(cfg, corpus, net)
    model = cluster_speakers(means, K=cfg.k, seed=cfg.seed)
    model.sv_checkpoint_hash = content_hash(sv_path)
    path = _cluster_path(cfg)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    model.save(path)
    _write_meta(path, cfg, {"sv": model.sv_checkpoint_hash})
    _log_stage(cfg, "cluster", {"path": path, "K": cfg.k,
                                "assignment": model.assignment,
                                "inertia": model.inertia})
    print(f"cluster: K={cfg.k} assignment {model.assignment}")
    return 0


def stage_pretrain_gate(cfg: RunConfig) -> int:
    corpus = _load_corpus(cfg, "pretrain-gate")
    sv_path = _require(_sv_path(cfg), "pretrain-gate", "train-sv")
    cl_path = _require(_cluster_path(cfg), "pretrain-gate", "cluster")
    net = embed_from_arrays(load_params(sv_path), "embed.")
    cluster = ClusterModel.load(cl_path)
    gate_cfg = GateTrainConfig(steps=cfg.gate_steps, batch=cfg.gate_batch,
                               crop_samples=cfg.crop_samples,
                               lr=cfg.lr_train)
    gate_net = pretrain_gate(corpus, net, cluster, gate_cfg, seed=cfg.seed)
    path = _gate_path(cfg)
    save_params(path, net_to_arrays(gate_net, "gate."))
    _write_meta(path, cfg, {"sv": content_hash(sv_path),
                            "cluster": content_hash(cl_path)})
    acc = gate_accuracy(gate_net, corpus, cluster,
                        data.worker_rng(cfg.seed, 850), n=96,
                        crop=cfg.crop_samples)
    _log_stage(cfg, "pretrain-gate", {"checkpoint": path,
                                      "gate_accuracy": acc})
    print(f"pretrain-gate: wrote {path} (accuracy {acc:.3f})")
    return 0


def stage_pretrain_specialists(cfg: RunConfig) -> int:
    corpus = _load_corpus(cfg, "pretrain-specialists")
    cl_path = _require(_cluster_path(cfg), "pretrain-specialists", "cluster")
    cluster = ClusterModel.load(cl_path)
    enh_cfg = EnhTrainConfig(steps=cfg.enh_steps, batch=cfg.enh_batch,
                             crop_samples=cfg.crop_samples, lr=cfg.lr_train)
    for label in range(cfg.k):
        net = pretrain_specialist(corpus, cluster.assignment, label,
                                  enh_cfg, seed=cfg.seed,
                                  hidden=cfg.hidden)
        path = _spec_path(cfg, label)
        os.makedirs(os.path.dirname(path), exist_ok=True)
        save_params(path, net_to_arrays(net, f"spec{label}."))
        _write_meta(path, cfg, {"cluster": content_hash(cl_path)})
        print(f"pretrain-specialists: wrote {path}")
    _log_stage(cfg, "pretrain-specialists",
               {"checkpoints": [_spec_path(cfg, j) for j in range(cfg.k)]})
    return 0


def stage_train_baseline(cfg: RunConfig) -> int:
    corpus = _load_corpus(cfg, "train-baseline")
    enh_cfg = EnhTrainConfig(steps=cfg.enh_steps, batch=cfg.enh_batch,
                             crop_samples=cfg.crop_samples, lr=cfg.lr_train)
    net = train_denoiser(corpus, enh_cfg, seed=cfg.seed, hidden=cfg.hidden)
    path = _baseline_path(cfg)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    save_params(path, net_to_arrays(net, "baseline."))
    _write_meta(path, cfg, {})
    _log_stage(cfg, "train-baseline", {"checkpoint": path})
    print(f"train-baseline: wrote {path}")
    return 0


def _assemble_naive(cfg, cluster) -> EnsembleModel:
    arrays = dict(load_params(_gate_path(cfg)))
    for label in range(cfg.k):
        arrays.update(load_params(_spec_path(cfg, label)))
    return ensemble_from_arrays(arrays, cfg.k, cluster,
                                lam=LAMBDA_FINETUNE)


def stage_finetune(cfg: RunConfig) -> int:
    corpus = _load_corpus(cfg, "finetune")
    cl_path = _require(_cluster_path(cfg), "finetune", "cluster")
    _require(_gate_path(cfg), "finetune", "pretrain-gate")
    inputs = {"cluster": content_hash(cl_path),
              "gate": content_hash(_gate_path(cfg))}
    for label in range(cfg.k):
        p = _require(_spec_path(cfg, label), "finetune",
                     "pretrain-specialists")
        inputs[f"spec{label}"] = content_hash(p)
    cluster = ClusterModel.load(cl_path)
    model = _assemble_naive(cfg, cluster)
    ft_cfg = FinetuneConfig(steps=cfg.finetune_steps,
                            batch=cfg.finetune_batch,
                            crop_samples=cfg.crop_samples,
                            lr=cfg.lr_finetune)
    model = finetune(model, corpus, ft_cfg, seed=cfg.seed)
    path = _ensemble_path(cfg)
    arrays = {name: var.value for name, var in model.named().items()}
    save_params(path, arrays)
    _write_meta(path, cfg, inputs)
    _log_stage(cfg, "finetune", {"checkpoint": path})
    print(f"finetune: wrote {path}")
    return 0


def _check_hashes(cfg, paths, force):
    hashes = {}
    for p in paths:
        meta = _read_meta(p)
        if meta:
            hashes[p] = meta.get("config_hash")
    distinct = {h for h in hashes.values() if h is not None}
    if len(distinct) > 1 and not force:
        detail = ", ".join(f"{os.path.basename(p)}={h[:8]}"
                           for p, h in hashes.items())
        raise StageError(
            f"evaluate: artifacts were produced by different configs "
            f"({detail}); rerun the pipeline or pass --force")


def stage_evaluate(cfg: RunConfig, force=False) -> int:
    corpus = _load_corpus(cfg, "evaluate")
    base_path = _require(_baseline_path(cfg), "evaluate", "train-baseline")
    cl_path = _require(_cluster_path(cfg), "evaluate", "cluster")
    _require(_gate_path(cfg), "evaluate", "pretrain-gate")
    ens_path = _require(_ensemble_path(cfg), "evaluate", "finetune")
    spec_paths = [_require(_spec_path(cfg, j), "evaluate",
                           "pretrain-specialists") for j in range(cfg.k)]
    _check_hashes(cfg, [base_path, cl_path, _gate_path(cfg), ens_path,
                        *spec_paths], force)

    cluster = ClusterModel.load(cl_path)
    baseline = denoise_from_arrays(load_params(base_path), "baseline.")
    naive = _assemble_naive(cfg, cluster)
    tuned = ensemble_from_arrays(load_params(ens_path), cfg.k, cluster,
                                 lam=LAMBDA_FINETUNE)

    testset = eval_mod.build_testset(corpus, seed=cfg.seed,
                                     n_per_snr=cfg.eval_per_snr,
                                     n_uniform=cfg.eval_uniform)
    sv_net = embed_from_arrays(load_params(_sv_path(cfg)), "embed.")
    labels = eval_mod.test_speaker_labels(corpus, sv_net, cluster,
                                          seed=cfg.seed)
    reports = [
        eval_mod.evaluate(baseline, testset, "baseline"),
        eval_mod.evaluate(naive, testset, "ensemble-naive",
                          speaker_labels=labels),
        eval_mod.evaluate(tuned, testset, "ensemble-finetuned",
                          speaker_labels=labels),
    ]
    out = _dirs(cfg)["reports"]
    written = eval_mod.emit_report(reports, out)
    for p in written:
        _write_meta(p, cfg, {"ensemble": content_hash(ens_path),
                             "baseline": content_hash(base_path)})
    _log_stage(cfg, "evaluate", {
        "reports": written,
        "mean_sisdri": {r.model: r.mean_sisdri for r in reports}})
    for r in reports:
        print(f"evaluate: {r.model:18s} mean SI-SDRi {r.mean_sisdri:+.2f} dB")
    return 0


def stage_report(cfg: RunConfig) -> int:
    path = os.path.join(_dirs(cfg)["reports"], "summary.csv")
    _require(path, "report", "evaluate")
    rows = eval_mod.parse_summary(path)
    header = f"{'model':20s} {'K':>3s} {'H':>4s} {'total':>10s} " \
             f"{'effective':>10s} {'SI-SDRi':>8s} {'gate acc':>8s}"
    print(header)
    for row in rows:
        gate = f"{row['gate_accuracy']:.3f}" if row["gate_accuracy"] \
            is not None else "-"
        print(f"{row['model']:20s} {row['K']:3d} {row['H']:4d} "
              f"{row['total_params']:10d} {row['effective_params']:10d} "
              f"{row['mean_sisdri']:+8.2f} {gate:>8s}")
    return 0


def stage_selftest(cfg: RunConfig) -> int:
    from .property_suite import run_suite
    d = _dirs(cfg)["reports"]
    os.makedirs(d, exist_ok=True)
    n_failed, _ = run_suite(json_path=os.path.join(d, "selftest.json"))
    return 1 if n_failed else 0


STAGES = {
    "synth-data": stage_synth_data,
    "train-sv": stage_train_sv,
    "cluster": stage_cluster,
    "pretrain-gate": stage_pretrain_gate,
    "pretrain-specialists": stage_pretrain_specialists,
    "train-baseline": stage_train_baseline,
    "finetune": stage_finetune,
    "evaluate": stage_evaluate,
    "report": stage_report,
    "selftest": stage_selftest,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sedkit",
        description="Sparsely active ensemble denoiser pipeline")
    parser.add_argument("--config", metavar="PATH",
                        help="TOML run configuration")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", metavar="DIR", default=None,
                        help="run directory (runs/<name>)")
    parser.add_argument("--k", type=int, default=None,
                        help="number of specialists (2, 5, or 10)")
    parser.add_argument("--hidden", type=int, default=None,
                        help="specialist hidden size")
    parser.add_argument("--force", action="store_true",
                        help="allow mixed-config artifacts in evaluate")
    parser.add_argument("stage", choices=sorted(STAGES),
                        help="pipeline stage to run")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        cfg = apply_overrides(cfg, seed=args.seed, out_dir=args.out,
                              k=args.k, hidden=args.hidden)
        stage_fn = STAGES[args.stage]
        if args.stage == "evaluate":
            return stage_evaluate(cfg, force=args.force)
        return stage_fn(cfg)
    except (StageError, ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
