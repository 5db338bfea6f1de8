"""Operator entry points: train, encode, decode, eval, probe, analyze.

Exit codes: 0 on success, 2 for validation problems (bad config, missing
or mismatched inputs), 3 for runtime failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import wave as wave_module
from pathlib import Path

import torch

from sac import bitstream
from sac.audio import read_wav, write_wav
from sac.config import (
    ABLATIONS,
    ConfigError,
    RunConfig,
    build_discriminators,
    build_model,
    load_model_from_checkpoint,
    write_default_config,
)
from sac.decoder import ReconstructionPattern
from sac.evaluation import (
    ProbeTask,
    evaluate_directory,
    aggregate_reports,
    emit_mel_figure,
    merge_external_metrics,
    probe_linear,
    report_to_json,
    stream_probe_features,
)
from sac.semantic import build_semantic_codebook
from sac.training import CropDataset, Trainer, config_digest, load_checkpoint

logger = logging.getLogger(__name__)

PATTERN_CHOICES = ("full", "semantic-only", "acoustic-only")


def _num_workers(flag_value) -> int:
    if flag_value is not None:
        return int(flag_value)
    env = os.environ.get("SAC_NUM_WORKERS", "1")
    try:
        n = int(env)
    except ValueError:
        raise ValueError(f"SAC_NUM_WORKERS must be an integer, got {env!r}") from None
    if n < 1:
        raise ValueError(f"SAC_NUM_WORKERS must be >= 1, got {n}")
    return n


def cmd_train(args) -> int:
    cfg = RunConfig.from_file(args.config)
    overrides = {}
    if args.total_steps is not None:
        overrides["total_steps"] = args.total_steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        cfg = RunConfig.from_dict({**cfg.as_dict(), **overrides})
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(cfg.seed)
    dataset = CropDataset(args.manifest, cfg.crop_s, cfg.batch_size, cfg.seed)
    model = build_model(cfg)
    print(f"fitting semantic codebook (k={cfg.k_sem}) on {len(dataset)} files", flush=True)
    waveforms = [dataset._waveform(p) for p in dataset.wav_paths]
    codebook = build_semantic_codebook(
        model.provider, waveforms, cfg.k_sem, seed=cfg.seed, max_rows=cfg.sem_fit_max_rows
    )
    model.set_semantic_codebook(codebook)
    discs = build_discriminators(cfg)
    trainer = Trainer(
        model,
        discs,
        dataset,
        cfg.to_train_config(),
        weights=cfg.to_loss_weights(args.ablate),
        recon_scales=cfg.to_recon_scales(),
        run_config=cfg.as_dict(),
        ablate=args.ablate,
    )
    if args.resume is not None:
        ckpt = load_checkpoint(args.resume)
        if ckpt.get("config_hash") != config_digest(cfg.as_dict()):
            raise ValueError(
                f"{args.resume}: checkpoint config hash {ckpt.get('config_hash')} does not match "
                f"the current configuration {config_digest(cfg.as_dict())}"
            )
        if ckpt.get("ablate", "none") != args.ablate:
            raise ValueError(
                f"{args.resume}: checkpoint was trained with --ablate {ckpt.get('ablate')}, got {args.ablate}"
            )
        trainer.load_state(ckpt)
        print(f"resumed from {args.resume} at step {trainer.step_count}", flush=True)
    last = trainer.run(out_dir=out_dir, log_path=out_dir / "train_log.jsonl")
    if last is not None:
        print(f"finished at step {trainer.step_count}: total={last.total:.4f} recon={last.recon:.4f}")
    else:
        print(f"nothing to do: checkpoint already at step {trainer.step_count}")
    return 0


def cmd_encode(args) -> int:
    model, _ = load_model_from_checkpoint(args.checkpoint)
    w = read_wav(args.input)
    stream = bitstream.encode(w, model, semantic_only=args.semantic_only)
    bitstream.write_stream(args.output, stream)
    print(f"{args.output}: {bitstream.bitrate(stream):.0f} bps, {len(bitstream.serialize(stream))} bytes")
    return 0


def cmd_decode(args) -> int:
    model, _ = load_model_from_checkpoint(args.checkpoint)
    stream = bitstream.read_stream(args.input)
    pattern = ReconstructionPattern.parse(args.pattern)
    w = bitstream.decode(stream, model, pattern)
    write_wav(args.output, w)
    print(f"{args.output}: {w.duration_s:.2f} s at {w.sample_rate} Hz ({pattern.value})")
    return 0


def cmd_eval(args) -> int:
    workers = _num_workers(args.workers)
    reports = evaluate_directory(args.ref_dir, args.deg_dir, num_workers=workers)
    if args.external is not None:
        merge_external_metrics(reports, json.loads(Path(args.external).read_text()))
    report_to_json(reports, args.out)
    agg = aggregate_reports(reports)
    print(
        f"{len(reports)} pairs: stoi={agg['stoi']:.4f} "
        f"lsd={agg['log_spectral_distance_dB']:.2f} dB spk={agg['speaker_cosine']:.4f}"
    )
    return 0


def cmd_probe(args) -> int:
    model, _ = load_model_from_checkpoint(args.checkpoint)
    manifest = Path(args.manifest)
    items = []
    label_names = []
    for line in manifest.read_text().splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{manifest}: expected 'wav<TAB>label', got {line!r}")
        wav = Path(parts[0])
        if not wav.is_absolute():
            wav = manifest.parent / wav
        items.append((read_wav(wav), parts[1]))
        label_names.append(parts[1])
    classes = sorted(set(label_names))
    task = ProbeTask(
        items=[(w, classes.index(name)) for w, name in items],
        num_classes=len(classes),
    )
    features = stream_probe_features(model, [w for w, _ in task.items])
    accuracy = probe_linear(features, task, split_seed=args.seed)
    result = {
        "accuracy": accuracy,
        "num_items": len(task.items),
        "num_classes": task.num_classes,
        "classes": classes,
        "split_seed": args.seed,
        "feature_width": int(features.shape[1]),
    }
    Path(args.out).write_text(json.dumps(result, indent=2) + "\n")
    print(f"probe accuracy: {accuracy:.4f} ({len(classes)} classes, {len(task.items)} items)")
    return 0


def cmd_analyze(args) -> int:
    model, _ = load_model_from_checkpoint(args.checkpoint)
    w = read_wav(args.input)
    stream = bitstream.encode(w, model)
    panels = {
        "original": w,
        "full": bitstream.decode(stream, model, ReconstructionPattern.FULL),
        "semantic_only": bitstream.decode(stream, model, ReconstructionPattern.SEMANTIC_ONLY),
        "acoustic_only": bitstream.decode(stream, model, ReconstructionPattern.ACOUSTIC_ONLY),
    }
    emit_mel_figure(panels, args.out)
    print(f"{args.out}: 4-row mel comparison written")
    return 0


def cmd_init_config(args) -> int:
    write_default_config(args.out)
    print(f"{args.out}: default configuration written")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sac", description="Dual-stream neural speech codec tools.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a WAV manifest")
    p.add_argument("--config", required=True, help="flat key=value run configuration")
    p.add_argument("--manifest", required=True, help="one WAV path per line, optional TAB feature record")
    p.add_argument("--out-dir", required=True, help="checkpoints and JSONL log destination")
    p.add_argument("--ablate", choices=ABLATIONS, default="none", help="zero one auxiliary loss")
    p.add_argument("--total-steps", type=int, default=None, help="override total_steps from the config")
    p.add_argument("--seed", type=int, default=None, help="override seed from the config")
    p.add_argument("--resume", default=None, help="checkpoint to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("encode", help="compress a WAV file to a .sac stream")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="16 kHz mono 16-bit WAV")
    p.add_argument("--output", required=True, help=".sac output path")
    p.add_argument("--semantic-only", action="store_true", help="drop the acoustic stream (175 bps)")
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="render a .sac stream back to WAV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help=".sac input path")
    p.add_argument("--output", required=True, help="WAV output path")
    p.add_argument("--pattern", choices=PATTERN_CHOICES, default="full")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="score reconstructions against references")
    p.add_argument("--ref-dir", required=True)
    p.add_argument("--deg-dir", required=True)
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--external", default=None, help="JSON of externally computed metrics to merge")
    p.add_argument("--workers", type=int, default=None, help="parallel pairs (default SAC_NUM_WORKERS or 1)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("probe", help="linear-probe pooled stream features")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True, help="lines of wav<TAB>class-label")
    p.add_argument("--out", required=True, help="JSON result path")
    p.add_argument("--seed", type=int, default=0, help="train/test split seed")
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("analyze", help="mel figure of the three reconstruction patterns")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="16 kHz mono 16-bit WAV")
    p.add_argument("--out", required=True, help="PNG output path")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("init-config", help="write the canonical default config file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_config)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SAC_LOG_LEVEL", "WARNING"))
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, KeyError, FileNotFoundError, NotADirectoryError, wave_module.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
