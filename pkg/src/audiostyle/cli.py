"""Command-line driver: train, transfer, render, figure.

Every invocation prints exactly one JSON line: a summary on stdout when it
succeeds, or ``{"status": "error", "kind": ..., "message": ...}`` on stderr
with a nonzero exit code when it fails.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import network, training, transfer
from .config import RunConfig, load_config
from .dsp import LogSpectrogram, fit_to_clip, log_magnitude, stft
from .errors import AudioStyleError, InvalidInputError, TrainFirstError
from .fileio import (
    read_matrix_csv,
    read_spectrogram,
    read_wav,
    to_gray,
    write_matrix_csv,
    write_pgm,
    write_spectrogram,
    write_wav,
)

log = logging.getLogger("audiostyle")

PANELS = {"a": "init", "b": "content", "c": "style", "d": "output"}
FAILED_MARKER = "FAILED"


def _config(path: str | None) -> RunConfig:
    return load_config(path) if path else RunConfig()


def _spectrogram_from_wav(path: str, cfg: RunConfig) -> LogSpectrogram:
    w = read_wav(path)
    if w.sample_rate != cfg.stft.sample_rate:
        raise InvalidInputError(f"{path}: {w.sample_rate} Hz does not match stft.sample_rate {cfg.stft.sample_rate}")
    return log_magnitude(stft(fit_to_clip(w, cfg.stft), cfg.stft), cfg.transfer.epsilon)


def cmd_train(args) -> dict:
    cfg = _config(args.config)
    corpus = training.synth_corpus(cfg.corpus, cfg.stft)
    if args.manifest:
        training.write_manifest(cfg.corpus, args.manifest)
    net = network.build(cfg.network, seed=cfg.seeds.train)
    names = [a.name for a in cfg.corpus.archetypes[: cfg.corpus.num_classes]]
    ckpt, report = training.train(net, corpus, cfg.training, seed=cfg.seeds.train, class_names=names)
    Path(cfg.paths.checkpoint).parent.mkdir(parents=True, exist_ok=True)
    network.save(ckpt, cfg.paths.checkpoint)
    last = report.epochs[-1]
    return {"checkpoint": cfg.paths.checkpoint, "epochs": len(report.epochs),
            "loss": last.mean_cross_entropy, "accuracy": last.train_accuracy}


def _write_panel(out: Path, key: str, x: LogSpectrogram) -> None:
    write_matrix_csv(out / f"panel_{key}.csv", x.values)
    write_pgm(out / f"panel_{key}.pgm", to_gray(x.values, x.floor, float(x.values.max())))


def cmd_transfer(args) -> dict:
    cfg = _config(args.config)
    ckpt_path = Path(cfg.paths.checkpoint)
    if not ckpt_path.exists():
        raise TrainFirstError(f"no checkpoint at {ckpt_path}; run `train` first")
    net = network.load(ckpt_path, expect=cfg.network).network()
    content = _spectrogram_from_wav(args.content, cfg)
    style = _spectrogram_from_wav(args.style, cfg)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    args._created_dir = out
    x_recon, trace = transfer.run_transfer(net, content, style, cfg.transfer)
    write_spectrogram(out / "xrecon.spec", x_recon)
    write_wav(out / "out.wav", transfer.render(x_recon, cfg.transfer))
    transfer.write_trace_csv(trace, out / "trace.csv")
    init = transfer.init_input(content.shape, content, cfg.transfer.init.seed)
    for key, x in zip("abcd", (init, content, style, x_recon)):
        _write_panel(out, key, x)
    return {"out": str(out), "steps": len(trace), "best_step": trace.best_step,
            "initial_loss": trace.total[0], "best_loss": trace.total[trace.best_step]}


def cmd_render(args) -> dict:
    cfg = _config(args.config)
    x = read_spectrogram(args.spec)
    w = transfer.render(x, cfg.transfer)
    write_wav(args.out, w)
    return {"out": args.out, "samples": len(w)}


def cmd_figure(args) -> dict:
    """Re-scale the four panels of a run onto one shared gray scale."""
    run, out = Path(args.run), Path(args.out)
    mats = {}
    for key in PANELS:
        path = run / f"panel_{key}.csv"
        if not path.exists():
            raise InvalidInputError(f"{run} is not a completed run: missing {path.name}")
        mats[key] = read_matrix_csv(path)
    shapes = {m.shape for m in mats.values()}
    if len(shapes) != 1:
        raise InvalidInputError(f"panels differ in shape: {sorted(shapes)}")
    lo = min(float(m.min()) for m in mats.values())
    hi = max(float(m.max()) for m in mats.values())
    out.mkdir(parents=True, exist_ok=True)
    grays = {k: to_gray(m, lo, hi) for k, m in mats.items()}
    for key, g in grays.items():
        write_pgm(out / f"panel_{key}.pgm", g)
    # 2 x 2 montage, a b / c d, with a 2-pixel white gutter
    f, t = shapes.pop()
    sheet = np.full((2 * f + 2, 2 * t + 2), 255, dtype=np.uint8)
    for i, key in enumerate("abcd"):
        r, c = divmod(i, 2)
        sheet[r * (f + 2) : r * (f + 2) + f, c * (t + 2) : c * (t + 2) + t] = grays[key]
    write_pgm(out / "figure.pgm", sheet)
    return {"out": str(out), "height": f, "width": t, "range": [lo, hi]}


class UsageError(AudioStyleError):
    kind = "usage"


class _Parser(argparse.ArgumentParser):
    # report through the JSON error line instead of argparse's multi-line usage dump
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="audiostyle", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the classifier on the synthetic corpus")
    p.add_argument("--config")
    p.add_argument("--manifest", help="also write the corpus manifest (JSON lines)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", help="synthesize content-with-style from noise")
    p.add_argument("--config")
    p.add_argument("--content", required=True)
    p.add_argument("--style", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("render", help="Griffin-Lim a saved spectrogram to WAV")
    p.add_argument("--config")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("figure", help="four-panel figure data for a finished run")
    p.add_argument("--run", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_figure)
    return parser


def _fail(kind: str, message: str) -> int:
    line = json.dumps({"status": "error", "kind": kind, "message": " ".join(message.split())})
    print(line, file=sys.stderr)
    return 2 if kind != "internal" else 3


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        return _fail(e.kind, str(e))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    args._created_dir = None
    try:
        summary = args.func(args)
    except (AudioStyleError, OSError) as e:
        _mark_failed(args)
        kind = getattr(e, "kind", "io")
        return _fail(kind, str(e))
    except Exception as e:  # noqa: BLE001
        _mark_failed(args)
        return _fail("internal", f"{type(e).__name__}: {e}")
    print(json.dumps({"status": "ok", "command": args.command, **summary}, sort_keys=True))
    return 0


def _mark_failed(args) -> None:
    if args._created_dir is not None:
        (Path(args._created_dir) / FAILED_MARKER).write_text("run did not complete\n")


if __name__ == "__main__":
    sys.exit(main())
