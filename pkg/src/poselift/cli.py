"""Command line interface.

Exit codes: 0 success, 1 validation or configuration error, 2 numerical
failure (divergence or a failed gradient check).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import NumericError, Tensor
from .gradcheck import model_gradcheck, tiny_config, toy_skeleton
from .macs import attn_mixer_macs, ssm_mixer_macs
from .model import CheckpointError, ConfigError, load_checkpoint
from .nn import MultiHeadAttention
from .pose_io import SequenceFormatError, load_corpus, save_corpus
from .runconfig import load_run_config
from .skeleton import MOTION_KINDS, SkeletonError, generate_corpus
from .streams import SsmBlock
from .train import TrainingDiverged, evaluate_checkpoint, train

GRADCHECK_TOLERANCE = 1e-4


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="poselift", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("data-gen", help="generate a synthetic pose corpus")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--frames", type=int, default=27)
    p.add_argument("--motion", default="mixed", choices=MOTION_KINDS + ("mixed",))
    p.add_argument("--fps", type=int, default=50)
    p.add_argument("--noise", type=float, default=0.01)
    p.add_argument("--format", default="json", choices=("json", "csv"))
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train a model from a run config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score a checkpoint on a corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--inject-targets", action="store_true",
                   help="pipeline self-check: score targets against themselves")
    p.add_argument("--out", help="optional JSON report path")

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--scale", default="tiny", choices=("tiny",))
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("bench", help="MACs and wall time of one mixer block")
    p.add_argument("--block", required=True, choices=("attn", "ssm"))
    p.add_argument("--sweep", default="64,128,256,512",
                   help="comma-separated sequence lengths")
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--heads", type=int, default=1)
    p.add_argument("--state-dim", type=int, default=16)
    p.add_argument("--rounds", type=int, default=21)
    p.add_argument("--out", help="optional CSV path (default stdout)")

    p = sub.add_parser("proto-export", help="dump prototype matrices to CSVs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    return parser


def cmd_data_gen(args) -> int:
    seqs = generate_corpus(args.seed, args.count, frames=args.frames,
                           motion=args.motion, fps=args.fps, noise_std=args.noise)
    save_corpus(args.out, seqs, fmt=args.format,
                meta={"seed": args.seed, "motion": args.motion,
                      "frames": args.frames, "fps": args.fps, "noise_std": args.noise})
    print(f"wrote {len(seqs)} sequences to {args.out}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args.config)
    if not cfg.train_dir or not cfg.eval_dir:
        raise ConfigError(f"{args.config}: data.train_dir and data.eval_dir are required")
    train_seqs = load_corpus(cfg.train_dir)
    eval_seqs = load_corpus(cfg.eval_dir)
    result = train(cfg.model, cfg.train, train_seqs, eval_seqs, out_dir=args.out)
    last = result.epoch_rows[-1]
    print(f"parameters: {result.parameter_count}")
    print(f"baseline constant-pose MPJPE: {result.baseline_mpjpe:.3f} mm")
    print(f"final eval MPJPE: {last['eval_mpjpe']:.3f} mm "
          f"(P-MPJPE {last['eval_pmpjpe']:.3f} mm)")
    print(f"checkpoint: {result.checkpoint}")
    print(f"epoch log: {result.epoch_log}")
    return 0


def cmd_eval(args) -> int:
    seqs = load_corpus(args.data)
    report = evaluate_checkpoint(args.checkpoint, seqs, inject_targets=args.inject_targets)
    print(f"sequences: {len(seqs)}")
    print(f"MPJPE:   {report.mpjpe_mm:.6f} mm")
    print(f"P-MPJPE: {report.p_mpjpe_mm:.6f} mm")
    print(f"PCK@150: {report.pck_pct:.3f} %")
    print(f"AUC:     {report.auc_pct:.3f} %")
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=1) + "\n")
        print(f"report: {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = tiny_config()
    rows = model_gradcheck(cfg, toy_skeleton(cfg.joints), seed=args.seed)
    worst = max(r.max_rel_err for r in rows)
    for r in rows:
        status = "ok" if r.max_rel_err < GRADCHECK_TOLERANCE else "FAIL"
        print(f"{status:4s} {r.max_rel_err:.3e} ({r.checked:3d} entries) {r.name}")
    print(f"worst relative error: {worst:.3e} over {len(rows)} parameter groups")
    if worst >= GRADCHECK_TOLERANCE:
        print("gradient check FAILED", file=sys.stderr)
        return 2
    print("gradient check passed")
    return 0


def _tune_allocator() -> None:
    """Keep large numpy temporaries on the heap between calls.

    Without this, glibc serves them through mmap and every benchmark
    iteration pays page-fault costs that swamp the compute being timed.
    """
    try:
        import ctypes
        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
        libc.mallopt(-1, 1 << 30)  # M_TRIM_THRESHOLD
    except (OSError, AttributeError):  # pragma: no cover - non-glibc hosts
        pass


def bench_block(kind: str, lengths: list[int], dim: int = 16, heads: int = 1,
                state_dim: int = 16, lanes: int = 8, rounds: int = 21,
                seed: int = 0) -> tuple[list[dict], dict]:
    """Time one mixer block across sequence lengths.

    Every timing round measures all lengths back to back, and the scaling
    ratio for a length pair is the median of per-round ratios. Host speed
    drifts hit adjacent measurements alike, so they cancel in the ratio;
    a single end-to-end timer would fold the drift into the result.
    Returns (per-length rows, adjacent-pair wall-time ratios) with times
    normalized per sequence.
    """
    _tune_allocator()
    rng = np.random.default_rng(seed)
    if kind == "attn":
        block = MultiHeadAttention(dim, heads, rng)
        run = lambda x: block(x, x)
    else:
        block = SsmBlock(dim, state_dim, rng)
        run = block
    lengths = sorted(lengths)
    xs = {n: Tensor(rng.normal(size=(lanes, n, dim))) for n in lengths}
    # Longer lengths loop fewer times per sample, keeping samples
    # comparable in duration without touching per-call cost.
    mults = {n: max(1, lengths[-1] // n) for n in lengths}
    per_round: list[dict] = []
    with ad.no_grad():
        for x in xs.values():
            run(x)  # warm up (numba compilation, allocator growth)
        for _ in range(rounds):
            sample = {}
            for n in lengths:
                start = time.perf_counter()
                for _ in range(mults[n]):
                    run(xs[n])
                sample[n] = (time.perf_counter() - start) / (mults[n] * lanes)
            per_round.append(sample)
    rows = []
    for n in lengths:
        macs = (attn_mixer_macs(n, dim) if kind == "attn"
                else ssm_mixer_macs(n, dim, state_dim))
        rows.append({"length": n, "macs": macs,
                     "wall_time_s": float(np.median([r[n] for r in per_round]))})
    ratios = {
        (a, b): float(np.median([r[b] / r[a] for r in per_round]))
        for a, b in zip(lengths, lengths[1:])
    }
    return rows, ratios


def cmd_bench(args) -> int:
    try:
        lengths = [int(part) for part in args.sweep.split(",") if part]
    except ValueError:
        raise ConfigError(f"--sweep must be comma-separated integers, got {args.sweep!r}")
    if not lengths or any(n < 2 for n in lengths):
        raise ConfigError(f"--sweep lengths must be >= 2, got {args.sweep!r}")
    rows, ratios = bench_block(args.block, lengths, dim=args.dim, heads=args.heads,
                               state_dim=args.state_dim, rounds=args.rounds)
    lines = ["length,macs,wall_time_s"]
    lines += [f"{r['length']},{r['macs']},{r['wall_time_s']!r}" for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    for (a, b), ratio in ratios.items():
        print(f"wall-time ratio {a}->{b}: {ratio:.3f}")
    return 0


def cmd_proto_export(args) -> int:
    model, _, _ = load_checkpoint(args.checkpoint)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for layer_idx, block in enumerate(model.blocks):
        protos = block.bank.prototypes.data
        for k in range(protos.shape[0]):
            name = f"layer{layer_idx}_proto{k:02d}.csv"
            # float() strips the numpy scalar wrapper so repr emits bare digits
            lines = [",".join(repr(float(v)) for v in row) for row in protos[k]]
            (out / name).write_text("\n".join(lines) + "\n")
            files.append(name)
    manifest = {"layers": len(model.blocks),
                "prototypes": int(model.cfg.prototypes),
                "joints": int(model.cfg.joints),
                "files": files}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    print(f"wrote {len(files)} prototype matrices to {out}")
    return 0


_COMMANDS = {
    "data-gen": cmd_data_gen,
    "train": cmd_train,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "bench": cmd_bench,
    "proto-export": cmd_proto_export,
}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except (ConfigError, CheckpointError, SequenceFormatError, SkeletonError,
            FileNotFoundError, NotADirectoryError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (NumericError, TrainingDiverged) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
