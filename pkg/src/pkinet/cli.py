"""Command-line front door.

Subcommands: ``synth`` (write a synthetic stream to feature files),
``run`` (execute the session protocol, with seed lists and k sweeps),
``gradcheck`` (finite-difference audit of all backward paths), and
``report`` (merge result directories into a publication-style table).

Exit codes: 0 success, 2 configuration/usage errors, 3 runtime or
protocol errors. The default output root is the ``PKINET_OUT``
environment variable, falling back to ``./pkinet_out``.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .checkpoint import load_checkpoint, save_checkpoint
from .data import (
    SessionLayout,
    SessionStream,
    SynthSpec,
    load_feature_file,
    make_synthetic_stream,
    save_feature_file,
    validate_stream,
)
from .errors import PkinetError
from .evaluate import AccuracyMatrix, Report, emit_table
from .gradcheck import finite_difference_check
from .trainer import TrainConfig, run_protocol

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

MANIFEST_NAME = "manifest.json"


def _out_root() -> Path:
    return Path(os.environ.get("PKINET_OUT", "pkinet_out"))


def _load_json(path: Path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ValueError(f"cannot read {path}: {exc}")


_SYNTH_KEYS = {
    "schema_version",
    "kind",
    "d",
    "base_classes",
    "num_incremental",
    "n_way",
    "k_shot",
    "cluster_std",
    "center_scale",
    "train_per_base_class",
    "test_per_class",
    "seed",
}


def _parse_synth_spec(raw: dict, source: Path) -> SynthSpec:
    unknown = set(raw) - _SYNTH_KEYS
    if unknown:
        raise ValueError(f"unknown keys in {source}: {sorted(unknown)}")
    if raw.get("schema_version", 1) != 1:
        raise ValueError(f"unsupported schema_version in {source}")
    layout = SessionLayout(
        base_classes=raw["base_classes"],
        num_incremental=raw["num_incremental"],
        n_way=raw["n_way"],
        k_shot=raw["k_shot"],
    )
    kwargs = {
        key: raw[key]
        for key in (
            "cluster_std",
            "center_scale",
            "train_per_base_class",
            "test_per_class",
            "seed",
        )
        if key in raw
    }
    return SynthSpec(d=raw["d"], layout=layout, **kwargs)


def load_stream(source: str | Path) -> SessionStream:
    """Stream from a manifest file/directory or an in-memory synth spec."""
    path = Path(source)
    if path.is_dir():
        path = path / MANIFEST_NAME
    raw = _load_json(path)
    kind = raw.get("kind")
    if kind == "synth-spec":
        return make_synthetic_stream(_parse_synth_spec(raw, path))
    if kind != "stream-manifest":
        raise ValueError(f"{path}: expected kind synth-spec or stream-manifest")
    layout = SessionLayout(**raw["layout"])
    base = path.parent
    sessions = []
    for entry in raw["sessions"]:
        sessions.append(
            (
                load_feature_file(base / entry["train"]),
                load_feature_file(base / entry["test"]),
            )
        )
    return SessionStream(sessions=sessions, layout=layout)


def cmd_synth(args) -> int:
    spec = _parse_synth_spec(_load_json(Path(args.spec)), Path(args.spec))
    out = Path(args.out) if args.out else _out_root() / "synth"
    manifest_path = out / MANIFEST_NAME
    if manifest_path.exists() and not args.overwrite:
        raise PkinetError(
            f"{manifest_path} already exists; pass --overwrite to replace it"
        )
    out.mkdir(parents=True, exist_ok=True)
    stream = make_synthetic_stream(spec)
    validate_stream(stream)
    entries = []
    for t, (train, test) in enumerate(stream.sessions):
        train_name = f"session_{t:02d}_train.pkif"
        test_name = f"session_{t:02d}_test.pkif"
        save_feature_file(out / train_name, train)
        save_feature_file(out / test_name, test)
        entries.append({"session": t, "train": train_name, "test": test_name})
    manifest = {
        "schema_version": 1,
        "kind": "stream-manifest",
        "seed": spec.seed,
        "d": spec.d,
        "layout": dataclasses.asdict(spec.layout),
        "sessions": entries,
    }
    manifest_path.write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"wrote {len(entries)} sessions to {out}")
    return EXIT_OK


def _build_config(args) -> TrainConfig:
    if args.config:
        cfg = TrainConfig.from_dict(_load_json(Path(args.config)))
    else:
        cfg = TrainConfig()
    overrides = {}
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.alpha is not None:
        overrides["alpha"] = args.alpha
    if args.iters is not None:
        overrides["incr_iters"] = args.iters
    if args.init is not None:
        overrides["init_mode"] = args.init
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _sweep_rows(
    cfg: TrainConfig, k_values, explicit_mode: str | None = None
) -> list[tuple[str, TrainConfig]]:
    """One summary row per requested k; 'T' runs the single-weight-sum mode."""
    if not k_values:
        label = cfg.mode if cfg.mode != "pkiv2" else f"pkiv2-k{cfg.k}"
        return [(label, cfg)]
    if explicit_mode == "pki":
        raise ValueError("--k selects group sizes for pkiv2 (or T for pkiv1); "
                         "it does not apply to --mode pki")
    rows = []
    multi = len(k_values) > 1
    for kv in k_values:
        if str(kv).upper() == "T":
            rows.append(
                ("k=T" if multi else "pkiv1",
                 dataclasses.replace(cfg, mode="pkiv1"))
            )
        else:
            k = int(kv)
            rows.append(
                (f"k={k}" if multi else f"pkiv2-k{k}",
                 dataclasses.replace(cfg, mode="pkiv2", k=k))
            )
    return rows


def _write_accuracy_csv(path: Path, acc: AccuracyMatrix) -> None:
    """Full-precision per-session results (machine-oriented; see README)."""
    n = acc.num_sessions
    lines = ["session,joint," + ",".join(f"acc_origin_{i}" for i in range(n))]
    for t in range(n):
        row = acc.per_session_per_origin[t]
        cells = [str(t), repr(acc.per_session[t])]
        cells += [repr(v) for v in row] + [""] * (n - len(row))
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def cmd_run(args) -> int:
    cfg = _build_config(args)
    if args.seeds:
        seeds = args.seeds
    elif args.seed is not None:
        seeds = [args.seed]
    else:
        seeds = [cfg.seed]
    rows = _sweep_rows(cfg, args.k, explicit_mode=args.mode)
    stream = load_stream(args.stream)
    out = Path(args.out) if args.out else _out_root() / "run"
    summary_path = out / f"summary.{'md' if args.format == 'md' else 'csv'}"

    resume = None
    if args.resume_from:
        if len(rows) != 1 or len(seeds) != 1:
            raise ValueError("--resume-from supports a single row and seed")
        state, acc = load_checkpoint(args.resume_from)
        cfg = state.config  # the checkpoint's config snapshot wins on resume
        rows = _sweep_rows(cfg, [])
        seeds = [cfg.seed]
        resume = (state, acc)

    for label, _ in rows:
        for seed in seeds:
            run_dir = out / label / f"seed_{seed}"
            if (run_dir / "accuracy.csv").exists() and not args.overwrite:
                raise PkinetError(
                    f"{run_dir} already holds results; pass --overwrite to redo"
                )

    report = Report()
    manifest = {
        "config": cfg.to_dict(),
        "stream": str(args.stream),
        "seeds": list(seeds),
        "rows": [label for label, _ in rows],
        "out": str(out),
    }
    for label, row_cfg in rows:
        for seed in seeds:
            run_cfg = dataclasses.replace(row_cfg, seed=seed)
            run_dir = out / label / f"seed_{seed}"
            ckpt_dir = run_dir / "checkpoints"
            ckpt_dir.mkdir(parents=True, exist_ok=True)

            def save_session(t, state, acc):
                save_checkpoint(ckpt_dir / f"session_{t:02d}.npz", state, acc)

            kwargs = {}
            if resume is not None:
                kwargs = {"resume_state": resume[0], "resume_accuracy": resume[1]}
            state, acc = run_protocol(
                stream, run_cfg, on_session=save_session, **kwargs
            )
            _write_accuracy_csv(run_dir / "accuracy.csv", acc)
            name = label if len(seeds) == 1 else f"{label}/seed_{seed}"
            report.add(name, acc)
            print(f"{name}: final joint accuracy {acc.per_session[-1]:.4f}")

    out.mkdir(parents=True, exist_ok=True)
    summary_path.write_text(
        emit_table(report, format="md" if args.format == "md" else "csv")
    )
    (out / "run_manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    print(f"summary written to {summary_path}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    modes = ["pki", "pkiv1", "pkiv2"] if args.mode == "all" else [args.mode]
    worst = 0.0
    failures = []
    for mode in modes:
        for s in range(args.seeds):
            errors = finite_difference_check(
                d=args.d,
                h=args.h,
                p=args.p,
                n_classes=args.classes,
                sessions=args.sessions,
                mode=mode,
                k=args.k if args.k else 2,
                alpha=args.alpha if args.alpha else 1.0,
                seed=args.seed + s,
                fd_step=args.fd_step,
            )
            for tensor, err in errors.items():
                worst = max(worst, err)
                status = "ok" if err < args.tolerance else "FAIL"
                print(f"{mode} seed={args.seed + s} {tensor}: "
                      f"max rel err {err:.3e} [{status}]")
                if err >= args.tolerance:
                    failures.append(f"{mode}/{tensor}")
    print(f"worst relative error: {worst:.3e} (tolerance {args.tolerance:.1e})")
    if failures:
        print("failed tensors: " + ", ".join(sorted(set(failures))), file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_report(args) -> int:
    report = Report()
    for root in args.results:
        root = Path(root)
        hits = sorted(root.rglob("accuracy.csv"))
        if not hits:
            raise PkinetError(f"no accuracy.csv found under {root}")
        for csv_path in hits:
            rel = csv_path.parent.relative_to(root)
            name = str(rel) if str(rel) != "." else root.name
            matrix = AccuracyMatrix()
            lines = csv_path.read_text().strip().splitlines()
            for line in lines[1:]:
                cells = line.split(",")
                joint = float(cells[1])
                origins = [float(c) for c in cells[2:] if c]
                matrix.append_session(joint, origins, [0] * len(origins))
            report.add(name, matrix)
    text = emit_table(
        report,
        format="md" if args.format == "md" else "csv",
        reference=args.ref,
    )
    if args.out:
        Path(args.out).write_text(text)
        print(f"report written to {args.out}")
    else:
        print(text, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pkinet",
        description="Projector-ensemble few-shot class-incremental learning",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate a synthetic feature stream")
    p_synth.add_argument("--spec", required=True, help="synth-spec JSON file")
    p_synth.add_argument("--out", help="output directory")
    p_synth.add_argument("--overwrite", action="store_true")
    p_synth.set_defaults(func=cmd_synth)

    p_run = sub.add_parser("run", help="run the session protocol")
    p_run.add_argument("--config", help="TrainConfig JSON file")
    p_run.add_argument("--stream", required=True,
                       help="stream manifest file/dir or synth-spec JSON")
    p_run.add_argument("--out", help="output directory")
    p_run.add_argument("--mode", choices=["pki", "pkiv1", "pkiv2"])
    p_run.add_argument("--k", nargs="+",
                       help="group size(s); several values sweep, T = pkiv1")
    p_run.add_argument("--alpha", type=float)
    p_run.add_argument("--iters", type=int, help="incremental iterations")
    p_run.add_argument("--init", choices=["random", "previous"])
    p_run.add_argument("--seed", type=int, help="overrides the config seed")
    p_run.add_argument("--seeds", nargs="+", type=int,
                       help="run once per seed (overrides --seed)")
    p_run.add_argument("--format", choices=["csv", "md"], default="csv")
    p_run.add_argument("--overwrite", action="store_true")
    p_run.add_argument("--resume-from", help="checkpoint .npz to resume from")
    p_run.set_defaults(func=cmd_run)

    p_grad = sub.add_parser("gradcheck", help="finite-difference gradient audit")
    p_grad.add_argument("--d", type=int, default=8)
    p_grad.add_argument("--h", type=int, default=8)
    p_grad.add_argument("--p", type=int, default=8)
    p_grad.add_argument("--classes", type=int, default=6)
    p_grad.add_argument("--sessions", type=int, default=2)
    p_grad.add_argument("--mode", choices=["pki", "pkiv1", "pkiv2", "all"],
                        default="all")
    p_grad.add_argument("--k", type=int)
    p_grad.add_argument("--alpha", type=float)
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--seeds", type=int, default=3,
                        help="number of consecutive seeds to audit")
    p_grad.add_argument("--tolerance", type=float, default=1e-4)
    p_grad.add_argument("--fd-step", type=float, default=1e-5)
    p_grad.set_defaults(func=cmd_gradcheck)

    p_rep = sub.add_parser("report", help="merge run results into a table")
    p_rep.add_argument("results", nargs="+", help="result directories")
    p_rep.add_argument("--format", choices=["csv", "md"], default="csv")
    p_rep.add_argument("--ref", help="reference row for the improvement column")
    p_rep.add_argument("--out", help="write the table here instead of stdout")
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except PkinetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
