"""Command-line entry point: ``mmvae <command> [options]``.

Pipeline: ``babble`` -> ``dataset`` -> ``train`` -> ``eval`` / ``predict`` /
``rollout`` / ``imitate`` / ``compare`` / ``export-plots``.

Exit codes: 0 success, 1 runtime failure (training or rollout diverged, or a
non-finite result), 2 usage error or missing input file, 3 bad or mismatched
input (format, schema version, config hash).
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import arm, io, tasks
from .baselines import METHODS, REGRESSOR_DEFAULTS, compare, train_fwd_inv, train_method, train_vanilla
from .checkpoint import load_checkpoint, save_checkpoint
from .config import load_config
from .dataset import (
    PREV_BLOCK, SAMPLE_COLUMNS, T_BLOCK, AugmentedDataset, MaskPattern, apply_mask, assign_split,
    build_dataset,
)
from .errors import ConfigError, FormatError, InputError, MMVAEError
from .model import HISTORY_COLUMNS, train
from .normalization import Normalization

EXIT_RUNTIME, EXIT_USAGE, EXIT_MISMATCH = 1, 2, 3
PATTERN_CHOICES = ("complete", "prev", "imitation", "vision")


class CLIError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# -- helpers ------------------------------------------------------------------

def _run_config(args, **extra):
    overrides = {k: getattr(args, k, None) for k in
                 ("seed", "rows", "split_ratio", "train_seed", "steps", "batch_size", "lr", "beta",
                  "nll_beta", "out_dir", "model")}
    if getattr(args, "paper_scale", False):
        overrides["profile"] = "paper"
    overrides.update(extra)
    return load_config(args.config, overrides)


def _regressor_config(cfg):
    """Schedule overrides for both regressors, or None to keep their defaults."""
    given = {k: getattr(cfg, k) for k in ("steps", "batch_size", "lr") if getattr(cfg, k) is not None}
    return replace(REGRESSOR_DEFAULTS, **given) if given else None


def _out_path(args, cfg, default_name):
    path = Path(args.out) if args.out else Path(cfg.out_dir) / default_name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _require(path):
    path = Path(path)
    if not path.exists():
        raise CLIError(f"no such file: {path}", EXIT_USAGE)
    return path


def _stamp(cfg, command, **extra):
    return {"command": command, "config": cfg.to_dict(), "config_hash": cfg.hash(), **extra}


def _finite(obj):
    if isinstance(obj, dict):
        return all(_finite(v) for v in obj.values())
    if isinstance(obj, (list, tuple)):
        return all(_finite(v) for v in obj)
    if isinstance(obj, float):
        return math.isfinite(obj)
    if isinstance(obj, np.ndarray):
        return bool(np.all(np.isfinite(obj)))
    return True


def _write_report(path, report):
    if not _finite(report):
        raise CLIError(f"non-finite values in report for {path}", EXIT_RUNTIME)
    io.write_json(path, report)
    print(path)


def _write_csv(path, table, header, meta):
    if not np.all(np.isfinite(table)):
        raise CLIError(f"non-finite values in {path}", EXIT_RUNTIME)
    io.write_table(path, np.asarray(table, dtype=float), header, meta)
    print(path)


def _load_dataset(path):
    ds = AugmentedDataset.load(_require(path))
    if not ds.is_test.any():
        raise CLIError(f"{path}: dataset has no test split", EXIT_MISMATCH)
    return ds


def _load_models(path):
    models, meta = load_checkpoint(_require(path))
    return models, meta


def _check_lineage(ckpt_meta, ds, force):
    """Refuse checkpoint/dataset pairs built from different data unless forced."""
    want, have = ckpt_meta.get("data_hash"), ds.meta.get("data_hash")
    if want != have:
        msg = f"checkpoint data hash {want} != dataset data hash {have}"
        if not force:
            raise CLIError(msg + " (use --force to override)", EXIT_MISMATCH)
        print(f"warning: {msg}", file=sys.stderr)


def _single_model(models, path):
    if "model" in models:
        return models["model"]
    raise CLIError(f"{path}: checkpoint holds {sorted(models)}, not a single generative model",
                   EXIT_MISMATCH)


def _cfg_from_meta(meta, args):
    """Run config of the checkpoint, with this command's flags on top."""
    saved = dict(meta.get("config", {}))
    arm_cfg = saved.pop("arm", None)
    if args.out_dir:
        saved["out_dir"] = args.out_dir
    cfg = load_config(args.config, saved)
    return replace(cfg, arm=arm.ArmConfig.from_dict(arm_cfg)) if arm_cfg else cfg


# -- commands -----------------------------------------------------------------

def cmd_babble(args):
    cfg = _run_config(args)
    trace = arm.babble_rows(cfg.arm, cfg.rows, cfg.seed)
    path = _out_path(args, cfg, "trace.csv")
    arm.save_trace(path, trace, _stamp(cfg, "babble", data_hash=cfg.data_hash()))
    print(path)


def cmd_dataset(args):
    trace, meta = arm.load_trace(_require(args.trace))
    cfg = _run_config(args)
    split_seed = cfg.seed if args.split_seed is None else args.split_seed
    ds = assign_split(build_dataset(trace), cfg.split_ratio, split_seed)
    data_hash = io.config_hash({"trace": meta.get("data_hash"), "ratio": cfg.split_ratio,
                                "split_seed": split_seed})
    path = _out_path(args, cfg, "dataset.bin")
    ds.save(path, _stamp(cfg, "dataset", data_hash=data_hash, trace=str(args.trace),
                         trace_config=meta.get("config")))
    print(path)


def _history_table(history, columns):
    return np.array([[row.get(c, np.nan) for c in columns] for row in history])


def cmd_train(args):
    ds = _load_dataset(args.dataset)
    cfg = _run_config(args)
    tc = cfg.training()
    path = _out_path(args, cfg, f"{cfg.model}.ckpt")
    stamp = _stamp(cfg, "train", data_hash=ds.meta.get("data_hash"), training=tc.__dict__,
                   normalization=ds.normalization.digest(),
                   normalization_table=ds.normalization.to_dict())
    if cfg.model == "fwdinv":
        rc = _regressor_config(cfg)
        fwd, inv = train_fwd_inv(ds, replace(rc or REGRESSOR_DEFAULTS, seed=tc.seed), rc)
        save_checkpoint(path, {"forward": fwd.model, "inverse": inv.model}, stamp)
        print(path)
        # the two regressors run different schedules, so one loss file each
        for role, res in (("forward", fwd), ("inverse", inv)):
            table = np.column_stack([[r["step"] for r in res.history], res.losses])
            _write_csv(Path(f"{path}.{role}.loss.csv"), table, ["step", "total"], stamp)
        return
    if cfg.model == "mmvae":
        result = train(ds, tc, log_every=args.log_every)
    else:
        mode = "zero-dropout" if cfg.model == "vanilla" else "augmented"
        result = train_vanilla(ds, mode, tc, dropout=args.dropout, log_every=args.log_every)
    save_checkpoint(path, result.model, stamp)
    columns = list(HISTORY_COLUMNS)
    table = _history_table(result.history, columns)
    print(path)
    _write_csv(Path(f"{path}.loss.csv"), table, columns, stamp)


def cmd_eval(args):
    models, meta = _load_models(args.checkpoint)
    ds = _load_dataset(args.dataset)
    _check_lineage(meta, ds, args.force)
    model = _single_model(models, args.checkpoint)
    pattern = MaskPattern.parse(args.pattern)
    report = tasks.eval_reconstruction(model, ds, pattern)
    cfg = _cfg_from_meta(meta, args)
    path = _out_path(args, cfg, f"eval_{pattern.name.lower()}.json")
    _write_report(path, {**_stamp(cfg, "eval", data_hash=meta.get("data_hash")),
                         "pattern": pattern.name, "checkpoint": str(args.checkpoint), **report.to_dict()})


def cmd_predict(args):
    models, meta = _load_models(args.checkpoint)
    ds = _load_dataset(args.dataset)
    _check_lineage(meta, ds, args.force)
    model = _single_model(models, args.checkpoint)
    samples, _ = ds.originals(test=True)
    mean, var = tasks.predict_next(model, samples[:, PREV_BLOCK])
    truth = samples[:, T_BLOCK]
    per = {name: tasks.mse_percent(mean, truth, sl) for name, sl in tasks.BLOCK.items()}
    cfg = _cfg_from_meta(meta, args)
    path = _out_path(args, cfg, "predict.json")
    _write_report(path, {**_stamp(cfg, "predict", data_hash=meta.get("data_hash")),
                         "checkpoint": str(args.checkpoint), "count": len(samples),
                         "per_block": per, "overall": tasks.mse_percent(mean, truth),
                         "mean_variance": {n: float(var[:, sl].mean()) for n, sl in tasks.BLOCK.items()}})


TRAJ_COLUMNS = ["k"] + [f"{n}_{i}" for n, w in (("q", 4), ("v", 4), ("p", 1), ("s", 1), ("u", 4))
                        for i in range(w)]


def cmd_rollout(args):
    models, meta = _load_models(args.checkpoint)
    ds = _load_dataset(args.dataset)
    _check_lineage(meta, ds, args.force)
    model = _single_model(models, args.checkpoint)
    swings = tasks.held_out_swings(ds)
    if not swings:
        raise CLIError("dataset has no complete held-out swing", EXIT_MISMATCH)
    if not 0 <= args.swing < len(swings):
        raise CLIError(f"--swing must be in [0, {len(swings)})", EXIT_USAGE)
    swing = swings[args.swing]
    horizon = min(args.horizon, len(swing) - args.start - 1)
    ro = tasks.swing_rollout(model, swing, horizon, args.start)
    cfg = _cfg_from_meta(meta, args)
    path = _out_path(args, cfg, "rollout.json")
    stamp = _stamp(cfg, "rollout", data_hash=meta.get("data_hash"))
    k = np.arange(1, ro.horizon + 1)[:, None]
    base = path.with_suffix("")
    _write_csv(Path(f"{base}_pred.csv"), np.hstack([k, ro.means]), TRAJ_COLUMNS, stamp)
    _write_csv(Path(f"{base}_var.csv"), np.hstack([k, ro.variances]), TRAJ_COLUMNS, stamp)
    _write_report(path, {**stamp, "checkpoint": str(args.checkpoint), "swing": args.swing,
                         "start": args.start, "horizon": ro.horizon,
                         "vision_mse": ro.vision_mse(),
                         "vision_mse_by_step": [ro.vision_mse(n) for n in range(1, ro.horizon + 1)],
                         "max_abs": float(np.abs(ro.means).max())})


def _reference(path, norm, config):
    """Reference vision path + plant start from a trace file (raw units)."""
    trace, _ = arm.load_trace(_require(path))
    ref = norm.normalize(trace.rows[:, arm.V_COLS], arm.V_COLS)
    start = arm.state_from_q(trace.rows[0, arm.Q_COLS], config)
    return ref[1:], start


def cmd_imitate(args):
    models, meta = _load_models(args.checkpoint)
    model = _single_model(models, args.checkpoint)
    cfg = _cfg_from_meta(meta, args)
    if "normalization_table" not in meta:
        raise CLIError(f"{args.checkpoint}: checkpoint lacks a normalization table", EXIT_MISMATCH)
    norm = Normalization.from_dict(meta["normalization_table"])
    reference, start = _reference(args.reference, norm, cfg.arm)
    runs = {"model": tasks.track(reference, start, cfg.arm, norm, tasks.model_policy(model, norm)),
            "ik_oracle": tasks.track(reference, start, cfg.arm, norm, tasks.oracle_policy(cfg.arm, norm))}
    path = _out_path(args, cfg, "imitate.json")
    stamp = _stamp(cfg, "imitate", data_hash=meta.get("data_hash"))
    k = np.arange(1, len(reference) + 1)[:, None]
    cols = ["k"] + [f"ref_{c}" for c in ("xL", "yL", "xR", "yR")]
    for name, tr in runs.items():
        cols_run = cols + [f"{name}_{c}" for c in ("xL", "yL", "xR", "yR")] + [f"u{i}" for i in range(4)]
        _write_csv(Path(f"{path.with_suffix('')}_{name}.csv"),
                   np.hstack([k, reference, tr.executed, tr.commands]), cols_run, stamp)
    _write_report(path, {**stamp, "checkpoint": str(args.checkpoint), "reference": str(args.reference),
                         "steps": len(reference),
                         **{name: tr.report.to_dict() for name, tr in runs.items()}})


def cmd_compare(args):
    ds = _load_dataset(args.dataset)
    cfg = _run_config(args)
    tc = cfg.training()
    methods = args.methods or list(METHODS)
    runs = []
    for rep in range(args.reps):
        rcfg = replace(tc, seed=tc.seed + rep)
        runs.append({m: train_method(m, ds, rcfg, _regressor_config(cfg)) for m in methods})
        print(f"repetition {rep + 1}/{args.reps} done", file=sys.stderr)
    table = compare(runs, ds)
    out_dir = Path(args.out) if args.out else Path(cfg.out_dir) / "compare"
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = _stamp(cfg, "compare", data_hash=ds.meta.get("data_hash"), reps=args.reps, methods=methods)
    if not _finite(table.scores):
        raise CLIError("non-finite comparison scores", EXIT_RUNTIME)
    (out_dir / "comparison.csv").write_text(table.to_csv())
    (out_dir / "comparison.md").write_text(table.to_markdown())
    (out_dir / "scores.jsonl").write_text(table.to_jsonl())
    io.write_json(out_dir / "comparison.json", {**stamp, "scores": table.scores})
    print(table.to_markdown(), end="")


def cmd_export_plots(args):
    from . import plots
    models, meta = _load_models(args.checkpoint)
    ds = _load_dataset(args.dataset)
    _check_lineage(meta, ds, args.force)
    model = _single_model(models, args.checkpoint)
    cfg = _cfg_from_meta(meta, args)
    out_dir = Path(args.out) if args.out else Path(cfg.out_dir) / "plots"
    out_dir.mkdir(parents=True, exist_ok=True)
    stamp = _stamp(cfg, "export-plots", data_hash=meta.get("data_hash"))
    cycles = tasks.held_out_cycles(ds)
    if not cycles:
        raise CLIError("dataset has no complete held-out swing", EXIT_MISMATCH)
    rows = cycles[min(args.swing, len(cycles) - 1)]
    swing = rows[:, T_BLOCK]
    written = []

    # reconstruction of one held-out swing under every mask pattern
    outputs = {p.name.lower(): tasks.reconstruct_rows(model, apply_mask(rows, p)) for p in MaskPattern}
    for name, out in outputs.items():
        table = np.hstack([rows, out.mean, out.variance])
        header = ([f"true_{c}" for c in SAMPLE_COLUMNS] + [f"mean_{c}" for c in SAMPLE_COLUMNS]
                  + [f"var_{c}" for c in SAMPLE_COLUMNS])
        p = out_dir / f"recon_{name}.csv"
        _write_csv(p, table, header, stamp)
        written.append(p)
    dims = [0, 1, 8, 9, 16, 20]
    written.append(plots.plot_reconstruction(out_dir / "reconstruction.png", rows,
                                             {k: outputs[k] for k in ("complete", "vision_only")},
                                             dims, [SAMPLE_COLUMNS[d] for d in dims]))

    horizon = min(args.horizon, len(swing) - 3)
    ro = tasks.swing_rollout(model, swing, horizon, 2)
    k = np.arange(1, ro.horizon + 1)[:, None]
    _write_csv(out_dir / "rollout.csv", np.hstack([k, ro.means, ro.truth]),
               TRAJ_COLUMNS + [f"true_{c}" for c in TRAJ_COLUMNS[1:]], stamp)
    written.append(plots.plot_rollout(out_dir / "rollout.png", ro))

    if "normalization_table" in meta:
        norm = Normalization.from_dict(meta["normalization_table"])
        runs = {"model": tasks.imitate_swing(model, swing, cfg.arm, norm, "model"),
                "ik_oracle": tasks.imitate_swing(model, swing, cfg.arm, norm, "oracle")}
        ref = swing[1:, tasks.BLOCK["v"]]
        kk = np.arange(1, len(ref) + 1)[:, None]
        _write_csv(out_dir / "imitation.csv",
                   np.hstack([kk, ref, runs["model"].executed, runs["ik_oracle"].executed]),
                   ["k"] + [f"{w}_{c}" for w in ("ref", "model", "oracle") for c in plots.V_LABELS], stamp)
        written.append(plots.plot_tracking(out_dir / "imitation.png", ref, runs))

    if Path(f"{args.checkpoint}.loss.csv").exists():
        table, _ = io.read_table(f"{args.checkpoint}.loss.csv")
        history = [{"step": r[0], "total": r[1]} for r in table]
        written.append(plots.plot_loss(out_dir / "loss.png", history))
    for p in written:
        if str(p).endswith(".png"):
            print(p)


# -- parser -------------------------------------------------------------------

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML run config (flags override it)")
    common.add_argument("--out-dir", dest="out_dir", help="default output directory")
    common.add_argument("--out", help="output file (or directory for compare/export-plots)")

    parser = argparse.ArgumentParser(prog="mmvae", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("babble", parents=[common], help="generate a motor-babbling trace")
    p.add_argument("--rows", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_babble)

    p = sub.add_parser("dataset", parents=[common], help="augment and split a trace")
    p.add_argument("--trace", required=True)
    p.add_argument("--split-ratio", dest="split_ratio", type=float)
    p.add_argument("--split-seed", dest="split_seed", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_dataset)

    def training_flags(p):
        p.add_argument("--seed", dest="train_seed", type=int, help="training seed")
        p.add_argument("--steps", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--beta", type=float)
        p.add_argument("--nll-beta", dest="nll_beta", type=float,
                       help="variance weighting of the NLL (0 = plain Gaussian NLL)")
        p.add_argument("--paper-scale", action="store_true", help="80000 steps, batch 1000, lr 5e-5")

    p = sub.add_parser("train", parents=[common], help="train one model")
    p.add_argument("--dataset", required=True)
    p.add_argument("--model", choices=METHODS, default="mmvae")
    p.add_argument("--dropout", type=float, default=0.3, help="zero-dropout probability (vanilla)")
    p.add_argument("--log-every", dest="log_every", type=int, default=100)
    training_flags(p)
    p.set_defaults(func=cmd_train)

    def scored(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--checkpoint", required=True)
        p.add_argument("--dataset", required=True)
        p.add_argument("--force", action="store_true", help="accept mismatched data hashes")
        p.set_defaults(func=func)
        return p

    p = scored("eval", cmd_eval, "reconstruction MSE%% under a mask pattern")
    p.add_argument("--pattern", choices=PATTERN_CHOICES, default="complete")
    scored("predict", cmd_predict, "single-step prediction on the test samples")
    p = scored("rollout", cmd_rollout, "iterated prediction along a held-out swing")
    p.add_argument("--horizon", type=int, default=20)
    p.add_argument("--start", type=int, default=2)
    p.add_argument("--swing", type=int, default=0)
    p = scored("export-plots", cmd_export_plots, "CSV trajectory dumps and PNG figures")
    p.add_argument("--horizon", type=int, default=50)
    p.add_argument("--swing", type=int, default=0)

    p = sub.add_parser("imitate", parents=[common], help="closed-loop imitation of a reference trace")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--reference", required=True, help="trace file whose vision path is imitated")
    p.set_defaults(func=cmd_imitate)

    p = sub.add_parser("compare", parents=[common], help="repeated comparison of all methods")
    p.add_argument("--dataset", required=True)
    p.add_argument("--reps", type=int, default=5)
    p.add_argument("--methods", nargs="+", choices=METHODS)
    training_flags(p)
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except CLIError as exc:
        print(f"mmvae {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except FileNotFoundError as exc:
        print(f"mmvae {args.command}: no such file: {exc.filename or exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ConfigError, InputError, json.JSONDecodeError) as exc:
        print(f"mmvae {args.command}: {exc}", file=sys.stderr)
        return EXIT_MISMATCH
    except MMVAEError as exc:
        print(f"mmvae {args.command}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
