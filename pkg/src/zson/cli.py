"""``zson`` command line: every pipeline stage as a subcommand, every artifact on disk.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.
Errors are printed to stderr as single lines prefixed ``error:``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from collections.abc import Sequence
from contextlib import contextmanager
from pathlib import Path

from . import __version__
from .embedding import EncoderParams, UnknownConceptError
from .episodes import (
    DatasetFormatError,
    EpisodeDataset,
    EpisodeGenerationError,
    imagenav_for_worlds,
    load_dataset,
    objectnav_for_worlds,
    save_dataset,
)
from .evaluation import (
    LeakError,
    ablation_csv,
    ablation_summary,
    check_leak,
    diversity_ablation,
    evaluate,
    trend_holds,
    zero_shot_protocol,
)
from .neural.checkpoint import CheckpointError, load_checkpoint
from .trainer import ConfigError, TrainerConfig, TrainingDivergedError, train
from .worldsim import (
    WorldGenerationError,
    WorldGenParams,
    check_world,
    generate_world,
    load_world,
    save_world,
)

MANIFEST_SCHEMA_VERSION = 1
LOCK_NAME = ".zson.lock"
MANIFEST_NAME = "manifest.json"
ENCODER_NAME = "encoder.json"

log = logging.getLogger("zson")


class UsageError(Exception):
    """Bad flags or configuration: exit code 1."""


class RuntimeFailure(Exception):
    """The command ran but could not complete: exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --------------------------------------------------------------------------
# helpers


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _json_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode()).hexdigest()


def write_manifest(out: Path, command: str, args: dict, artifacts: Sequence[Path], **extra) -> Path:
    """Record the inputs and a hash of every output file; no timestamps, so reruns are byte-identical."""
    arts = {}
    for p in sorted(artifacts, key=lambda p: str(p)):
        rel = os.path.relpath(p, out)
        arts[rel] = sha256_file(p)
    m = {"v": MANIFEST_SCHEMA_VERSION, "tool": "zson", "version": __version__, "command": command,
         "args": args, "artifacts": arts, **extra}
    path = out / MANIFEST_NAME
    path.write_text(json.dumps(m, sort_keys=True, indent=1) + "\n")
    return path


def verify_manifest(out) -> list[str]:
    """Problems with a manifest's artifact list (missing files or hash mismatches)."""
    out = Path(out)
    m = json.loads((out / MANIFEST_NAME).read_text())
    problems = []
    for rel, h in m["artifacts"].items():
        p = out / rel
        if not p.exists():
            problems.append(f"{rel}: missing")
        elif sha256_file(p) != h:
            problems.append(f"{rel}: hash mismatch")
    return problems


@contextmanager
def out_dir_lock(out: Path):
    out.mkdir(parents=True, exist_ok=True)
    lock = out / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RuntimeFailure(f"{out} is locked by another zson process (remove {lock} if stale)") from None
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def _prepare_out(out: Path, force: bool) -> None:
    if out.exists() and not out.is_dir():
        raise UsageError(f"{out} exists and is not a directory")
    if out.exists() and any(p.name != LOCK_NAME for p in out.iterdir()) and not force:
        raise UsageError(f"output directory {out} is not empty (use --force to overwrite)")


def _read_json(path, what: str):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    try:
        return json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"{what} {p}: invalid JSON: {e}") from None


def load_worlds(path) -> list:
    """All world files in a directory (sorted by id) or a single world file."""
    p = Path(path)
    if not p.exists():
        raise UsageError(f"worlds not found: {p}")
    files = [p] if p.is_file() else sorted(f for f in p.glob("*.json")
                                           if f.name not in (MANIFEST_NAME, ENCODER_NAME))
    if not files:
        raise UsageError(f"no world files in {p}")
    worlds = []
    for f in files:
        try:
            worlds.append(load_world(f))
        except (KeyError, ValueError, TypeError) as e:
            raise RuntimeFailure(f"{f}: malformed world file: {e}") from None
    return sorted(worlds, key=lambda w: w.id)


def load_encoder(worlds_path, explicit=None) -> EncoderParams:
    p = Path(explicit) if explicit else Path(worlds_path) / ENCODER_NAME
    if not p.exists():
        raise UsageError(f"encoder parameters not found: {p} (pass --encoder)")
    try:
        return EncoderParams.load(p)
    except (KeyError, ValueError) as e:
        raise UsageError(f"{p}: invalid encoder parameters: {e}") from None


def parse_trainer_config(path) -> TrainerConfig:
    if path is None:
        return TrainerConfig()
    d = _read_json(path, "config")
    if not isinstance(d, dict):
        raise UsageError(f"config {path}: expected a JSON object")
    d = dict(d)
    v = d.pop("v", 1)
    if v != 1:
        raise UsageError(f"config {path}: schema version mismatch: expected 1, found {v}")
    try:
        return TrainerConfig.from_dict(d)
    except ConfigError as e:
        raise UsageError(f"config {path}: {e}") from None


def _csv_list(s: str | None, conv=str) -> list | None:
    if s is None:
        return None
    try:
        return [conv(x.strip()) for x in s.split(",") if x.strip()]
    except ValueError as e:
        raise UsageError(f"could not parse list {s!r}: {e}") from None


def _categories(s: str | None):
    """``sink,tv`` -> ["sink", "tv"]; ``sink+kitchen,sink+bathroom`` -> compound concept sets."""
    items = _csv_list(s)
    if items is None:
        return None
    return [tuple(sorted(x.split("+"))) if "+" in x else x for x in items]


def compound_goals(world) -> list[tuple[str, str]]:
    """Every (object, room) pairing present in ``world``."""
    return sorted({tuple(sorted((o.object_concept, o.room_concept))) for o in world.objects})


def _positive(s: str) -> int:
    try:
        v = int(s)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {s!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


# --------------------------------------------------------------------------
# subcommands


def cmd_gen_worlds(a) -> int:
    out = Path(a.out)
    _prepare_out(out, a.force)
    params = WorldGenParams()
    if a.params:
        try:
            params = WorldGenParams.from_dict(_read_json(a.params, "world-gen params"))
        except (ValueError, TypeError) as e:
            raise UsageError(f"world-gen params {a.params}: {e}") from None
    try:
        enc = EncoderParams.create(params.vocab, a.dim, a.sigma, a.encoder_seed)
    except ValueError as e:
        raise UsageError(str(e)) from None
    with out_dir_lock(out):
        for old in out.glob("*.json"):
            old.unlink()
        arts = []
        for i in range(a.n):
            w = generate_world(a.seed + i, params)
            p = out / f"{w.id}.json"
            save_world(w, p)
            arts.append(p)
        ep = out / ENCODER_NAME
        enc.save(ep)
        arts.append(ep)
        write_manifest(out, "gen-worlds", {"n": a.n, "seed": a.seed, "dim": a.dim, "sigma": a.sigma,
                                           "encoder_seed": a.encoder_seed},
                       arts, params=params.to_dict(), params_hash=_json_hash(params.to_dict()),
                       world_ids=[p.stem for p in arts[:-1]], encoder_digest=enc.digest())
    print(f"wrote {a.n} worlds to {out}")
    return 0


def cmd_audit(a) -> int:
    worlds = load_worlds(a.worlds)
    bad = 0
    for w in worlds:
        problems = check_world(w)
        for p in problems:
            print(f"error: {w.id}: {p}", file=sys.stderr)
        bad += bool(problems)
    print(f"audited {len(worlds)} worlds: {len(worlds) - bad} valid, {bad} invalid")
    if bad:
        raise RuntimeFailure(f"{bad} of {len(worlds)} worlds violate invariants")
    return 0


def cmd_gen_episodes(a) -> int:
    worlds = load_worlds(a.worlds)
    if a.world_ids:
        keep = set(_csv_list(a.world_ids))
        worlds = [w for w in worlds if w.id in keep]
        if not worlds:
            raise UsageError(f"none of the requested world ids are in {a.worlds}")
    params = load_encoder(a.worlds, a.encoder)
    if a.sigma is not None:
        params = params.with_noise(a.sigma)
    out = Path(a.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    try:
        if a.kind == "image":
            if a.per_tier is None:
                raise UsageError("--per-tier is required for --kind image")
            ds = imagenav_for_worlds(worlds, a.per_tier, params, a.seed, tiers=_csv_list(a.tiers))
        else:
            if a.n is None:
                raise UsageError(f"--n is required for --kind {a.kind}")
            cats = _categories(a.categories)
            for c in cats or []:
                for name in ([c] if isinstance(c, str) else c):
                    params.vocab.index(name)
            if a.kind == "compound":
                if cats is None:
                    parts = [objectnav_for_worlds([w], a.n, params, a.seed, compound_goals(w)) for w in worlds
                             if w.objects]
                    ds = EpisodeDataset.concat(parts)
                else:
                    if any(isinstance(c, str) for c in cats):
                        raise UsageError("compound categories must be written as object+room")
                    ds = objectnav_for_worlds(worlds, a.n, params, a.seed, cats)
            else:
                ds = objectnav_for_worlds(worlds, a.n, params, a.seed, cats)
    except UnknownConceptError as e:
        raise UsageError(str(e)) from None
    except ValueError as e:
        if isinstance(e, DatasetFormatError):
            raise
        raise UsageError(str(e)) from None
    ds.meta.update({"world_ids": ds.world_ids, "generator": a.kind})
    save_dataset(ds, out)
    print(f"wrote {len(ds.episodes)} episodes to {out}")
    return 0


def _load_dataset(path) -> EpisodeDataset:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"dataset not found: {p}")
    return load_dataset(p)


def cmd_train(a) -> int:
    cfg = parse_trainer_config(a.config)
    if a.total_steps is not None:
        cfg = TrainerConfig.from_dict({**cfg.to_dict(), "total_steps": a.total_steps,
                                       "reward": cfg.reward.to_dict(),
                                       "kinematics": _kin_dict(cfg.kinematics)})
    ds = _load_dataset(a.dataset)
    worlds = load_worlds(a.worlds)
    val = _load_dataset(a.val_dataset) if a.val_dataset else None
    out = Path(a.out)
    if a.resume is None:
        _prepare_out(out, a.force)
    with out_dir_lock(out):
        if a.resume is None:
            for old in list(out.glob("*.ckpt")) + [out / "metrics.csv"]:
                old.unlink(missing_ok=True)
        res = train(worlds, ds, cfg, out, val_dataset=val, resume=a.resume,
                    extra_meta={"dataset_sha256": sha256_file(a.dataset)})
        (out / "config.json").write_text(json.dumps({"v": 1, **cfg.to_dict()}, sort_keys=True, indent=1) + "\n")
        arts = sorted(out.glob("*.ckpt")) + [out / "metrics.csv", out / "config.json"]
        extra = {"config_hash": cfg.digest(), "seed": cfg.seed, "train_world_ids": ds.world_ids,
                 "dataset_sha256": sha256_file(a.dataset), "steps": res.steps}
        if res.best_checkpoint is not None:
            extra["validation_sr"] = res.validation
        write_manifest(out, "train", {"config": a.config, "dataset": str(a.dataset), "worlds": str(a.worlds),
                                      "resume": a.resume, "val_dataset": a.val_dataset}, arts, **extra)
    print(f"trained {res.steps} steps; {len(res.checkpoints)} checkpoints in {out}")
    return 0


def _kin_dict(k) -> dict:
    import dataclasses

    return dataclasses.asdict(k)


def _load_net(path):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"checkpoint not found: {p}")
    return load_checkpoint(p)


def _write_report(out: Path, rep, name: str, vocab_digest: str, extra: dict | None = None) -> list[Path]:
    d = rep.to_dict()
    d["vocab_digest"] = vocab_digest
    d.update(extra or {})
    pj = out / f"{name}.json"
    pj.write_text(json.dumps(d, sort_keys=True, indent=1) + "\n")
    pc = out / f"{name}.csv"
    pc.write_text(rep.to_csv())
    pt = out / f"{name}_traces.jsonl"
    pt.write_text(rep.traces_jsonl())
    return [pj, pc, pt]


def cmd_eval(a) -> int:
    net, meta = _load_net(a.checkpoint)
    ds = _load_dataset(a.dataset)
    worlds = load_worlds(a.worlds)
    out = Path(a.out)
    with out_dir_lock(out):
        check_leak(meta.get("train_world_ids", []) if ds.kinds == {"OBJECT"} else [], ds.world_ids)
        rep = evaluate(net, ds, worlds, a.seed, trials=a.trials, greedy=a.greedy)
        arts = _write_report(out, rep, "report", _json_hash(worlds[0].vocab.to_dict()))
        write_manifest(out, "eval", {"checkpoint": str(a.checkpoint), "dataset": str(a.dataset), "seed": a.seed,
                                     "trials": a.trials, "greedy": a.greedy}, arts,
                       checkpoint_sha256=sha256_file(a.checkpoint), dataset_sha256=sha256_file(a.dataset),
                       eval_world_ids=ds.world_ids)
    print(f"{rep.task}: SR {rep.sr_mean:.3f} ± {rep.sr_std:.3f}  SPL {rep.spl_mean:.3f} ± {rep.spl_std:.3f}")
    return 0


def cmd_zero_shot(a) -> int:
    net, meta = _load_net(a.checkpoint)
    held = load_worlds(a.eval_worlds)
    params = load_encoder(a.eval_worlds, a.encoder)
    out = Path(a.out)
    with out_dir_lock(out):
        res = zero_shot_protocol(net, meta.get("train_world_ids", []), held, params, _categories(a.categories),
                                 n_per_tier=a.per_tier, n_object=a.n, seed=a.seed, base_seed=a.seed,
                                 greedy=a.greedy)
        vd = _json_hash(held[0].vocab.to_dict())
        arts = _write_report(out, res.imagenav, "imagenav", vd)
        arts += _write_report(out, res.objectnav, "objectnav", vd)
        pz = out / "zero_shot.json"
        pz.write_text(json.dumps(res.to_dict(), sort_keys=True, indent=1) + "\n")
        arts.append(pz)
        write_manifest(out, "zero-shot", {"checkpoint": str(a.checkpoint), "eval_worlds": str(a.eval_worlds),
                                          "categories": a.categories, "seed": a.seed}, arts,
                       checkpoint_sha256=sha256_file(a.checkpoint), eval_world_ids=[w.id for w in held],
                       train_world_ids=meta.get("train_world_ids", []))
    print(f"ImageNav SR {res.imagenav.sr_mean:.3f}  ObjectNav SR {res.objectnav.sr_mean:.3f}  "
          f"gap {res.transfer_gap:.3f}")
    return 0


def cmd_ablate(a) -> int:
    cfg = parse_trainer_config(a.config)
    counts = _csv_list(a.world_counts, int)
    if not counts or any(c < 1 for c in counts):
        raise UsageError("--world-counts needs positive integers, e.g. 2,16")
    seeds = _csv_list(a.seeds, int)
    pool = load_worlds(a.worlds)
    held = load_worlds(a.eval_worlds)
    params = load_encoder(a.worlds, a.encoder)
    out = Path(a.out)
    with out_dir_lock(out):
        def progress(row):
            log.info("n_worlds=%d seed=%d sr=%.3f spl=%.3f", row["n_worlds"], row["seed"], row["sr"], row["spl"])

        try:
            rows = diversity_ablation(counts, pool, held, params, cfg, seeds, n_per_tier=a.per_tier,
                                      n_object=a.n, categories=_categories(a.categories), base_seed=a.eval_seed,
                                      progress=progress)
        except ValueError as e:
            if isinstance(e, (LeakError, EpisodeGenerationError)):
                raise
            raise UsageError(str(e)) from None
        pc = out / "ablation.csv"
        pc.write_text(ablation_csv(rows))
        summary = ablation_summary(rows)
        ps = out / "ablation_summary.json"
        ps.write_text(json.dumps({"v": 1, "summary": summary, "trend_more_worlds_higher_sr": trend_holds(summary),
                                  "config_digests": sorted({r["config_digest"] for r in rows})},
                                 sort_keys=True, indent=1) + "\n")
        write_manifest(out, "ablate", {"world_counts": counts, "seeds": seeds, "config": a.config}, [pc, ps],
                       config_hash=cfg.digest(exclude=("seed",)), train_world_ids=[w.id for w in pool],
                       eval_world_ids=[w.id for w in held])
    for s in summary:
        print(f"n_worlds={s['n_worlds']}: SR {s['sr_mean']:.3f} ± {s['sr_seed_std']:.3f}  "
              f"SPL {s['spl_mean']:.3f} ± {s['spl_seed_std']:.3f}")
    print(f"trend (more worlds -> higher SR): {'yes' if trend_holds(summary) else 'no'} (reported, not gated)")
    return 0


REPORT_LONG_COLUMNS = ("run", "report", "episode_id", "trial", "success", "spl", "steps", "path_length",
                       "stop_x", "stop_y", "stop_h")


def _run_reports(run: Path) -> list[Path]:
    if run.is_file():
        return [run]
    if not run.exists():
        raise UsageError(f"run not found: {run}")
    reports = sorted(p for p in run.glob("*.json")
                     if p.name not in (MANIFEST_NAME, "zero_shot.json", "ablation_summary.json"))
    if not reports:
        raise UsageError(f"no evaluation reports in {run}")
    return reports


def cmd_report(a) -> int:
    out = Path(a.out)
    summary_rows, long_rows = [], []
    vocab = None
    for run in a.runs:
        run = Path(run)
        for rp in _run_reports(run):
            rep = _read_json(rp, "report")
            if "sr_mean" not in rep:
                raise UsageError(f"{rp}: not an evaluation report")
            vd = rep.get("vocab_digest")
            if vocab is None:
                vocab = vd
            elif vd != vocab:
                raise RuntimeFailure(f"{rp}: vocabulary differs from the other runs")
            name = rp.stem
            summary_rows.append((str(run), name, rep["task"], rep["n_episodes"], rep["trials"], rep["sr_mean"],
                                 rep["sr_std"], rep["spl_mean"], rep["spl_std"]))
            tp = rp.with_name(f"{name}_traces.jsonl")
            if not tp.exists():
                raise UsageError(f"missing trace file {tp}")
            for line in tp.read_text().splitlines():
                r = json.loads(line)
                sp = r["stop_pose"]
                long_rows.append((str(run), name, r["episode_id"], r["trial"], int(r["success"]), r["spl"],
                                  r["steps"], r["path_length"], sp["x"], sp["y"], sp["h"]))
    with out_dir_lock(out):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("run", "report", "task", "n_episodes", "trials", "sr_mean", "sr_std", "spl_mean", "spl_std"))
        w.writerows(summary_rows)
        pc = out / "comparison.csv"
        pc.write_text(buf.getvalue())
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_LONG_COLUMNS)
        w.writerows(long_rows)
        pl = out / "long.csv"
        pl.write_text(buf.getvalue())
        write_manifest(out, "report", {"runs": [str(r) for r in a.runs]}, [pc, pl])
    print(f"merged {len(summary_rows)} reports ({len(long_rows)} episode rows) into {out}")
    return 0


# --------------------------------------------------------------------------
# parser and entry point


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="zson", description="Zero-shot semantic navigation toolkit.")
    p.add_argument("--version", action="version", version=f"zson {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-worlds", help="generate procedural worlds and encoder parameters")
    g.add_argument("--n", type=_positive, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--params", help="world-gen parameter JSON")
    g.add_argument("--dim", type=_positive, default=64, help="embedding dimension")
    g.add_argument("--sigma", type=float, default=0.1, help="goal-view embedding noise")
    g.add_argument("--encoder-seed", type=int, default=0)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen_worlds)

    g = sub.add_parser("audit", help="check world invariants")
    g.add_argument("--worlds", required=True)
    g.set_defaults(func=cmd_audit)

    g = sub.add_parser("gen-episodes", help="generate an episode dataset (JSONL)")
    g.add_argument("--worlds", required=True)
    g.add_argument("--kind", choices=("image", "object", "compound"), required=True)
    g.add_argument("--per-tier", type=_positive)
    g.add_argument("--n", type=_positive)
    g.add_argument("--tiers", help="comma list of tiers (image only), default all")
    g.add_argument("--categories", help="comma list; compound goals as object+room")
    g.add_argument("--world-ids", help="restrict to these world ids")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--encoder", help="encoder parameter file (default <worlds>/encoder.json)")
    g.add_argument("--sigma", type=float, help="override goal-view noise")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_episodes)

    g = sub.add_parser("train", help="train a policy on IMAGE episodes")
    g.add_argument("--config")
    g.add_argument("--dataset", required=True)
    g.add_argument("--worlds", required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--val-dataset")
    g.add_argument("--resume")
    g.add_argument("--total-steps", type=int)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_train)

    g = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--dataset", required=True)
    g.add_argument("--worlds", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--trials", type=_positive, default=3)
    g.add_argument("--greedy", action="store_true")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_eval)

    g = sub.add_parser("zero-shot", help="paired ImageNav/ObjectNav evaluation on held-out worlds")
    g.add_argument("--checkpoint", required=True)
    g.add_argument("--eval-worlds", required=True)
    g.add_argument("--categories")
    g.add_argument("--per-tier", type=_positive, default=4)
    g.add_argument("--n", type=_positive, default=48, help="ObjectNav episodes per world")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--encoder")
    g.add_argument("--greedy", action="store_true")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_zero_shot)

    g = sub.add_parser("ablate", help="training-world diversity ablation")
    g.add_argument("--world-counts", required=True)
    g.add_argument("--config")
    g.add_argument("--worlds", required=True, help="training world pool")
    g.add_argument("--eval-worlds", required=True)
    g.add_argument("--seeds", default="0,1,2")
    g.add_argument("--per-tier", type=_positive, default=4)
    g.add_argument("--n", type=_positive, default=48)
    g.add_argument("--categories")
    g.add_argument("--eval-seed", type=int, default=0)
    g.add_argument("--encoder")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_ablate)

    g = sub.add_parser("report", help="merge evaluation runs into comparison tables")
    g.add_argument("--runs", nargs="+", required=True)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_report)
    return p


def _setup_logging() -> None:
    level = os.environ.get("ZSON_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)


def main(argv: Sequence[str] | None = None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except (RuntimeFailure, LeakError, CheckpointError, DatasetFormatError, EpisodeGenerationError,
            WorldGenerationError, TrainingDivergedError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except SystemExit as e:
        # --help / --version
        return int(e.code or 0)


if __name__ == "__main__":
    sys.exit(main())
