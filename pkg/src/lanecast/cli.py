"""Command-line entry point: ``lanecast <subcommand> ...``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import data, evaluation, persistence, synth
from .config import CorpusConfig, RunConfig, load_config
from .dataset import RawSamples, collect_samples
from .errors import LanecastError
from .network import count_parameters, predict
from .neighborhood import CLASS_NAMES, label_maneuvers, raw_offsets

log = logging.getLogger("lanecast")

TRAJ_FILE = "trajectories.csv"
WINDOWS_FILE = "windows.csv"
CLASSIFIER_FILE = "classifier.stcp"
REGRESSOR_FILE = "regressor.stcp"
META_FILE = "meta.json"
SPLIT_NAMES = ("train", "val", "test")


# ---------------------------------------------------------------- helpers

def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _read_records(args):
    return data.parse_trajectory_file(args.trajectories, getattr(args, "format", "canonical"))


def write_windows(windows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vehicle_id", "t0_frame"])
        w.writerows(windows)


def read_windows(path) -> list[tuple[int, int]]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"window list not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        return [(int(r["vehicle_id"]), int(r["t0_frame"])) for r in csv.DictReader(fh)]


def _windows(args, records, cfg: RunConfig):
    """Windows named in ``--windows``, else every ``stride`` frames along each track."""
    if getattr(args, "windows", None):
        tracks = data.group_tracks(records)
        return [data.window_at(tracks, vid, t0) for vid, t0 in read_windows(args.windows)]
    return data.extract_windows(records, stride=cfg.stride)


def _samples(args, records, cfg: RunConfig) -> RawSamples:
    wins = _windows(args, records, cfg)
    if not wins:
        raise ValueError(f"{args.trajectories}: no complete {data.HISTORY + data.HORIZON}-frame windows")
    return collect_samples(wins, records=records, side_gate=cfg.side_gate)


def _load_models(model_dir) -> evaluation.TrainedModels:
    model_dir = Path(model_dir)
    paths = [model_dir / CLASSIFIER_FILE, model_dir / REGRESSOR_FILE]
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(f"model file not found: {p}")
    clf, norm_c = persistence.load_model(paths[0])
    reg, norm_r = persistence.load_model(paths[1])
    if norm_c != norm_r:
        raise LanecastError(f"{paths[0]} and {paths[1]} were trained with different normalizers")
    meta_path = model_dir / META_FILE
    meta = json.loads(meta_path.read_text(encoding="utf-8")) if meta_path.exists() else {}
    spec = evaluation.AblationSpec(meta.get("variant", "full"), int(meta.get("variant_seed", 0)))
    pool = np.asarray(meta["maneuver_pool"], dtype=np.int64) if meta.get("maneuver_pool") else None
    return evaluation.TrainedModels(clf, reg, norm_c, spec, pool)


def _save_models(models: evaluation.TrainedModels, out: Path, cfg: RunConfig) -> None:
    persistence.save_model(models.classifier, models.normalizer, out / CLASSIFIER_FILE)
    persistence.save_model(models.regressor, models.normalizer, out / REGRESSOR_FILE)
    meta = {
        "variant": models.spec.variant,
        "variant_seed": models.spec.seed,
        "fingerprint": models.fingerprint(),
        "side_gate": cfg.side_gate,
        "best_epochs": [h.best_epoch for h in models.histories] if models.histories else None,
    }
    if models.spec.variant == "sampled_maneuver":
        meta["maneuver_pool"] = models.maneuver_pool.tolist()
    (out / META_FILE).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _split(samples: RawSamples, cfg: RunConfig, out: Path | None):
    ids = sorted(set(int(i) for i in samples.target_ids))
    parts = data.split_by_vehicle(ids, cfg.split, seed=cfg.seed)
    if out is not None:
        (out / "splits").mkdir(exist_ok=True)
        for name, part in zip(SPLIT_NAMES, parts):
            data.write_id_list(part, out / "splits" / f"{name}_ids.txt")
    return [samples.select_vehicles(p) for p in parts]


# ---------------------------------------------------------------- subcommands

def cmd_synth(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    if args.scenario or cfg.scenario is not None:
        spec = synth.load_scenario(args.scenario) if args.scenario else synth.ScenarioSpec.from_dict(cfg.scenario)
        records = synth.generate(spec, seed=cfg.seed)
        data.write_trajectory_file(records, out / TRAJ_FILE)
        print(f"wrote {len(records)} records of {len(spec.vehicles)} vehicles to {out / TRAJ_FILE}")
        return 0
    corpus_cfg = cfg.corpus or CorpusConfig()
    n = args.windows if args.windows is not None else corpus_cfg.n_windows
    corpus = synth.benchmark_corpus(n, corpus_cfg.mix, seed=cfg.seed, noise=corpus_cfg.noise)
    data.write_trajectory_file(corpus.records, out / TRAJ_FILE)
    write_windows(corpus.windows, out / WINDOWS_FILE)
    print(f"wrote {len(corpus.records)} records and {len(corpus.windows)} windows to {out}")
    return 0


def cmd_ingest(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    options = {"source_hz": args.source_hz} if args.format == "ngsim" and args.source_hz else {}
    records = data.parse_trajectory_file(args.input, args.format, **options)
    data.write_trajectory_file(records, out / TRAJ_FILE)
    ids = data.vehicle_ids(records)
    (out / "splits").mkdir(exist_ok=True)
    for name, part in zip(SPLIT_NAMES, data.split_by_vehicle(ids, cfg.split, seed=cfg.seed)):
        data.write_id_list(part, out / "splits" / f"{name}_ids.txt")
    print(f"ingested {len(records)} records of {len(ids)} vehicles into {out / TRAJ_FILE}")
    return 0


def cmd_label(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    records = _read_records(args)
    wins = _windows(args, records, cfg)
    path = out / "labels.csv"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vehicle_id", "t0_frame"] + [f"m{k}" for k in range(1, 6)]
                   + [f"{ax}{k}" for k in range(1, 6) for ax in ("dx", "dy")])
        for win in wins:
            offs = raw_offsets(win).ravel()
            w.writerow([win.target_id, win.t0_frame, *label_maneuvers(win).tolist(), *(repr(float(v)) for v in offs)])
    print(f"labelled {len(wins)} windows into {path}")
    return 0


def cmd_train(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    records = _read_records(args)
    samples = _samples(args, records, cfg)
    train, val, test = _split(samples, cfg, out)
    spec = evaluation.AblationSpec(cfg.variant, cfg.seed)
    models = evaluation.train_models(train, cfg.train, val, spec, cfg.normalize)
    _save_models(models, out, cfg)
    h_c, h_r = models.histories
    print(f"classifier: best epoch {h_c.best_epoch}, regressor: best epoch {h_r.best_epoch}; models in {out}")
    if len(test):
        report = evaluation.evaluate(models, test)
        print(report.summary())
    return 0


def cmd_predict(args) -> int:
    cfg = _config(args)
    models = _load_models(args.models)
    records = _read_records(args)
    tracks = data.group_tracks(records)
    if args.vehicle not in tracks:
        raise KeyError(f"vehicle {args.vehicle} not in {args.trajectories}")
    by_frame = {r.frame: r for r in tracks[args.vehicle]}
    frames = range(args.frame - data.HISTORY + 1, args.frame + 1)
    missing = [f for f in frames if f not in by_frame]
    if missing:
        raise ValueError(f"vehicle {args.vehicle} lacks history frame {missing[0]}")
    window = data.SampleWindow(args.vehicle, args.frame, tuple(by_frame[f] for f in frames), ())
    x = evaluation.single_input(window, data.build_scenes(records), models, cfg.side_gate)
    pred = predict(x, models.classifier, models.regressor, models.normalizer, origin=window.origin)
    result = {
        "vehicle_id": args.vehicle,
        "t0_frame": args.frame,
        "maneuvers": [CLASS_NAMES[int(m)] for m in pred.maneuvers],
        "probabilities": np.round(pred.probabilities, 6).tolist(),
        "positions": [[float(a), float(b)] for a, b in pred.positions],
        "elapsed_ms": pred.elapsed_s * 1e3,
    }
    text = json.dumps(result, indent=2)
    if args.out:
        out = _out_dir(args)
        (out / "prediction.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def _test_samples(args, samples: RawSamples, model_dir: Path) -> RawSamples:
    ids_path = Path(args.test_ids) if args.test_ids else model_dir / "splits" / "test_ids.txt"
    if args.test_ids or ids_path.exists():
        return samples.select_vehicles(data.read_id_list(ids_path))
    return samples


def cmd_eval(args) -> int:
    cfg = _config(args)
    models = _load_models(args.models)
    records = _read_records(args)
    samples = _samples(args, records, cfg)
    test = _test_samples(args, samples, Path(args.models))
    report = evaluation.evaluate(models, test)
    out = _out_dir(args)
    evaluation.export_report(report, out / "report.csv", "delimited")
    evaluation.export_report(report, out / "report.json", "structured")
    print(report.summary())
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    out = _out_dir(args)
    records = _read_records(args)
    samples = _samples(args, records, cfg)
    train, val, test = _split(samples, cfg, out)
    variants = args.variants or list(evaluation.VARIANTS)
    rows = []
    for v in variants:
        spec = evaluation.AblationSpec(v, cfg.seed)
        report, models = evaluation.run_ablation(spec, train, test, cfg.train, val)
        evaluation.export_report(report, out / f"{v}.json", "structured")
        print(report.summary(), f"params={count_parameters(models.classifier, models.regressor)}")
        rows += [[v, k + 1, repr(float(report.rmse[k])), repr(float(report.accuracy[k])), report.n]
                 for k in range(len(report.rmse))]
    with open(out / "ablation.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["variant", "horizon_s", "rmse_m", "acc", "n"])
        w.writerows(rows)
    return 0


def cmd_edit_scene(args) -> int:
    out = _out_dir(args)
    records = _read_records(args)
    for vid in args.remove:
        records = synth.edit_scene(records, vid)
    data.write_trajectory_file(records, out / TRAJ_FILE)
    print(f"removed vehicle(s) {', '.join(map(str, args.remove))}; wrote {out / TRAJ_FILE}")
    return 0


def cmd_inspect(args) -> int:
    path = Path(args.path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == persistence.MAGIC:
        params, norm = persistence.load_model(path)
        info = {
            "module": params.kind,
            "parameters": count_parameters(params),
            "architecture": params.arch.to_dict(),
            "shapes": [list(s) for s in params.arch.trunk.shapes()],
            "receptive_fields": [list(r) for r in params.arch.trunk.receptive_fields()],
            "normalizer": {k: getattr(norm, k).tolist() for k in ("in_mean", "in_std", "out_mean", "out_std")},
            "normalizer_digest": norm.digest(),
        }
    else:
        records = data.parse_trajectory_file(path, args.format)
        frames = [r.frame for r in records]
        info = {
            "records": len(records),
            "vehicles": len(data.vehicle_ids(records)),
            "frames": [min(frames), max(frames)] if frames else None,
            "lanes": sorted({r.lane_id for r in records}),
            "windows": len(data.extract_windows(records)),
        }
    print(json.dumps(info, indent=2))
    return 0


# ---------------------------------------------------------------- parser

def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # Subcommands repeat the global flags without defaults so that a flag given
    # before the subcommand is not reset by the subparser.
    g = argparse.ArgumentParser(add_help=False)
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    g.add_argument("--config", default=d(None), help="YAML run configuration")
    g.add_argument("--seed", type=int, default=d(None), help="overrides the configured seed")
    g.add_argument("--out", default=d(None),
                   help="output directory (default: current; predict prints only unless given)")
    g.add_argument("-v", "--verbose", action="store_true", default=d(False), help="log training progress")
    return g


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    p = argparse.ArgumentParser(
        prog="lanecast", parents=[_global_flags(suppress=False)],
        description="Maneuver classification and trajectory regression from semantic neighborhoods.",
    )
    sub = p.add_subparsers(dest="command", metavar="COMMAND", required=True)

    def add(name, func, help_):
        sp = sub.add_parser(name, parents=[common], help=help_, description=help_)
        sp.set_defaults(func=func)
        return sp

    def traj(sp):
        sp.add_argument("trajectories", help="trajectory table")
        sp.add_argument("--format", choices=data.FORMATS, default="canonical")

    sp = add("synth", cmd_synth, "generate a synthetic scenario or benchmark corpus")
    sp.add_argument("--scenario", default=None, help="scenario YAML (else the config, else a corpus)")
    sp.add_argument("--windows", type=int, default=None, help="number of corpus windows")

    sp = add("ingest", cmd_ingest, "convert a recorded dataset to the canonical table and split it by vehicle")
    sp.add_argument("input")
    sp.add_argument("--format", choices=data.FORMATS, default="canonical")
    sp.add_argument("--source-hz", type=int, default=None, help="native rate of NGSIM input")

    sp = add("label", cmd_label, "write maneuver labels and target offsets for every window")
    traj(sp)
    sp.add_argument("--windows", default=None, help="CSV of vehicle_id,t0_frame")

    sp = add("train", cmd_train, "train the classifier and the regressor")
    traj(sp)
    sp.add_argument("--windows", default=None, help="CSV of vehicle_id,t0_frame")

    sp = add("predict", cmd_predict, "predict maneuvers and positions for one vehicle")
    traj(sp)
    sp.add_argument("--models", required=True, help="directory holding the model files")
    sp.add_argument("--vehicle", type=int, required=True)
    sp.add_argument("--frame", type=int, required=True, help="newest history frame (t0)")

    sp = add("eval", cmd_eval, "evaluate trained models on held-out windows")
    traj(sp)
    sp.add_argument("--models", default=".", help="directory holding the model files")
    sp.add_argument("--windows", default=None, help="CSV of vehicle_id,t0_frame")
    sp.add_argument("--test-ids", default=None, help="vehicle id list (default: MODELS/splits/test_ids.txt if present)")

    sp = add("ablate", cmd_ablate, "retrain and evaluate ablation variants")
    traj(sp)
    sp.add_argument("--windows", default=None, help="CSV of vehicle_id,t0_frame")
    sp.add_argument("--variants", nargs="+", choices=evaluation.VARIANTS, default=None)

    sp = add("edit-scene", cmd_edit_scene, "remove vehicles from a scene")
    traj(sp)
    sp.add_argument("--remove", type=int, nargs="+", required=True, help="vehicle ids to delete")

    sp = add("inspect", cmd_inspect, "describe a model file or a trajectory table")
    sp.add_argument("path")
    sp.add_argument("--format", choices=data.FORMATS, default="canonical")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (LanecastError, ValueError, KeyError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"lanecast {args.command}: error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
