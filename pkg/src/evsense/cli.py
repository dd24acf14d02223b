"""evsense command line.

Exit codes: 0 success, 1 partial failure (sweep), 2 invalid input or usage.
Log level comes from EVSENSE_LOG (error, warn, info, debug).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import yaml

from . import event_io
from .dataset import (
    ManifestError, filter_boxes, load_manifest, partition_for, read_labels, write_labels,
)
from .detector import DetectorParams, detect, read_predictions, write_predictions
from .evaluation import METRICS, coco_metrics, read_report_csv, score_k, write_report_csv
from .pipeline import SequenceSource, labels_from_boxes, load_scene_sources, run_configs
from .representation import MS, RepresentationSpec, StackedHistogram, windows_for_sequence
from .scene_gen import SceneSpec, generate_sequence, random_scene
from .sensor_model import REGISTRY, SensorConfig, registry_get, transduce_sequence

log = logging.getLogger("evsense")

_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}


class UsageError(Exception):
    pass


# defaults applied after merging flags with an optional run-config file
DEFAULTS = {
    "seed": None, "workers": 1,
    "n_bins": 10, "window_ms": 50, "clip": 255,
    "density_threshold": 1, "min_area": 300, "dilation_radius": 6,
    "frames_per_scene": 100, "width": 320, "height": 240,
    "no_filter": False,
}


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", default=None, help="output file or directory")
    p.add_argument("--run-config", default=None, help="YAML/JSON file of option values; flags override")


def _rep_opts(p):
    p.add_argument("--n-bins", type=int, default=None)
    p.add_argument("--window-ms", type=int, default=None)
    p.add_argument("--clip", type=int, default=None)


def _det_opts(p):
    p.add_argument("--density-threshold", type=int, default=None)
    p.add_argument("--min-area", type=int, default=None)
    p.add_argument("--dilation-radius", type=int, default=None)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="evsense", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="render a scene spec to FRM1 frames + labels")
    _common(p)
    p.add_argument("spec", help="scene spec file (YAML or JSON)")

    p = sub.add_parser("simulate", help="transduce FRM1 frames to an EVT1 stream")
    _common(p)
    p.add_argument("--frames", required=False)
    p.add_argument("--config", dest="config_id", default=None, help="registry id, e.g. base, e1..e13")
    p.add_argument("--th-p", type=float, default=None)
    p.add_argument("--th-n", type=float, default=None)
    p.add_argument("--tr-ms", type=float, default=None)
    p.add_argument("--fov-deg", type=float, default=None)

    p = sub.add_parser("represent", help="build label-aligned stacked histograms (SHR1)")
    _common(p)
    _rep_opts(p)
    p.add_argument("--events")
    p.add_argument("--labels")

    p = sub.add_parser("detect", help="run the blob detector over SHR1 histograms")
    _common(p)
    _det_opts(p)
    p.add_argument("--hist")
    p.add_argument("--labels", default=None, help="labels to map windows to frame indices")
    p.add_argument("--sequence-id", default=None)

    p = sub.add_parser("eval", help="score a predictions document against labels")
    _common(p)
    p.add_argument("--pred")
    p.add_argument("--labels")
    p.add_argument("--sequence-id", default=None)
    p.add_argument("--config-id", default="custom")
    p.add_argument("--no-filter", action="store_true", default=None)

    p = sub.add_parser("sweep", help="full pipeline over every config of a partition")
    _common(p)
    _rep_opts(p)
    _det_opts(p)
    p.add_argument("--partition")
    p.add_argument("--scene", action="append", default=None, help="scene spec file (repeatable)")
    p.add_argument("--frames", action="append", default=None, help="FRM1 file (repeatable, pairs with --labels)")
    p.add_argument("--labels", action="append", default=None)
    p.add_argument("--manifest", default=None)
    p.add_argument("--random-scenes", type=int, default=None, help="generate N seeded random scenes")
    p.add_argument("--frames-per-scene", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--height", type=int, default=None)
    p.add_argument("--no-filter", action="store_true", default=None)

    p = sub.add_parser("report", help="long-format, parameter-annotated table from score CSVs")
    _common(p)
    p.add_argument("scores", nargs="+")
    return ap


def resolve(args: argparse.Namespace) -> dict:
    """Merge run-config file values under explicit flags, then fill defaults."""
    cfg = {k: v for k, v in vars(args).items() if k != "run_config"}
    if args.run_config:
        with open(args.run_config) as f:
            doc = yaml.safe_load(f) or {}
        if not isinstance(doc, dict):
            raise UsageError(f"{args.run_config}: expected a mapping")
        for k, v in doc.items():
            k = k.replace("-", "_")
            if k == "command":
                continue
            if k not in cfg:
                raise UsageError(f"{args.run_config}: unknown option {k!r} for {args.command}")
            if cfg[k] is None:
                cfg[k] = v
    for k, v in DEFAULTS.items():
        if k in cfg and cfg[k] is None:
            cfg[k] = v
    return cfg


def _echo(cfg: dict, out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "run_config.json", "w") as f:
        json.dump(cfg, f, indent=2, sort_keys=True)


def _need(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) in (None, [])]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))


def _rep_spec(cfg, W, H) -> RepresentationSpec:
    return RepresentationSpec(W, H, window_len=int(cfg["window_ms"]) * MS, n_bins=cfg["n_bins"], clip=cfg["clip"])


def _det_params(cfg) -> DetectorParams:
    return DetectorParams(cfg["density_threshold"], cfg["min_area"], cfg["dilation_radius"])


# -- commands ---------------------------------------------------------------


def cmd_gen_scene(cfg) -> int:
    _need(cfg, "out")
    with open(cfg["spec"]) as f:
        doc = yaml.safe_load(f)
    if not isinstance(doc, dict):
        raise UsageError(f"{cfg['spec']}: expected a mapping")
    spec = SceneSpec.from_dict(doc)
    if cfg["seed"] is not None:
        spec.seed = cfg["seed"]
    seq, boxes = generate_sequence(spec)
    out = Path(cfg["out"])
    _echo(cfg, out)
    event_io.save_frames(out / "frames.frm", seq)
    write_labels(out / "labels.jsonl", labels_from_boxes(seq, boxes))
    with open(out / "scene.yaml", "w") as f:
        yaml.safe_dump(spec.to_dict(), f, sort_keys=False)
    print(f"wrote {len(seq)} frames ({seq.width}x{seq.height}) to {out}")
    return 0


def _sensor_from(cfg) -> SensorConfig:
    explicit = [cfg.get(k) for k in ("th_p", "th_n", "tr_ms", "fov_deg")]
    if cfg.get("config_id"):
        if any(v is not None for v in explicit):
            raise UsageError("--config and explicit --th-p/--th-n/--tr-ms/--fov-deg are exclusive")
        return registry_get(cfg["config_id"])
    if any(v is None for v in explicit):
        raise UsageError("give --config or all of --th-p --th-n --tr-ms --fov-deg")
    return SensorConfig("custom", *explicit)


def cmd_simulate(cfg) -> int:
    _need(cfg, "frames", "out")
    sensor = _sensor_from(cfg)
    seq = event_io.load_frames(cfg["frames"], F_v=sensor.F_v)
    t0 = time.perf_counter()
    events = transduce_sequence(seq, sensor)
    dt = time.perf_counter() - t0
    out = Path(cfg["out"])
    _echo(cfg, out.parent)
    event_io.save_events(out, events, seq.width, seq.height)
    print(f"{sensor.id}: {len(events)} events, {len(events) / max(dt, 1e-9):.0f} events/s")
    return 0


def cmd_represent(cfg) -> int:
    _need(cfg, "events", "labels", "out")
    (W, H), events = event_io.load_events(cfg["events"])
    spec = _rep_spec(cfg, W, H)
    labels = [lb for lb in read_labels(cfg["labels"]) if lb.t_ns >= spec.window_len]
    hists, warnings = windows_for_sequence(events, [lb.t_ns for lb in labels], spec)
    for w in warnings:
        log.warning(w)
    out = Path(cfg["out"])
    _echo(cfg, out.parent)
    with open(out, "wb") as f:
        for h in hists:
            event_io.write_histogram(h.data, h.window_start, spec.window_len, f)
    print(f"wrote {len(hists)} histograms ({spec.channels}x{H}x{W}) to {out}")
    return 0


def cmd_detect(cfg) -> int:
    _need(cfg, "hist", "out")
    params = _det_params(cfg)
    by_end = {}
    if cfg.get("labels"):
        by_end = {lb.t_ns: lb.frame_index for lb in read_labels(cfg["labels"])}
    seq_id = cfg.get("sequence_id") or Path(cfg["hist"]).stem
    records = []
    with open(cfg["hist"], "rb") as f:
        for k, (data, start, length) in enumerate(event_io.iter_histograms(f)):
            n_bins = data.shape[0] // 2
            spec = RepresentationSpec(data.shape[2], data.shape[1], window_len=length, n_bins=n_bins)
            dets = detect(StackedHistogram(spec, start, data), params)
            records.append((seq_id, by_end.get(start + length, k), dets))
    out = Path(cfg["out"])
    _echo(cfg, out.parent)
    write_predictions(out, records)
    print(f"{sum(len(r[2]) for r in records)} detections over {len(records)} windows")
    return 0


def cmd_eval(cfg) -> int:
    _need(cfg, "pred", "labels", "out")
    preds = read_predictions(cfg["pred"])
    seq_ids = {k[0] for k in preds}
    seq_id = cfg.get("sequence_id") or (next(iter(seq_ids)) if len(seq_ids) == 1 else Path(cfg["labels"]).stem)
    gts = {}
    for lb in read_labels(cfg["labels"]):
        key = (seq_id, lb.frame_index)
        if key in preds:
            gts[key] = lb.boxes if cfg.get("no_filter") else filter_boxes(lb.boxes)
    preds = {k: v for k, v in preds.items() if k[0] == seq_id}
    metrics = coco_metrics(preds, gts)
    out = Path(cfg["out"])
    _echo(cfg, out.parent)
    with open(out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["test_set", "config_id", "metric", "value"])
        for m in METRICS:
            v = metrics[m]
            w.writerow(["single", cfg["config_id"], m, "" if v is None else repr(v)])
    print(_metric_line(cfg["config_id"], metrics))
    return 0


def _metric_line(name, metrics) -> str:
    return f"{name:>6}  " + "  ".join(
        f"{m}={'n/a' if metrics[m] is None else format(metrics[m], '.4f')}" for m in METRICS
    )


def _sweep_sources(cfg) -> list[SequenceSource]:
    sources = []
    for p in cfg.get("scene") or []:
        sources.extend(load_scene_sources([p]))
    frames, labels = cfg.get("frames") or [], cfg.get("labels") or []
    if len(frames) != len(labels):
        raise UsageError("each --frames needs a matching --labels")
    for fp, lp in zip(frames, labels):
        for p in (fp, lp):
            if not Path(p).exists():
                raise FileNotFoundError(p)
        sources.append(SequenceSource(Path(fp).stem, frames_path=Path(fp), labels_path=Path(lp)))
    if cfg.get("manifest"):
        man = load_manifest(cfg["manifest"], check_paths=False)
        for s in man.sequences:
            fp, lp = man.resolve(s.frames), man.resolve(s.labels)
            for p in (fp, lp):
                if not p.exists():
                    raise FileNotFoundError(str(p))
            sources.append(SequenceSource(s.sequence_id, frames_path=fp, labels_path=lp))
    if cfg.get("random_scenes"):
        seed = cfg["seed"] or 0
        for k in range(cfg["random_scenes"]):
            spec = random_scene(seed + k, W=cfg["width"], H=cfg["height"], n_frames=cfg["frames_per_scene"])
            sources.append(SequenceSource(f"scene{seed + k:04d}", scene=spec))
    if not sources:
        raise UsageError("sweep needs --scene, --frames/--labels, --manifest or --random-scenes")
    ids = [s.sequence_id for s in sources]
    if len(set(ids)) != len(ids):
        raise UsageError("duplicate sequence ids among inputs")
    return sources


def cmd_sweep(cfg) -> int:
    _need(cfg, "partition", "out")
    part = partition_for(cfg["partition"])
    sources = _sweep_sources(cfg)
    out = Path(cfg["out"])
    _echo(cfg, out)
    configs = [registry_get(c) for c in part.config_ids]
    results = run_configs(
        configs, sources, out, workers=cfg["workers"],
        n_bins=cfg["n_bins"], window_len=int(cfg["window_ms"]) * MS, clip=cfg["clip"],
        det=_det_params(cfg), filter_gt=not cfg.get("no_filter"),
    )
    failed = [r for r in results if "error" in r]
    ok = {r["config_id"]: r["metrics"] for r in results if "error" not in r}
    print(f"{'config':>6}  status")
    for r in results:
        print(f"{r['config_id']:>6}  {'FAILED ' + r['error'] if 'error' in r else 'ok'}")
    if failed:
        return 1
    rep = score_k(ok, part)
    write_report_csv(out / "scores.csv", [rep])
    _write_long(out / "scores_long.csv", read_report_csv(out / "scores.csv"))
    with open(out / "summary.json", "w") as f:
        json.dump({"test_set": part.name, "mean": rep.mean, "std": rep.std,
                   "sample_std": rep.sample_std, "per_config": rep.per_config,
                   "events": {r["config_id"]: r["events"] for r in results}}, f, indent=2, sort_keys=True)
    for cid, m in ok.items():
        print(_metric_line(cid, m))
    print(_metric_line("mean", rep.mean))
    return 0


def _write_long(path, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["test_set", "config_id", "th_p", "th_n", "T_r_ms", "F_v_deg", "metric", "value"])
        for r in rows:
            c = REGISTRY.get(r["config_id"])
            params = list(c.params()) if c else ["", "", "", ""]
            w.writerow([r["test_set"], r["config_id"], *params, r["metric"],
                        "" if r["value"] is None else repr(r["value"])])


def cmd_report(cfg) -> int:
    _need(cfg, "out")
    rows = []
    for p in cfg["scores"]:
        rows.extend(read_report_csv(p))
    out = Path(cfg["out"])
    _echo(cfg, out)
    _write_long(out / "report.csv", rows)
    summary = {}
    for r in rows:
        if r["config_id"] == "mean":
            summary.setdefault(r["test_set"], {})[r["metric"]] = r["value"]
    with open(out / "summary.json", "w") as f:
        json.dump(summary, f, indent=2, sort_keys=True)
    for ts, vals in summary.items():
        print(_metric_line(ts, {m: vals.get(m) for m in METRICS}))
    return 0


COMMANDS = {
    "gen-scene": cmd_gen_scene, "simulate": cmd_simulate, "represent": cmd_represent,
    "detect": cmd_detect, "eval": cmd_eval, "sweep": cmd_sweep, "report": cmd_report,
}


def main(argv=None) -> int:
    level = os.environ.get("EVSENSE_LOG", "warn").lower()
    logging.basicConfig(level=_LEVELS.get(level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve(args)
        return COMMANDS[args.command](cfg)
    except (UsageError, ValueError, KeyError, FileNotFoundError, ManifestError, yaml.YAMLError) as e:
        msg = e.args[0] if isinstance(e, KeyError) and e.args else e
        print(f"evsense {args.command}: error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
