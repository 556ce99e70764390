"""Command-line entry point: ``evhands <subcommand> --config C --seed S --out O``.

Exit codes: 0 success, 2 validation error, 3 numeric abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import events as ev
from .collision import inter_hand_pairs, self_collisions, union_mesh
from .config import RunConfig, load_config
from .dataset import build_dataset, load_dataset, script_for, simulate_script
from .errors import NumericAbort, ValidationError
from .hand import HandParams, generate_toy_assets, load_assets, mirror_assets, pose_mesh, save_assets
from .net import load_checkpoint
from .pipeline import bench, evaluate, synthetic_stream, train
from .sim import EventSimulator, BrightnessFrame, log_intensity, read_frames, concat_streams

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERIC = 0, 2, 3
log = logging.getLogger("evhands")


def _assets(args):
    if getattr(args, "assets", None):
        d = Path(args.assets)
        return load_assets(d / "left.naf"), load_assets(d / "right.naf")
    right = generate_toy_assets(0, "right")
    return mirror_assets(right), right


def _config(args) -> RunConfig:
    return load_config(args.config).with_seed(args.seed)


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def cmd_gen_assets(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    right = generate_toy_assets(args.seed or 0, "right")
    save_assets(out / "right.naf", right)
    save_assets(out / "left.naf", mirror_assets(right))
    print(f"wrote {out / 'right.naf'} and {out / 'left.naf'}")


def cmd_gen_data(args):
    cfg = _config(args)
    al, ar = _assets(args)
    manifest = build_dataset(cfg, args.out, al, ar, force=args.force)
    for s in manifest["scripts"]:
        print(f"{s['name']}: {s['events']} events, {s['windows']} windows "
              f"({s['train']} train / {s['test']} test), GT inside frame {100 * s['gt_inside_fraction']:.1f}%")


def cmd_simulate(args):
    cfg = _config(args)
    if args.frames:
        frames = read_frames(args.frames)
        if not frames:
            raise ValidationError(f"{args.frames}: no frames listed")
        sim = EventSimulator(cfg.sim.sim_config(cfg.seed))
        parts = [sim.feed(BrightnessFrame(f.t_us, log_intensity(f.values, cfg.sim.epsilon), f.ownership))
                 for f in frames]
        if sim.frames_seen < 2:
            raise ValidationError("need at least two frames")
        stream = concat_streams(parts)
        h, w = frames[0].values.shape
        sensor = (w, h)
    else:
        al, ar = _assets(args)
        script = script_for(cfg, args.script)
        stream = simulate_script(script, al, ar, cfg, cfg.seed)
        sensor = script.camera.sensor
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    ev.write_event_stream(out, stream, sensor)
    ev.write_labels(out.with_suffix(".labels"), stream.labels)
    print(f"wrote {len(stream)} events to {out}")


def cmd_train(args):
    from .plotting import plot_eval_dir, plot_loss_csv

    cfg = _config(args)
    al, ar = _assets(args)
    ds = load_dataset(args.data)
    model = load_checkpoint(args.init) if args.init else None
    out = Path(args.out)
    res = train(cfg, ds, al, ar, out_dir=out, model=model)
    (out / "config.json").write_text(cfg.dump() + "\n")
    plot_loss_csv(out / "loss.csv", out / "loss.png")
    if res.report is not None:
        plot_eval_dir(out)
        print(f"R-AUC {res.report.r_auc:.4f}  RR-AUC {res.report.rr_auc:.4f}  Coll% {res.report.coll_percent}")
    if res.trace:
        print(f"loss {res.trace[0]:.5g} -> {res.trace[-1]:.5g} over {len(res.trace)} steps")


def cmd_eval(args):
    from .plotting import plot_eval_dir

    cfg = _config(args)
    al, ar = _assets(args)
    ds = load_dataset(args.data)
    if not args.perfect and not args.checkpoint:
        raise ValidationError("eval needs --checkpoint or --perfect")
    model = None if args.perfect else load_checkpoint(args.checkpoint)
    split = {"test": 1, "train": 0}[args.split]
    report = evaluate(cfg, ds, al, ar, model, out_dir=args.out, split=split, perfect=args.perfect)
    plot_eval_dir(args.out)
    print(report.to_json())


def cmd_bench(args):
    cfg = _config(args)
    if args.data:
        ds_root = Path(args.data)
        manifest = json.loads((ds_root / "manifest.json").read_text())
        stream, sensor = ev.read_event_stream(ds_root / manifest["scripts"][0]["name"] / "stream.evst")
    elif args.empty:
        sensor = cfg.camera.intrinsics().sensor
        stream = ev.EventStream.empty()
    else:
        sensor = cfg.camera.intrinsics().sensor
        stream = synthetic_stream(cfg.bench.duration_s, cfg.bench.events_per_ms, sensor, cfg.seed)
    model = load_checkpoint(args.checkpoint) if args.checkpoint else None
    result = bench(cfg, stream, sensor, model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "bench.json", result)
    print(json.dumps(result, indent=2, sort_keys=True))


def cmd_collide(args):
    al, ar = _assets(args)
    if args.params:
        spec = json.loads(Path(args.params).read_text())
        pl, pr = HandParams.from_vector(spec["left"]), HandParams.from_vector(spec["right"])
    else:
        pl = HandParams(rot=[0, np.pi / 2, 0], trans=[-0.01, 0.07, 0.6])
        pr = HandParams(rot=[0, -np.pi / 2, 0], trans=[0.01, 0.07, 0.6])
    ml, mr = pose_mesh(pl, al), pose_mesh(pr, ar)
    inter = inter_hand_pairs(ml, mr)
    verts, faces, _ = union_mesh(ml, mr)
    union = self_collisions(verts, faces)
    lines = ["# inter-hand pairs: left_face right_face"]
    lines += [f"{i} {j}" for i, j in inter.tolist()]
    lines += ["# union-mesh pairs (self and inter-hand): face_i face_j"]
    lines += [f"{i} {j}" for i, j in union.tolist()]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")
    print(f"{len(inter)} inter-hand pairs, {len(union)} union-mesh pairs -> {out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="evhands", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON run configuration (defaults when omitted)")
        sp.add_argument("--seed", type=int, default=None, help="overrides the config seed")
        sp.add_argument("--out", required=True)
        sp.set_defaults(fn=fn)
        return sp

    add("gen-assets", cmd_gen_assets, "write procedural left/right hand assets")
    sp = add("gen-data", cmd_gen_data, "render, simulate and window the configured scripts")
    sp.add_argument("--assets")
    sp.add_argument("--force", action="store_true", help="replace a non-empty output directory")
    sp = add("simulate", cmd_simulate, "simulate events from a frame directory or a shipped script")
    src = sp.add_mutually_exclusive_group(required=True)
    src.add_argument("--frames")
    src.add_argument("--script")
    sp.add_argument("--assets")
    sp = add("train", cmd_train, "train the network on a dataset")
    sp.add_argument("--data", required=True)
    sp.add_argument("--assets")
    sp.add_argument("--init", help="checkpoint to resume from")
    sp = add("eval", cmd_eval, "evaluate a checkpoint on a dataset split")
    sp.add_argument("--data", required=True)
    sp.add_argument("--assets")
    sp.add_argument("--checkpoint")
    sp.add_argument("--perfect", action="store_true", help="replay ground truth as predictions")
    sp.add_argument("--split", choices=["test", "train"], default="test")
    sp = add("bench", cmd_bench, "measure window preparation and network throughput")
    sp.add_argument("--data")
    sp.add_argument("--checkpoint")
    sp.add_argument("--empty", action="store_true", help="benchmark on an empty stream")
    sp = add("collide", cmd_collide, "dump colliding triangle pairs of a two-hand pose")
    sp.add_argument("--assets")
    sp.add_argument("--params", help='JSON {"left": [22 values], "right": [22 values]}')
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.fn(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except NumericAbort as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FileNotFoundError, NotADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
