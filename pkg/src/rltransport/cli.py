"""Command line entry point: ``rltransport <command> [options]``."""
import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from .baking import VoxelNetGrid, eval_baked_radiance, generate_training_data, render_baked, train_voxel_networks
from .errors import ContractError, SceneError, TrainingError
from .guiding import QNetwork, train_q_network_online
from .imaging import difference_image, false_color_light_index, read_pfm, rmse, write_image
from .nee import SELECTORS, render_with_online_learning
from .render import INTEGRATORS, ExperimentConfig, path_trace_guided, path_trace_reference
from .scenes import BUILTIN, load_scene

log = logging.getLogger("rltransport")

EXIT_OK, EXIT_USAGE, EXIT_TRAINING, EXIT_IO = 0, 2, 3, 4
RENDER_COLUMNS = ["scene", "integrator", "spp", "seed", "rmse_rel", "rmse_abs", "wall_seconds"]
TRACE_COLUMNS = ["spp", "selector", "rmse", "mean_loss"]


def _scene_arg(p):
    p.add_argument("--scene", default="cornell-diffuse", help=f"built-in id ({', '.join(BUILTIN)}) or scene JSON file")


def _image_args(p):
    p.add_argument("--width", type=int, default=64)
    p.add_argument("--height", type=int, default=64)
    p.add_argument("--out", default=None, help="output image path")
    p.add_argument("--format", choices=("pfm", "ppm"), default=None, help="defaults to the --out extension")


def build_parser():
    ap = argparse.ArgumentParser(prog="rltransport", description="Learned light transport: guiding, light selection, baking.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", help="render an image with one integrator")
    _scene_arg(r)
    _image_args(r)
    r.add_argument("--integrator", choices=INTEGRATORS, default="pt-reference")
    r.add_argument("--spp", type=int, default=16)
    r.add_argument("--max-length", type=int, default=6)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--tiles", type=int, default=16, help="tile edge in pixels")
    r.add_argument("--threads", type=int, default=1)
    r.add_argument("--selector", choices=SELECTORS, default=None, help="light selector for nee-* integrators")
    r.add_argument("--epsilon", type=float, default=None,
                   help="guiding mixture weight (guided-pt, default 0.5) or eps-greedy threshold (default 0.1)")
    r.add_argument("--temperature", type=float, default=2.0)
    r.add_argument("--batches", type=int, default=64)
    r.add_argument("--rate", type=float, default=5e-2)
    r.add_argument("--grid", default=None, help="baked grid file (baked integrator)")
    r.add_argument("--reference", default=None, help="PFM reference for the metrics row")
    r.add_argument("--metrics", default=None, help="append a metrics CSV row here")
    r.add_argument("--light-index", default=None, help="write the false-color light-index image (nee-*)")
    r.add_argument("--q-dump", default=None, help="write the learned Q grid as CSV (guided-pt)")

    q = sub.add_parser("train-q", help="train a neural Q function online")
    _scene_arg(q)
    q.add_argument("--budget", type=int, default=100000, help="number of training paths")
    q.add_argument("--rate", type=float, default=1e-2)
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", default=None, help="network file")
    q.add_argument("--trace", default=None, help="loss trace CSV")

    b = sub.add_parser("bake", help="bake radiance into per-voxel networks")
    _scene_arg(b)
    b.add_argument("--grid-res", type=int, default=3)
    b.add_argument("--points", type=int, default=10000)
    b.add_argument("--rays", type=int, default=512)
    b.add_argument("--epochs", type=int, default=500)
    b.add_argument("--rate", type=float, default=1e-2)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True, help="grid file")

    e = sub.add_parser("eval", help="evaluate a baked grid at one query")
    e.add_argument("--grid", required=True)
    e.add_argument("--x", type=float, nargs=3, required=True, metavar=("X", "Y", "Z"))
    e.add_argument("--n", type=float, nargs=3, required=True, metavar=("X", "Y", "Z"))
    e.add_argument("--w", type=float, nargs=3, required=True, metavar=("X", "Y", "Z"))

    rb = sub.add_parser("render-baked", help="render primary hits shaded by a baked grid")
    _scene_arg(rb)
    _image_args(rb)
    rb.add_argument("--grid", required=True)
    rb.add_argument("--spp", type=int, default=4)
    rb.add_argument("--seed", type=int, default=0)

    c = sub.add_parser("compare", help="RMSE and difference image of two PFM files")
    c.add_argument("image")
    c.add_argument("reference")
    c.add_argument("--gain", type=float, default=10.0)
    c.add_argument("--out", default=None, help="difference image path")
    c.add_argument("--format", choices=("pfm", "ppm"), default=None)

    m = sub.add_parser("metrics", help="RMSE versus spp for light selectors")
    _scene_arg(m)
    m.add_argument("--width", type=int, default=128)
    m.add_argument("--height", type=int, default=128)
    m.add_argument("--spp", type=int, nargs="+", default=[1, 2, 4, 8, 16, 32])
    m.add_argument("--selector", choices=SELECTORS, nargs="+", default=["uniform", "net"])
    m.add_argument("--rate", type=float, default=5e-2)
    m.add_argument("--batches", type=int, default=64)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", default=None, help="CSV path (default: stdout)")
    return ap


def _save(image, args):
    if args.out:
        write_image(image, args.out, args.format)
        log.info("wrote %s", args.out)


def _write_rows(path, columns, rows):
    if path is None:
        w = csv.DictWriter(sys.stdout, columns, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
        return
    new = not Path(path).exists() or Path(path).stat().st_size == 0
    with open(path, "a", newline="") as fh:
        w = csv.DictWriter(fh, columns, extrasaction="ignore")
        if new:
            w.writeheader()
        w.writerows(rows)


def cmd_render(args):
    scene = load_scene(args.scene)
    cfg = ExperimentConfig(scene.name, args.integrator, args.spp, args.max_length, args.seed, args.width, args.height,
                           args.tiles, args.threads)
    t = time.perf_counter()
    if args.integrator == "pt-reference":
        image = path_trace_reference(scene, cfg).image
    elif args.integrator == "guided-pt":
        buf, grid = path_trace_guided(scene, cfg, epsilon=0.5 if args.epsilon is None else args.epsilon)
        image = buf.image
        if args.q_dump:
            grid.dump(args.q_dump)
    elif args.integrator == "baked":
        if not args.grid:
            raise ContractError("the baked integrator needs --grid")
        image = render_baked(scene, VoxelNetGrid.load(args.grid), args.width, args.height, args.spp, args.seed)
    else:
        default = {"nee-uniform": "uniform", "nee-tabular": "tabular-td", "nee-net": "net"}[args.integrator]
        selector = args.selector or default
        per = args.batches * 64
        its = max(1, math.ceil(args.spp * args.width * args.height / per))
        res = render_with_online_learning(scene, args.width, args.height, iterations=its, batches=args.batches,
                                          rate=args.rate, selector=selector, seed=args.seed,
                                          epsilon=0.1 if args.epsilon is None else args.epsilon,
                                          temperature=args.temperature)
        image = res.image
        if args.light_index:
            write_image(false_color_light_index(res.light_index, scene.light_count), args.light_index)
    wall = time.perf_counter() - t
    _save(image, args)
    if args.metrics or args.reference:
        row = {"scene": scene.name, "integrator": args.integrator, "spp": args.spp, "seed": args.seed,
               "rmse_rel": "", "rmse_abs": "", "wall_seconds": f"{wall:.3f}"}
        if args.reference:
            ref = read_pfm(args.reference)
            row["rmse_rel"] = rmse(image, ref, relative=True)
            row["rmse_abs"] = rmse(image, ref)
        _write_rows(args.metrics, RENDER_COLUMNS, [row])
    return EXIT_OK


def cmd_train_q(args):
    scene = load_scene(args.scene)
    qnet = QNetwork.for_scene(scene, seed=args.seed)
    res = train_q_network_online(qnet, scene, args.budget, rate=args.rate, seed=args.seed)
    if args.out:
        qnet.net.save(args.out)
    rows = [{"paths": (i + 1) * res.trace_every, "mean_sq_residual": v} for i, v in enumerate(res.loss_trace)]
    if args.trace:
        _write_rows(args.trace, ["paths", "mean_sq_residual"], rows)
    else:
        print(f"final mean squared residual {res.loss_trace[-1]:.6g} after {res.paths} paths")
    return EXIT_OK


def cmd_bake(args):
    scene = load_scene(args.scene)
    grid = VoxelNetGrid.for_scene(scene, args.grid_res, seed=args.seed)
    data = generate_training_data(scene, args.points, args.rays, seed=args.seed, grid=grid)
    report = train_voxel_networks(grid, data, epochs=args.epochs, rate=args.rate, seed=args.seed)
    grid.save(args.out)
    print(json.dumps({"trained": int(grid.trained.sum()), "voxels": len(grid.nets),
                      "final_loss": {str(v): r[0] for v, r in report.items()}}))
    return EXIT_OK


def cmd_eval(args):
    grid = VoxelNetGrid.load(args.grid)
    rgb, fallback = eval_baked_radiance(grid, np.array(args.x), np.array(args.n), np.array(args.w))
    print(json.dumps({"rgb": rgb.tolist(), "fallback": bool(fallback)}))
    return EXIT_OK


def cmd_render_baked(args):
    scene = load_scene(args.scene)
    _save(render_baked(scene, VoxelNetGrid.load(args.grid), args.width, args.height, args.spp, args.seed), args)
    return EXIT_OK


def cmd_compare(args):
    a = read_pfm(args.image)
    b = read_pfm(args.reference)
    print(json.dumps({"rmse_rel": rmse(a, b, relative=True), "rmse_abs": rmse(a, b)}))
    if args.out:
        write_image(difference_image(a, b, args.gain), args.out, args.format)
    return EXIT_OK


def cmd_metrics(args):
    from .experiments import selection_rmse_curve
    scene = load_scene(args.scene)
    rows, _ = selection_rmse_curve(scene, args.width, args.height, args.spp, args.selector, seed=args.seed,
                                   batches=args.batches, rate=args.rate)
    _write_rows(args.out, TRACE_COLUMNS, rows)
    return EXIT_OK


COMMANDS = {"render": cmd_render, "train-q": cmd_train_q, "bake": cmd_bake, "eval": cmd_eval,
            "render-baked": cmd_render_baked, "compare": cmd_compare, "metrics": cmd_metrics}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ContractError, SceneError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
