"""Experiment drivers shared by the CLI and the acceptance suite."""
import math
import time

import numpy as np

from .imaging import rmse
from .nee import TDTable, light_selection_net, online_pass, render_with_online_learning

REFERENCE_OFFSET = 1 << 26


def direct_lighting_reference(scene, width, height, spp=256, seed=0, offset=REFERENCE_OFFSET):
    """Direct lighting (emission plus one NEE bounce) with uniform selection at high sample count.

    The samples come from a stretch of the sequence far from the prefix
    used by the progressive renders, so the reference is independent of
    the images it is compared against.
    """
    ptype, pgeo, pmat, mats, lights, larea = scene.kernel_data
    k = len(lights)
    net = light_selection_net(max(k, 1))
    table = TDTable(*scene.bbox, lights=max(k, 1), res=1)
    accum = np.zeros((height, width, 3))
    hits = np.zeros((height, width), np.int64)
    lidx = np.full((height, width), -1, np.int64)
    chunk = 1 << 16
    total = spp * width * height
    rec = [np.zeros((chunk, 9)), np.zeros(chunk, np.int64), np.ones(chunk), np.zeros((chunk, 3)),
           np.zeros(chunk, np.int64), np.zeros(chunk, np.bool_)]
    cam = scene.camera.kernel_data(width, height)
    for t0 in range(0, total, chunk):
        n = min(chunk, total - t0)
        online_pass(ptype, pgeo, pmat, mats, lights, larea, cam, width, height, offset + t0, n, seed, 0,
                    *net.kernel_args(), table.q, table.visits, table.lo, table.hi - table.lo, table.res, 0.0, 0.0, 0.0,
                    accum, hits, lidx, *rec)
    return accum / np.maximum(hits, 1)[..., None]


def selection_rmse_curve(scene, width, height, spps=(1, 2, 4, 8, 16, 32), selectors=("uniform", "net"),
                         reference=None, seed=0, batches=64, **learner):
    """Relative RMSE of progressive direct-lighting renders at several sample counts.

    Each point reruns the online loop from scratch with ``spp * width *
    height`` samples, so learned selectors are trained only on samples that
    also contribute to the image being measured.
    """
    if reference is None:
        reference = direct_lighting_reference(scene, width, height, seed=seed)
    per = batches * 64
    rows = []
    for sel in selectors:
        for spp in spps:
            its = max(1, math.ceil(spp * width * height / per))
            t = time.perf_counter()
            res = render_with_online_learning(scene, width, height, iterations=its, batches=batches, selector=sel,
                                              seed=seed, **learner)
            losses = [r["mean_loss"] for r in res.trace if not math.isnan(r["mean_loss"])]
            rows.append({"spp": spp, "selector": sel, "rmse": rmse(res.image, reference, relative=True),
                         "mean_loss": float(np.mean(losses)) if losses else float("nan"),
                         "wall_seconds": time.perf_counter() - t})
    return rows, reference
