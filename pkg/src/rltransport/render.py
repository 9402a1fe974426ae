"""Reference and guided path tracing, tiled over a thread pool.

Both integrators share one compiled path kernel.  A sample is a pure
function of (pixel, sample number, dimension, seed): the global sequence
index is ``seed_base(seed) + pass * stride + pixel`` with ``stride`` the smallest prime that is
at least the pixel count and coprime to every Halton base (see
:func:`rltransport.qmc.coprime_stride`), dims 0 and 1 jitter the pixel,
and every path vertex consumes five dimensions (light pick, two for the
light point, two for the scatter direction).  Tiles therefore never change
results, only wall time.
"""
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict

import numpy as np

from ._jit import njit
from .errors import ContractError
from .geometry import (DIFFUSE, bsdf_eval, bsdf_sample, camera_ray, emitted, facing, front_normal,
                       intersect_scene, spawn)
from .guiding import QGrid, apply_dual_updates, cell_index, direction_bin, guided_sample_row, optimistic_rows
from .nee import direct_contribution
from .qmc import check_seed, coprime_stride, sample, seed_base
from .vecmath import dot, luminance

INTEGRATORS = ("pt-reference", "nee-uniform", "nee-tabular", "nee-net", "baked", "guided-pt")
FIRST_PATH_DIM = 2
DIMS_PER_VERTEX = 5


@dataclass
class ImageBuffer:
    width: int
    height: int
    accum: np.ndarray = None
    count: np.ndarray = None

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ContractError("image dimensions must be positive")
        if self.accum is None:
            self.accum = np.zeros((self.height, self.width, 3))
        if self.count is None:
            self.count = np.zeros((self.height, self.width), dtype=np.int64)

    @property
    def image(self):
        """Per-pixel mean radiance, shape (height, width, 3)."""
        return self.accum / np.maximum(self.count, 1)[..., None]

    def merge(self, other):
        self.accum += other.accum
        self.count += other.count
        return self


@dataclass
class ExperimentConfig:
    scene: str = "cornell-diffuse"
    integrator: str = "pt-reference"
    spp: int = 16
    max_length: int = 6
    seed: int = 0
    width: int = 64
    height: int = 64
    tile: int = 16
    threads: int = 1
    learner: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.integrator not in INTEGRATORS:
            raise ContractError(f"unknown integrator {self.integrator!r}")
        if self.spp <= 0:
            raise ContractError("spp must be positive")
        if self.max_length < 1:
            raise ContractError("max path length must be >= 1")
        if self.width <= 0 or self.height <= 0 or self.tile <= 0 or self.threads <= 0:
            raise ContractError("sizes must be positive")
        check_seed(self.seed)

    def to_dict(self):
        return asdict(self)


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@njit(inline="always")
def radiance_from_hit(ptype, pgeo, pmat, mats, lights, larea, p, prim, d, idx, dim, seed, max_len,
                      guided, gq, gr, gs, glo, gext, gres, eps, ucell, ubin, uval, urefl, slot):
    """Radiance carried back along ``-d`` from the surface point ``p`` of ``prim``.

    Emission is counted only at this first vertex; later vertices see light
    through next-event estimation, so a path of ``max_len`` segments ends
    with the light connection made from vertex ``max_len - 1``.  With
    ``guided`` set, diffuse vertices sample the mixture over the guide rows
    ``gs`` and two update targets per traversed segment go to row ``slot``:
    ``uval`` bootstraps the full incident radiance table ``gq`` and ``urefl``
    the reflected-only table ``gr``.  The count written is returned
    alongside the radiance.
    """
    nl = lights.shape[0]
    n = facing(front_normal(ptype, pgeo, prim, p), d)
    wo = (-d[0], -d[1], -d[2])
    le = emitted(ptype, pgeo, pmat, mats, prim, p, wo)
    lr = le[0]
    lg = le[1]
    lb = le[2]
    br = 1.0
    bg = 1.0
    bb = 1.0
    nu = 0
    prev_cell = -1
    prev_bin = -1
    for vertex in range(1, max_len):
        m = pmat[prim]
        if vertex > 1:
            le = emitted(ptype, pgeo, pmat, mats, prim, p, wo)
        direct = 0.0
        if nl > 0:
            l = min(int(sample(idx, dim, seed) * nl), nl - 1)
            c = direct_contribution(ptype, pgeo, pmat, mats, lights, larea, p, n, wo, m, l,
                                    sample(idx, dim + 1, seed), sample(idx, dim + 2, seed))
            lr += br * c[0] * nl
            lg += bg * c[1] * nl
            lb += bb * c[2] * nl
            direct = luminance(c) * nl
        u1 = sample(idx, dim + 3, seed)
        u2 = sample(idx, dim + 4, seed)
        dim += DIMS_PER_VERTEX
        cell = -1
        if guided:
            cell = cell_index(p, glo, gext, gres)
        if guided and mats[m, 0] == DIFFUSE:
            wi, pdf, _ = guided_sample_row(gs[cell], n, u1, u2, eps)
        else:
            wi, pdf = bsdf_sample(mats, m, n, wo, u1, u2)
        wr = 0.0
        wg = 0.0
        wb = 0.0
        if pdf > 0.0:
            f = bsdf_eval(mats, m, n, wo, wi)
            cs = dot(n, wi)
            if cs > 0.0:
                wr = f[0] * cs / pdf
                wg = f[1] * cs / pdf
                wb = f[2] * cs / pdf
        b = -1
        if guided:
            b = direction_bin(wi)
            if prev_cell >= 0:
                ucell[slot, nu] = prev_cell
                ubin[slot, nu] = prev_bin
                wl = luminance((wr, wg, wb))
                uval[slot, nu] = luminance(le) + wl * gq[cell, b]
                urefl[slot, nu] = direct + wl * gr[cell, b]
                nu += 1
        if vertex == max_len - 1 or (wr == 0.0 and wg == 0.0 and wb == 0.0):
            break
        br *= wr
        bg *= wg
        bb *= wb
        o = spawn(p, n, wi)
        t, hit = intersect_scene(ptype, pgeo, o, wi, 0.0, np.inf)
        if hit < 0:
            if guided:
                ucell[slot, nu] = cell
                ubin[slot, nu] = b
                uval[slot, nu] = 0.0
                urefl[slot, nu] = 0.0
                nu += 1
            break
        prev_cell = cell
        prev_bin = b
        p = (o[0] + t * wi[0], o[1] + t * wi[1], o[2] + t * wi[2])
        prim = hit
        d = wi
        wo = (-d[0], -d[1], -d[2])
        n = facing(front_normal(ptype, pgeo, prim, p), d)
    return (lr, lg, lb), nu


@njit
def render_tile(ptype, pgeo, pmat, mats, lights, larea, cam, width, height, stride, x0, y0, x1, y1, s0, s1, seed,
                max_len, guided, gq, gr, gs, glo, gext, gres, eps, accum, count, ucell, ubin, uval, urefl, ucount):
    base = seed_base(seed)
    for s in range(s0, s1):
        for py in range(y0, y1):
            for px in range(x0, x1):
                pid = py * width + px
                idx = base + s * stride + pid
                o, d = camera_ray(cam, width, height, px + sample(idx, 0, seed), py + sample(idx, 1, seed))
                t, prim = intersect_scene(ptype, pgeo, o, d, 0.0, np.inf)
                count[py, px] += 1
                if prim < 0:
                    ucount[pid] = 0
                    continue
                p = (o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2])
                L, nu = radiance_from_hit(ptype, pgeo, pmat, mats, lights, larea, p, prim, d, idx, FIRST_PATH_DIM,
                                          seed, max_len, guided, gq, gr, gs, glo, gext, gres, eps,
                                          ucell, ubin, uval, urefl, pid)
                ucount[pid] = nu
                accum[py, px, 0] += L[0]
                accum[py, px, 1] += L[1]
                accum[py, px, 2] += L[2]


@njit
def apply_pass_updates(q, reflected, visits, ucell, ubin, uval, urefl, ucount):
    """Apply one pass worth of Q updates in raster order, path order within a pixel."""
    for pid in range(ucount.shape[0]):
        apply_dual_updates(q, reflected, visits, ucell[pid], ubin[pid], uval[pid], urefl[pid], ucount[pid])


# ---------------------------------------------------------------------------
# drivers
# ---------------------------------------------------------------------------

def tiles(width, height, size):
    return [(x, y, min(x + size, width), min(y + size, height))
            for y in range(0, height, size) for x in range(0, width, size)]


def _run_tiles(fn, tile_list, threads):
    if threads <= 1:
        for t in tile_list:
            fn(t)
        return
    with ThreadPoolExecutor(threads) as pool:
        list(pool.map(fn, tile_list))


def _render(scene, config, grid=None, eps=1.0):
    ptype, pgeo, pmat, mats, lights, larea = scene.kernel_data
    w, h = config.width, config.height
    cam = scene.camera.kernel_data(w, h)
    buf = ImageBuffer(w, h)
    L = config.max_length
    guided = grid is not None
    if grid is None:
        grid = QGrid(np.zeros(3), np.ones(3), res=1)
    ucell = np.full((h * w, max(L, 1)), -1, np.int64)
    ubin = np.zeros((h * w, max(L, 1)), np.int64)
    uval = np.zeros((h * w, max(L, 1)))
    urefl = np.zeros((h * w, max(L, 1)))
    guide = grid.reflected.copy()
    ucount = np.zeros(h * w, np.int64)
    ext = grid.hi - grid.lo
    tl = tiles(w, h, config.tile)
    stride = coprime_stride(w * h)

    def work(s0, s1):
        def one(t):
            render_tile(ptype, pgeo, pmat, mats, lights, larea, cam, w, h, stride, t[0], t[1], t[2], t[3], s0, s1,
                        config.seed, L, guided, grid.q, grid.reflected, guide, grid.lo, ext, grid.res,
                        float(eps), buf.accum, buf.count, ucell, ubin, uval, urefl, ucount)
        return one

    if not guided:
        _run_tiles(work(0, config.spp), tl, config.threads)
        return buf
    for s in range(config.spp):
        optimistic_rows(grid.reflected, grid.visits, guide)
        _run_tiles(work(s, s + 1), tl, config.threads)
        apply_pass_updates(grid.q, grid.reflected, grid.visits, ucell, ubin, uval, urefl, ucount)
    return buf


def path_trace_reference(scene, config):
    """Unbiased path tracing with BSDF sampling and uniform-selection NEE at every vertex."""
    return _render(scene, config)


def path_trace_guided(scene, config, grid=None, epsilon=0.5):
    """Path tracing whose diffuse scattering follows the learned Q-grid.

    The grid (created over the scene bounds if not given) is updated after
    every full pass, so a pass renders against a frozen snapshot.  Because
    next-event estimation already collects emission, scattered rays are
    guided by ``grid.reflected``, the radiance the continued path can still
    pick up, rather than by the full ``grid.q``; bins a cell has never tried
    borrow the cell's best value so they are not starved.
    """
    if not 0.0 <= epsilon <= 1.0:
        raise ContractError("epsilon must lie in [0, 1]")
    if grid is None:
        grid = QGrid.for_scene(scene)
    return _render(scene, config, grid, epsilon), grid


def timed(fn, *args, **kwargs):
    t = time.perf_counter()
    out = fn(*args, **kwargs)
    return out, time.perf_counter() - t
