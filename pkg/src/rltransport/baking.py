"""Radiance baked into a grid of tiny per-voxel networks.

Every voxel of a uniform grid over the scene bounds owns a 9-9-3 network
mapping (voxel-local position, normal, view direction) to the radiance that
leaves the surface toward the viewer.  Emission is known exactly from the
hit material, so the networks learn only the scattered part and the
emitted radiance is added back at evaluation time.
"""
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ._jit import njit
from .errors import ContractError, TrainingError
from .geometry import camera_ray, cosine_sample, emitted, facing, front_normal, intersect_scene, sample_primitive
from .nee import contribution_from_point, light_selection_net
from .nn import MiniBatch, TinyMLP, mlp_forward
from .qmc import check_seed, coprime_stride, sample, seed_base
from .render import FIRST_PATH_DIM, radiance_from_hit
from .vecmath import luminance

_MAGIC = b"VXNG"
HIDDEN = 9


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------

@njit
def voxel_of(p, lo, size, res):
    """(flat voxel index, local position in [0,1]^3) with floor-and-clamp."""
    v = 0
    loc = np.empty(3)
    for k in range(3):
        f = (p[k] - lo[k]) / size[k]
        i = int(np.floor(f))
        if i < 0:
            i = 0
        elif i >= res:
            i = res - 1
        loc[k] = f - i
        v = v * res + i
    return v, loc


class VoxelNetGrid:
    """``res**3`` networks over the box ``[lo, hi]``."""

    def __init__(self, lo, hi, res=3, hidden=HIDDEN, seed=0, nets=None, trained=None):
        if res < 1:
            raise ContractError("grid resolution must be >= 1")
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        self.res = int(res)
        n = self.res ** 3
        self.nets = nets or [TinyMLP([9, hidden, 3], ["relu", "identity"], seed=seed + v, zero_output=True)
                             for v in range(n)]
        if len(self.nets) != n:
            raise ContractError(f"expected {n} networks, got {len(self.nets)}")
        self.trained = np.zeros(n, bool) if trained is None else np.asarray(trained, bool)
        self.loss_traces = [np.zeros(0) for _ in range(n)]

    @classmethod
    def for_scene(cls, scene, res=3, **kw):
        lo, hi = scene.bbox
        return cls(lo, hi, res, **kw)

    @property
    def size(self):
        return (self.hi - self.lo) / self.res

    def voxel(self, x):
        """(voxel index, local position) of point ``x``."""
        v, loc = voxel_of(tuple(map(float, x)), self.lo, self.size, self.res)
        return int(v), np.array(loc)

    def voxel_center(self, v):
        i, rem = divmod(v, self.res * self.res)
        j, k = divmod(rem, self.res)
        return self.lo + (np.array([i, j, k]) + 0.5) * self.size

    def fallback_map(self):
        """Index of the voxel whose network answers for each voxel (nearest trained by center)."""
        n = self.res ** 3
        ok = np.flatnonzero(self.trained)
        if ok.size == 0:
            raise ContractError("no voxel has been trained")
        centers = np.array([self.voxel_center(v) for v in range(n)])
        d = np.linalg.norm(centers[:, None, :] - centers[None, ok, :], axis=2)
        return ok[np.argmin(d, axis=1)]

    def stacked(self):
        return np.stack([net.params for net in self.nets])

    # -- file format ------------------------------------------------------
    def to_bytes(self):
        head = _MAGIC + struct.pack("<II", 1, self.res) + self.lo.astype("<f8").tobytes() + self.hi.astype("<f8").tobytes()
        head += self.trained.astype(np.uint8).tobytes()
        return head + b"".join(net.to_bytes() for net in self.nets)

    @classmethod
    def from_bytes(cls, buf):
        if buf[:4] != _MAGIC:
            raise ContractError("not a voxel-network grid file")
        version, res = struct.unpack_from("<II", buf, 4)
        lo = np.frombuffer(buf, "<f8", 3, 12)
        hi = np.frombuffer(buf, "<f8", 3, 36)
        n = res ** 3
        trained = np.frombuffer(buf, np.uint8, n, 60).astype(bool)
        pos = 60 + n
        nets = []
        for _ in range(n):
            net, used = TinyMLP.from_bytes(buf, pos)
            nets.append(net)
            pos += used
        return cls(lo, hi, res, nets=nets, trained=trained)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())
        meta = {"format": "voxel-net-grid", "version": 1, "resolution": self.res, "bbox": [self.lo.tolist(), self.hi.tolist()],
                "trained": self.trained.tolist(), "network": self.nets[0].metadata()}
        with open(str(path) + ".json", "w") as fh:
            json.dump(meta, fh, indent=2)

    @classmethod
    def load(cls, path):
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


# ---------------------------------------------------------------------------
# training data
# ---------------------------------------------------------------------------

@njit
def _bake_kernel(ptype, pgeo, pmat, mats, lights, larea, cdf, points, rays, stride, seed, max_len,
                 pos, nrm, prims, dirs, rad, emit):
    dummy_q = np.zeros((1, 1))
    z3 = np.zeros(3)
    ucell = np.zeros((1, max(max_len, 1)), np.int64)
    ubin = np.zeros((1, max(max_len, 1)), np.int64)
    uval = np.zeros((1, max(max_len, 1)))
    nprim = cdf.shape[0]
    base = seed_base(seed)
    for i in range(points):
        u = sample(base + i, 0, seed)
        prim = nprim - 1
        for k in range(nprim):
            if u < cdf[k]:
                prim = k
                break
        p, n = sample_primitive(ptype, pgeo, prim, sample(base + i, 1, seed), sample(base + i, 2, seed))
        prims[i] = prim
        for c in range(3):
            pos[i, c] = p[c]
            nrm[i, c] = n[c]
        for j in range(rays):
            r = i * rays + j
            q = base + i * stride + j
            w = cosine_sample(n, sample(q, 0, seed), sample(q, 1, seed))
            d = (-w[0], -w[1], -w[2])
            L, _ = radiance_from_hit(ptype, pgeo, pmat, mats, lights, larea, p, prim, d, q, FIRST_PATH_DIM, seed,
                                     max_len, False, dummy_q, dummy_q, dummy_q, z3, z3, 1, 1.0, ucell, ubin, uval, uval, 0)
            le = emitted(ptype, pgeo, pmat, mats, prim, p, w)
            for c in range(3):
                dirs[r, c] = w[c]
                rad[r, c] = L[c]
                emit[r, c] = le[c]


@dataclass
class BakeData:
    """Surface points and, per ray, the query direction and outgoing radiance toward it."""
    positions: np.ndarray  # (P, 3)
    normals: np.ndarray  # (P, 3)
    primitives: np.ndarray  # (P,)
    directions: np.ndarray  # (P*R, 3)
    radiance: np.ndarray  # (P*R, 3)
    emission: np.ndarray  # (P*R, 3)
    rays: int
    voxel_samples: list = field(default_factory=list)  # per voxel: sample indices

    @property
    def point_of_sample(self):
        return np.repeat(np.arange(len(self.positions)), self.rays)


def generate_training_data(scene, points=10000, rays=512, seed=0, max_length=6, grid=None):
    """Path-traced outgoing radiance at area-uniform surface points.

    Query directions are cosine distributed around each point's front
    normal.  With ``grid`` given, samples are also bucketed by voxel and
    voxels that receive none are flagged untrained.
    """
    if points <= 0 or rays <= 0:
        raise ContractError("point and ray counts must be positive")
    seed = check_seed(seed)
    ptype, pgeo, pmat, mats, lights, larea = scene.kernel_data
    areas = scene.surface_areas()
    cdf = np.cumsum(areas) / areas.sum()
    cdf[-1] = 1.0
    n = points * rays
    pos = np.zeros((points, 3))
    nrm = np.zeros((points, 3))
    prims = np.zeros(points, np.int64)
    dirs = np.zeros((n, 3))
    rad = np.zeros((n, 3))
    emit = np.zeros((n, 3))
    _bake_kernel(ptype, pgeo, pmat, mats, lights, larea, cdf, int(points), int(rays), coprime_stride(rays),
                 int(seed), int(max_length), pos, nrm, prims, dirs, rad, emit)
    data = BakeData(pos, nrm, prims, dirs, rad, emit, int(rays))
    if grid is not None:
        assign_voxels(grid, data)
    return data


def assign_voxels(grid, data):
    vox = np.array([grid.voxel(p)[0] for p in data.positions])
    per_point = [np.flatnonzero(vox == v) for v in range(grid.res ** 3)]
    r = data.rays
    data.voxel_samples = [(pts[:, None] * r + np.arange(r)).ravel() for pts in per_point]
    return data.voxel_samples


def voxel_features(grid, data, v, idx):
    pts = idx // data.rays
    # local coordinates relative to voxel v itself, so clamped points on the
    # upper bounding face get local coordinate 1 rather than wrapping to 0
    vi = np.array(np.unravel_index(v, (grid.res,) * 3)).T
    base = grid.lo + vi * grid.size
    loc = (data.positions[pts] - base) / grid.size
    return np.hstack([loc, data.normals[pts], data.directions[idx]])


def train_voxel_networks(grid, data, epochs=500, rate=1e-2, batch_size=64, seed=0, holdout=0.0):
    """Squared-error fit of every voxel network to its samples' scattered radiance.

    ``holdout`` keeps a trailing fraction of each voxel's points out of
    training; the returned dict maps voxel -> (train mse, holdout mse).
    """
    if not data.voxel_samples:
        assign_voxels(grid, data)
    report = {}
    for v, idx in enumerate(data.voxel_samples):
        if idx.size == 0:
            grid.trained[v] = False
            continue
        X = voxel_features(grid, data, v, idx)
        Y = data.radiance[idx] - data.emission[idx]
        if holdout > 0:
            pts = idx // data.rays
            cut = np.unique(pts)[int(len(np.unique(pts)) * (1 - holdout)):]
            test = np.isin(pts, cut)
            Xh, Yh = X[test], Y[test]
            X, Y = X[~test], Y[~test]
        net = grid.nets[v]
        if not grid.trained[v] and not net.weights[-1].any():
            # start from the mean predictor; a constant voxel is then fitted exactly
            net.biases[-1][:] = Y.mean(axis=0)
        try:
            trace = grid.nets[v].fit(MiniBatch(X, targets=Y), "squared", epochs=epochs, rate=rate,
                                     batch_size=batch_size, seed=seed + v)
        except TrainingError as exc:
            raise TrainingError(f"voxel {v}: {exc}") from exc
        grid.loss_traces[v] = np.asarray(trace)
        grid.trained[v] = True
        if holdout > 0:
            mse = lambda A, B: float(np.mean((grid.nets[v](A) - B) ** 2))
            report[v] = (mse(X, Y), mse(Xh, Yh))
        else:
            report[v] = (float(trace[-1]) if len(trace) else float("nan"), float("nan"))
    return report


def eval_baked_radiance(grid, x, n, w, emission=(0.0, 0.0, 0.0)):
    """Baked radiance leaving ``x`` toward ``w``; ``emission`` is the surface's own emitted radiance.

    Returns ``(rgb, used_fallback)``.
    """
    v, loc = grid.voxel(x)
    used = v
    if not grid.trained[v]:
        used = int(grid.fallback_map()[v])
    out = grid.nets[used](np.concatenate([loc, n, w]))
    return np.maximum(out, 0.0) + np.asarray(emission, float), used != v


@njit
def _render_baked_kernel(ptype, pgeo, pmat, mats, cam, width, height, stride, spp, seed, params, sizes, acts, offs,
                         aoff, remap, lo, size, res, out):
    tot = aoff[acts.shape[0]] + sizes[acts.shape[0]]
    a = np.zeros(tot)
    z = np.zeros(tot)
    x = np.zeros(9)
    base = seed_base(seed)
    for py in range(height):
        for px in range(width):
            acc0 = 0.0
            acc1 = 0.0
            acc2 = 0.0
            for s in range(spp):
                idx = base + s * stride + py * width + px
                o, d = camera_ray(cam, width, height, px + sample(idx, 0, seed), py + sample(idx, 1, seed))
                t, prim = intersect_scene(ptype, pgeo, o, d, 0.0, np.inf)
                if prim < 0:
                    continue
                p = (o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2])
                n = facing(front_normal(ptype, pgeo, prim, p), d)
                w = (-d[0], -d[1], -d[2])
                v, loc = voxel_of(p, lo, size, res)
                for k in range(3):
                    x[k] = loc[k]
                    x[3 + k] = n[k]
                    x[6 + k] = w[k]
                y = mlp_forward(params[remap[v]], sizes, acts, offs, aoff, x, a, z)
                le = emitted(ptype, pgeo, pmat, mats, prim, p, w)
                acc0 += max(y[0], 0.0) + le[0]
                acc1 += max(y[1], 0.0) + le[1]
                acc2 += max(y[2], 0.0) + le[2]
            out[py, px, 0] = acc0 / spp
            out[py, px, 1] = acc1 / spp
            out[py, px, 2] = acc2 / spp


def render_baked(scene, grid, width, height, spp=4, seed=0):
    """Primary rays only, each hit shaded by its voxel network plus emission."""
    if spp <= 0:
        raise ContractError("spp must be positive")
    seed = check_seed(seed)
    ptype, pgeo, pmat, mats = scene.kernel_data[:4]
    out = np.zeros((height, width, 3))
    _, sizes, acts, offs, aoff = grid.nets[0].kernel_args()
    _render_baked_kernel(ptype, pgeo, pmat, mats, scene.camera.kernel_data(width, height), int(width), int(height),
                         coprime_stride(width * height), int(spp), int(seed), grid.stacked(), sizes, acts, offs, aoff, grid.fallback_map(),
                         grid.lo, grid.size, grid.res, out)
    return out


# ---------------------------------------------------------------------------
# offline visibility-aware light selection
# ---------------------------------------------------------------------------

@njit
def _visibility_kernel(ptype, pgeo, pmat, mats, lights, larea, cam, width, height, count, light_samples, seed,
                       lo, ext, feats, contrib, valid):
    k = lights.shape[0]
    base = seed_base(seed)
    for j in range(count):
        fx = sample(base + j, 0, seed) * width
        fy = sample(base + j, 1, seed) * height
        o, d = camera_ray(cam, width, height, fx, fy)
        t, prim = intersect_scene(ptype, pgeo, o, d, 0.0, np.inf)
        valid[j] = prim >= 0
        if prim < 0:
            continue
        p = (o[0] + t * d[0], o[1] + t * d[1], o[2] + t * d[2])
        n = facing(front_normal(ptype, pgeo, prim, p), d)
        wo = (-d[0], -d[1], -d[2])
        for c in range(3):
            feats[j, c] = (p[c] - lo[c]) / ext[c]
            feats[j, 3 + c] = n[c]
            feats[j, 6 + c] = d[c]
        m = pmat[prim]
        for l in range(k):
            acc = 0.0
            for s in range(light_samples):
                u1 = sample(base + j * light_samples + s, 2 + 2 * (l % 15), seed)
                u2 = sample(base + j * light_samples + s, 3 + 2 * (l % 15), seed)
                y, ny = sample_primitive(ptype, pgeo, lights[l], u1, u2)
                c3 = contribution_from_point(ptype, pgeo, pmat, mats, p, n, wo, m, lights[l], y, ny, 1.0 / larea[l])
                acc += luminance(c3)
            contrib[j, l] = acc / light_samples


def train_visibility_net(scene, samples=16384, epochs=30, rate=5e-2, light_samples=4, width=128, height=128,
                         seed=0, net=None, batch_size=64):
    """Offline softmax light-selection network fitted to per-light contributions.

    States are camera primary hits.  Each state's contribution vector is
    normalized and used as soft labels for the cross-entropy, implemented as
    a weighted NLL over one (state, light) record per nonzero entry.
    """
    ptype, pgeo, pmat, mats, lights, larea = scene.kernel_data
    k = len(lights)
    if k < 1:
        raise ContractError("scene has no lights")
    net = net or light_selection_net(k, seed=seed)
    lo, hi = scene.bbox
    feats = np.zeros((samples, 9))
    contrib = np.zeros((samples, k))
    valid = np.zeros(samples, np.bool_)
    _visibility_kernel(ptype, pgeo, pmat, mats, lights, larea, scene.camera.kernel_data(width, height), width, height,
                       int(samples), int(light_samples), int(seed), lo, hi - lo, feats, contrib, valid)
    tot = contrib.sum(axis=1)
    keep = valid & (tot > 0)
    feats, contrib = feats[keep], contrib[keep] / tot[keep, None]
    rows, cols = np.nonzero(contrib > 0)
    if rows.size == 0:
        return net
    batch = MiniBatch(feats[rows], labels=cols, weights=contrib[rows, cols] / contrib[rows, cols].mean())
    net.fit(batch, "nll", epochs=epochs, rate=rate, batch_size=batch_size, seed=seed)
    return net
