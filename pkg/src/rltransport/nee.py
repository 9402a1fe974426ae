"""Learned light selection for next-event estimation.

The direct-lighting estimator picks one light ``l`` with probability
``p_l`` and one area-uniform point on it.  Selection can be uniform, driven
by a tabular temporal-difference estimate of each light's contribution, or
by a softmax network trained online while the image renders
(:func:`render_with_online_learning`).
"""
import math
from dataclasses import dataclass, field

import numpy as np

from ._jit import njit
from .errors import ContractError
from .geometry import (camera_ray, bsdf_eval, emitted, facing, front_normal, intersect_scene, occluded,
                       sample_primitive, spawn)
from .guiding import cell_index
from .nn import MiniBatch, TinyMLP, mlp_forward
from .qmc import check_seed, sample, seed_base
from .vecmath import dot

FLOOR = 1e-3
SELECTORS = ("uniform", "tabular-td", "net", "eps-greedy", "softmax-T")
_SEL_CODE = {name: i for i, name in enumerate(SELECTORS)}


# ---------------------------------------------------------------------------
# direct lighting
# ---------------------------------------------------------------------------

@njit(inline="always")
def contribution_from_point(ptype, pgeo, pmat, mats, x, n, wo, m, lprim, y, ny, pdf_area):
    """Li f G V / pdf_area for the light point ``y`` (front normal ``ny``)."""
    d = (y[0] - x[0], y[1] - x[1], y[2] - x[2])
    dist2 = dot(d, d)
    if dist2 <= 0.0:
        return (0.0, 0.0, 0.0)
    dist = math.sqrt(dist2)
    wi = (d[0] / dist, d[1] / dist, d[2] / dist)
    cx = dot(n, wi)
    cy = -dot(ny, wi)
    if cx <= 0.0 or cy <= 0.0:
        return (0.0, 0.0, 0.0)
    o = spawn(x, n, wi)
    if occluded(ptype, pgeo, o, wi, dist * (1.0 - 1e-6) - 1e-3):
        return (0.0, 0.0, 0.0)
    f = bsdf_eval(mats, m, n, wo, wi)
    lm = pmat[lprim]
    s = cx * cy / (dist2 * pdf_area)
    return (f[0] * mats[lm, 5] * s, f[1] * mats[lm, 6] * s, f[2] * mats[lm, 7] * s)


@njit(inline="always")
def direct_contribution(ptype, pgeo, pmat, mats, lights, larea, x, n, wo, m, l, u1, u2):
    """Contribution of light ``l`` sampled area-uniformly, before dividing by its selection probability."""
    y, ny = sample_primitive(ptype, pgeo, lights[l], u1, u2)
    return contribution_from_point(ptype, pgeo, pmat, mats, x, n, wo, m, lights[l], y, ny, 1.0 / larea[l])


def estimate_direct(sp, scene, light, light_sample, p_select):
    """One-sample direct lighting: Li f G V / (pdf_area * p_select).

    ``light_sample`` is ``(y, normal_y, pdf_area)`` as produced by
    :func:`rltransport.geometry.sample_light_point`.
    """
    y, ny, pdf_area = light_sample
    if not pdf_area > 0 or not p_select > 0:
        raise ContractError("pdf_area and p_select must be positive")
    ptype, pgeo, pmat, mats, lights, _ = scene.kernel_data
    c = contribution_from_point(ptype, pgeo, pmat, mats, tuple(map(float, sp.position)), tuple(map(float, sp.normal)),
                                tuple(map(float, sp.wo)), int(sp.material), int(lights[light]),
                                tuple(map(float, y)), tuple(map(float, ny)), float(pdf_area))
    return np.array(c) / p_select


# ---------------------------------------------------------------------------
# discrete distributions and action selection
# ---------------------------------------------------------------------------

@njit
def floor_pmf(qs, out, floor):
    k = qs.shape[0]
    total = 0.0
    for i in range(k):
        total += qs[i]
    if total <= 0.0 or not math.isfinite(total):
        for i in range(k):
            out[i] = 1.0 / k
        return total
    keep = 1.0 - k * floor
    for i in range(k):
        out[i] = keep * (qs[i] / total) + floor
    return total


@njit
def pmf_to_cdf(pmf, cdf):
    acc = 0.0
    for i in range(pmf.shape[0]):
        acc += pmf[i]
        cdf[i] = acc
    cdf[pmf.shape[0] - 1] = 1.0


@njit
def cdf_pick(cdf, u):
    k = cdf.shape[0]
    for i in range(k):
        if cdf[i] > u:
            return i
    return k - 1


@njit
def softmax_t_pmf(q, log_t, out):
    k = q.shape[0]
    hi = -np.inf
    for i in range(k):
        hi = max(hi, q[i] * log_t)
    s = 0.0
    for i in range(k):
        out[i] = math.exp(q[i] * log_t - hi)
        s += out[i]
    for i in range(k):
        out[i] /= s


@njit
def eps_greedy_pmf(q, eps, out):
    k = q.shape[0]
    best = 0
    for i in range(1, k):
        if q[i] > q[best]:
            best = i
    for i in range(k):
        out[i] = eps / k
    out[best] += 1.0 - eps


def build_cdf(qs, floor=FLOOR):
    """Cumulative distribution of ``qs`` mixed with uniform at mass ``floor`` per entry.

    Returns ``(cdf, total)``.  All-zero input gives the uniform CDF.
    """
    qs = np.asarray(qs, dtype=np.float64)
    if qs.ndim != 1 or qs.size == 0:
        raise ContractError("build_cdf needs a non-empty vector")
    if np.any(qs < 0) or not np.all(np.isfinite(qs)):
        raise ContractError("build_cdf entries must be finite and >= 0")
    if floor * qs.size > 1:
        raise ContractError("floor too large for the number of entries")
    pmf = np.empty_like(qs)
    total = floor_pmf(qs, pmf, float(floor))
    cdf = np.empty_like(qs)
    pmf_to_cdf(pmf, cdf)
    return cdf, float(total)


def sample_cdf(cdf, u):
    """Smallest index with ``cdf[index] > u`` and its probability mass."""
    cdf = np.asarray(cdf, dtype=np.float64)
    if not 0.0 <= u < 1.0:
        raise ContractError("u must lie in [0, 1)")
    i = cdf_pick(cdf, float(u))
    return int(i), float(cdf[i] - (cdf[i - 1] if i else 0.0))


def _pick(pmf, u):
    cdf = np.empty_like(pmf)
    pmf_to_cdf(pmf, cdf)
    i = cdf_pick(cdf, float(u))
    return int(i), float(pmf[i])


def softmax_temperature_select(q, temperature, u):
    """Pick i with probability T**q_i / sum_k T**q_k."""
    q = np.asarray(q, dtype=np.float64)
    if not temperature > 0 or not np.all(np.isfinite(q)):
        raise ContractError("temperature must be > 0 and q finite")
    pmf = np.empty_like(q)
    softmax_t_pmf(q, math.log(temperature), pmf)
    return _pick(pmf, u)


def epsilon_greedy_select(q, epsilon, u):
    """Uniform with probability epsilon, else argmax (lowest index on ties)."""
    q = np.asarray(q, dtype=np.float64)
    if not 0.0 <= epsilon <= 1.0:
        raise ContractError("epsilon must lie in [0, 1]")
    pmf = np.empty_like(q)
    eps_greedy_pmf(q, float(epsilon), pmf)
    return _pick(pmf, u)


# ---------------------------------------------------------------------------
# temporal-difference table
# ---------------------------------------------------------------------------

@njit
def _octant(v):
    return (1 if v[0] > 0.0 else 0) | (2 if v[1] > 0.0 else 0) | (4 if v[2] > 0.0 else 0)


@njit
def optimistic_row(q, visits, out):
    """Copy a table row, giving unvisited lights the best visited value so each gets tried."""
    best = 0.0
    for i in range(q.shape[0]):
        if visits[i] > 0 and q[i] > best:
            best = q[i]
    for i in range(q.shape[0]):
        out[i] = q[i] if visits[i] > 0 else best


@njit
def td_state(x, n, r, lo, ext, res):
    return (cell_index(x, lo, ext, res) * 8 + _octant(n)) * 8 + _octant(r)


@njit
def td_apply(q, visits, states, lights, values, valid):
    for k in range(states.shape[0]):
        if not valid[k]:
            continue
        s = states[k]
        i = lights[k]
        alpha = 1.0 / (1.0 + visits[s, i])
        q[s, i] = (1.0 - alpha) * q[s, i] + alpha * values[k]
        visits[s, i] += 1


@dataclass
class TDTable:
    lo: np.ndarray
    hi: np.ndarray
    lights: int
    res: int = 16
    q: np.ndarray = None
    visits: np.ndarray = None

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        n = self.res ** 3 * 64
        if self.q is None:
            self.q = np.zeros((n, self.lights))
        if self.visits is None:
            self.visits = np.zeros((n, self.lights), dtype=np.int64)

    @classmethod
    def for_scene(cls, scene, res=16):
        lo, hi = scene.bbox
        return cls(lo, hi, scene.light_count, res)

    def state(self, x, n, r):
        f = lambda v: tuple(map(float, v))
        return int(td_state(f(x), f(n), f(r), self.lo, self.hi - self.lo, self.res))


def td_update(table, s, i, c, alpha=None):
    """Q'(s, i) = (1 - alpha) Q(s, i) + alpha c; alpha defaults to 1 / (1 + visits)."""
    if alpha is None:
        alpha = 1.0 / (1.0 + table.visits[s, i])
    if not 0.0 <= alpha <= 1.0:
        raise ContractError("alpha must lie in [0, 1]")
    table.q[s, i] = (1.0 - alpha) * table.q[s, i] + alpha * c
    table.visits[s, i] += 1
    return table.q[s, i]


# ---------------------------------------------------------------------------
# online render-and-train loop
# ---------------------------------------------------------------------------

@njit
def online_pass(ptype, pgeo, pmat, mats, lights, larea, cam, width, height, t0, count, seed, mode,
                params, sizes, acts, offs, aoff, tdq, tdv, lo, ext, res, eps, log_t, floor,
                accum, hits, lidx, rec_x, rec_l, rec_p, rec_c, rec_s, rec_ok):
    """Render ``count`` samples of the flattened sequence starting at ``t0``.

    Each sample picks its pixel from dims 0 and 1, selects a light with
    dim 2 and samples a point on it with dims 3 and 4.  Records land in
    ``rec_*`` at the sample's offset within the pass.
    """
    k = lights.shape[0]
    tot = aoff[acts.shape[0]] + sizes[acts.shape[0]]
    a = np.zeros(tot)
    z = np.zeros(tot)
    feat = np.zeros(9)
    pmf = np.zeros(k)
    cdf = np.zeros(k)
    row = np.zeros(k)
    base = seed_base(seed)
    for j in range(count):
        t = base + t0 + j
        fx = sample(t, 0, seed) * width
        fy = sample(t, 1, seed) * height
        px = min(int(fx), width - 1)
        py = min(int(fy), height - 1)
        hits[py, px] += 1
        rec_ok[j] = False
        o, d = camera_ray(cam, width, height, fx, fy)
        th, prim = intersect_scene(ptype, pgeo, o, d, 0.0, np.inf)
        if prim < 0:
            continue
        x = (o[0] + th * d[0], o[1] + th * d[1], o[2] + th * d[2])
        n = facing(front_normal(ptype, pgeo, prim, x), d)
        wo = (-d[0], -d[1], -d[2])
        le = emitted(ptype, pgeo, pmat, mats, prim, x, wo)
        for c in range(3):
            accum[py, px, c] += le[c]
        if k == 0:
            continue
        for c in range(3):
            feat[c] = (x[c] - lo[c]) / ext[c]
            feat[3 + c] = n[c]
            feat[6 + c] = d[c]
        s = td_state(x, n, d, lo, ext, res)
        if mode == 1 or mode == 3 or mode == 4:
            optimistic_row(tdq[s], tdv[s], row)
        if mode == 0:
            for i in range(k):
                pmf[i] = 1.0 / k
        elif mode == 1:
            floor_pmf(row, pmf, floor)
        elif mode == 2:
            out = mlp_forward(params, sizes, acts, offs, aoff, feat, a, z)
            for i in range(k):
                pmf[i] = out[i]
            floor_pmf(pmf.copy(), pmf, floor)
        elif mode == 3:
            eps_greedy_pmf(row, eps, pmf)
        else:
            softmax_t_pmf(row, log_t, pmf)
        pmf_to_cdf(pmf, cdf)
        l = cdf_pick(cdf, sample(t, 2, seed))
        m = pmat[prim]
        cc = direct_contribution(ptype, pgeo, pmat, mats, lights, larea, x, n, wo, m, l,
                                 sample(t, 3, seed), sample(t, 4, seed))
        p = pmf[l]
        for c in range(3):
            accum[py, px, c] += cc[c] / p
            rec_c[j, c] = cc[c]
        for c in range(9):
            rec_x[j, c] = feat[c]
        lidx[py, px] = l
        rec_l[j] = l
        rec_p[j] = p
        rec_s[j] = s
        rec_ok[j] = True


@dataclass
class SampleRecords:
    """Per-sample state (normalized position, normal, direction), choice and contribution."""
    features: np.ndarray
    light: np.ndarray
    prob: np.ndarray
    contribution: np.ndarray
    state: np.ndarray
    valid: np.ndarray

    @classmethod
    def empty(cls, n):
        return cls(np.zeros((n, 9)), np.zeros(n, np.int64), np.ones(n), np.zeros((n, 3)),
                   np.zeros(n, np.int64), np.zeros(n, np.bool_))

    def weights(self):
        lum = self.contribution @ np.array([0.2126, 0.7152, 0.0722])
        return np.where(self.valid, lum / self.prob, 0.0)


@dataclass
class OnlineResult:
    image: np.ndarray
    light_index: np.ndarray
    net: TinyMLP = None
    table: TDTable = None
    trace: list = field(default_factory=list)
    records: SampleRecords = None
    sample_counts: np.ndarray = None


def light_selection_net(lights, hidden=(64, 64), seed=0):
    """Softmax network over ``lights`` classes, starting at the uniform policy."""
    return TinyMLP([9, *hidden, lights], ["relu"] * len(hidden) + ["softmax"], seed=seed, zero_output=True)


def render_with_online_learning(scene, width, height, iterations=16, batches=64, rate=5e-2, selector="net",
                                batch_size=64, epochs=16, seed=0, net=None, table=None, epsilon=0.1,
                                temperature=2.0, floor=FLOOR, callback=None):
    """Progressive direct-lighting render that retrains its light selector after every iteration.

    Every iteration draws ``batches * batch_size`` samples of one flattened
    low-discrepancy sequence, choosing pixels from the first two dimensions,
    accumulates them into the image and stores a record per sample.  The
    selector is then refitted on that iteration's records only: the network
    by importance-weighted NLL, the table by running-average TD updates.
    ``callback(iteration, image, mean_loss)`` may observe progress.
    """
    if selector not in _SEL_CODE:
        raise ContractError(f"unknown selector {selector!r}")
    if width <= 0 or height <= 0 or iterations <= 0 or batches <= 0:
        raise ContractError("sizes and counts must be positive")
    seed = check_seed(seed)
    ptype, pgeo, pmat, mats, lights, larea = scene.kernel_data
    k = len(lights)
    if k == 0:
        raise ContractError("scene has no lights")
    mode = _SEL_CODE[selector]
    if net is None:
        net = light_selection_net(k, seed=seed)
    if net.sizes[0] != 9 or net.sizes[-1] != k:
        raise ContractError("selection network arity must be 9 -> light count")
    if table is None:
        table = TDTable.for_scene(scene)
    cam = scene.camera.kernel_data(width, height)
    accum = np.zeros((height, width, 3))
    hits = np.zeros((height, width), np.int64)
    lidx = np.full((height, width), -1, np.int64)
    per = batches * batch_size
    rec = SampleRecords.empty(per)
    trace = []
    log_t = math.log(temperature) if temperature > 0 else 0.0
    ext = table.hi - table.lo
    for it in range(iterations):
        online_pass(ptype, pgeo, pmat, mats, lights, larea, cam, width, height, it * per, per, seed, mode,
                    *net.kernel_args(), table.q, table.visits, table.lo, ext, table.res, float(epsilon), log_t,
                    float(floor),
                    accum, hits, lidx, rec.features, rec.light, rec.prob, rec.contribution, rec.state, rec.valid)
        loss = float("nan")
        if mode == 2:
            w = rec.weights()
            if w.sum() > 0:
                w = w / w.mean()
                batch = MiniBatch(rec.features, labels=rec.light, weights=w)
                losses = net.fit(batch, "nll", epochs=epochs, rate=rate * 0.5 ** min(3, 4 * it // iterations),
                                 batch_size=batch_size, seed=seed, epoch0=it * epochs, decay=False)
                loss = float(np.mean(losses))
        elif mode in (1, 3, 4):
            lum = rec.contribution @ np.array([0.2126, 0.7152, 0.0722])
            td_apply(table.q, table.visits, rec.state, rec.light, lum, rec.valid)
        image = accum / np.maximum(hits, 1)[..., None]
        trace.append({"iteration": it, "samples": (it + 1) * per, "mean_loss": loss})
        if callback is not None:
            callback(it, image, loss)
    image = accum / np.maximum(hits, 1)[..., None]
    return OnlineResult(image, lidx, net if mode == 2 else None, table if mode != 2 and mode != 0 else None,
                        trace, rec, hits)
