"""Reinforcement-learned path guiding.

Incident radiance Q(x, w) is learned either in a table (:class:`QGrid`,
spatial cells x equal-area octahedral direction bins) or by a network
(:class:`QNetwork`) trained online on the residual between its current
value and a bootstrapped one-sample estimate of the transport equation.

Guided directions are drawn from the mixture

    p(w) = eps * cos/pi + (1 - eps) * (Q[bin(w)] + Q[bin(R w)]) / (sum(Q) * bin_solid_angle)

over the hemisphere at the shading normal n, where R reflects through the
tangent plane.  Sampling picks a bin proportional to Q, a uniform point in
it, and folds it to the upper side when it lands below; the fold is why the
mirrored bin appears in the density, and it keeps the density normalized
for any normal orientation.
"""
import csv
import math
from dataclasses import dataclass

import numpy as np

from ._jit import njit
from .errors import ContractError, TrainingError
from .geometry import (INV_PI, bsdf_eval, bsdf_sample, cosine_sample, emitted, facing,
                       front_normal, intersect_scene, sample_primitive, spawn)
from .nn import TinyMLP, mlp_backprop_delta, mlp_forward
from .qmc import sample
from .vecmath import dot, luminance, madd, neg, normalize

BINS_1D = 8
N_BINS = BINS_1D * BINS_1D
BIN_SOLID_ANGLE = 4.0 * math.pi / N_BINS


# ---------------------------------------------------------------------------
# equal-area octahedral map
# ---------------------------------------------------------------------------

@njit
def sphere_to_square(d):
    x = abs(d[0])
    y = abs(d[1])
    z = abs(d[2])
    r = math.sqrt(max(0.0, 1.0 - z))
    a = max(x, y)
    b = min(x, y)
    b = 0.0 if a == 0.0 else b / a
    phi = math.atan(b) * 2.0 / math.pi
    if x < y:
        phi = 1.0 - phi
    v = phi * r
    u = r - v
    if d[2] < 0.0:
        u, v = v, u
        u = 1.0 - u
        v = 1.0 - v
    u = math.copysign(u, d[0])
    v = math.copysign(v, d[1])
    return 0.5 * (u + 1.0), 0.5 * (v + 1.0)


@njit
def square_to_sphere(px, py):
    u = 2.0 * px - 1.0
    v = 2.0 * py - 1.0
    up = abs(u)
    vp = abs(v)
    sd = 1.0 - (up + vp)
    r = 1.0 - abs(sd)
    phi = (1.0 if r == 0.0 else (vp - up) / r + 1.0) * math.pi / 4.0
    z = math.copysign(1.0 - r * r, sd)
    s = r * math.sqrt(max(0.0, 2.0 - r * r))
    return (math.copysign(math.cos(phi), u) * s, math.copysign(math.sin(phi), v) * s, z)


@njit
def direction_bin(d):
    px, py = sphere_to_square(d)
    ix = min(int(px * BINS_1D), BINS_1D - 1)
    iy = min(int(py * BINS_1D), BINS_1D - 1)
    return iy * BINS_1D + ix


@njit
def cell_index(p, lo, ext, res):
    c = 0
    for k in range(3):
        i = int((p[k] - lo[k]) / ext[k] * res)
        if i < 0:
            i = 0
        elif i >= res:
            i = res - 1
        c = c * res + i
    return c


@njit
def reflect_tangent(w, n):
    c = 2.0 * dot(w, n)
    return (w[0] - c * n[0], w[1] - c * n[1], w[2] - c * n[2])


@njit
def guided_pdf_row(qrow, n, w, eps):
    cos = dot(n, w)
    if cos <= 0.0:
        return 0.0
    pc = cos * INV_PI
    total = 0.0
    for b in range(qrow.shape[0]):
        total += qrow[b]
    if total <= 0.0:
        return pc
    pg = (qrow[direction_bin(w)] + qrow[direction_bin(reflect_tangent(w, n))]) / (total * BIN_SOLID_ANGLE)
    return eps * pc + (1.0 - eps) * pg


@njit
def guided_sample_row(qrow, n, u1, u2, eps):
    """Sample the cosine/Q mixture; returns (direction, pdf, fell_back_to_cosine)."""
    total = 0.0
    for b in range(qrow.shape[0]):
        total += qrow[b]
    if total <= 0.0:
        w = cosine_sample(n, u1, u2)
        return w, max(dot(n, w), 0.0) * INV_PI, True
    if u1 < eps:
        w = cosine_sample(n, u1 / eps, u2)
    else:
        u = (u1 - eps) / (1.0 - eps) * total
        b = 0
        acc = 0.0
        last = 0
        for k in range(qrow.shape[0]):
            if qrow[k] > 0.0:
                last = k
                if acc + qrow[k] > u:
                    b = k
                    break
                acc += qrow[k]
        else:
            b = last
            acc = total - qrow[last]
        fx = min(max((u - acc) / qrow[b], 0.0), 1.0 - 1e-12)
        px = ((b % BINS_1D) + fx) / BINS_1D
        py = ((b // BINS_1D) + u2) / BINS_1D
        w = square_to_sphere(px, py)
        if dot(w, n) < 0.0:
            w = reflect_tangent(w, n)
        w = normalize(w)
    return w, guided_pdf_row(qrow, n, w, eps), False


# ---------------------------------------------------------------------------
# tabular Q
# ---------------------------------------------------------------------------

@dataclass
class QGrid:
    lo: np.ndarray
    hi: np.ndarray
    res: int = 16
    q: np.ndarray = None
    visits: np.ndarray = None
    reflected: np.ndarray = None

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=np.float64)
        self.hi = np.asarray(self.hi, dtype=np.float64)
        n = self.res ** 3
        if self.q is None:
            self.q = np.zeros((n, N_BINS))
        if self.visits is None:
            self.visits = np.zeros((n, N_BINS), dtype=np.int64)
        if self.reflected is None:
            self.reflected = np.zeros((n, N_BINS))

    @classmethod
    def for_scene(cls, scene, res=16):
        lo, hi = scene.bbox
        return cls(lo, hi, res)

    @property
    def ext(self):
        return self.hi - self.lo

    def cell(self, x):
        return cell_index(tuple(map(float, x)), self.lo, self.ext, self.res)

    def lookup(self, x, w):
        return self.q[self.cell(x), direction_bin(tuple(map(float, w)))]

    @staticmethod
    def bin_solid_angles():
        return np.full(N_BINS, BIN_SOLID_ANGLE)

    def dump(self, path):
        """CSV rows (cell, bin, q, visits) for every visited bin."""
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["cell", "bin", "q", "visits"])
            for c, b in zip(*np.nonzero(self.visits)):
                out.writerow([int(c), int(b), repr(float(self.q[c, b])), int(self.visits[c, b])])


@njit
def q_update_value(old, emitted_lum, weights, q_next, alpha):
    """(1 - alpha) * old + alpha * (Le + mean(weight * Q_next)), clamped at 0."""
    est = 0.0
    for k in range(weights.shape[0]):
        est += weights[k] * q_next[k]
    if weights.shape[0] > 0:
        est /= weights.shape[0]
    v = (1.0 - alpha) * old + alpha * (emitted_lum + est)
    return v if v > 0.0 else 0.0


@njit
def apply_updates(q, visits, cells, bins, targets, n):
    """Running-average updates with alpha = 1 / (1 + visits), in array order."""
    for k in range(n):
        c = cells[k]
        b = bins[k]
        if c < 0:
            continue
        alpha = 1.0 / (1.0 + visits[c, b])
        v = (1.0 - alpha) * q[c, b] + alpha * targets[k]
        q[c, b] = v if v > 0.0 else 0.0
        visits[c, b] += 1


@njit
def apply_dual_updates(q, reflected, visits, cells, bins, targets, reflected_targets, n):
    """``apply_updates`` for the full and the reflected-only tables, which share one visit count."""
    for k in range(n):
        c = cells[k]
        b = bins[k]
        if c < 0:
            continue
        alpha = 1.0 / (1.0 + visits[c, b])
        v = (1.0 - alpha) * q[c, b] + alpha * targets[k]
        q[c, b] = v if v > 0.0 else 0.0
        v = (1.0 - alpha) * reflected[c, b] + alpha * reflected_targets[k]
        reflected[c, b] = v if v > 0.0 else 0.0
        visits[c, b] += 1


@njit
def optimistic_rows(values, visits, out):
    """Copy ``values``, giving never-visited bins the best visited value of their cell.

    A bin that was never tried would otherwise keep only the cosine share of
    the mixture and produce fireflies once a path finally goes there.
    """
    for c in range(values.shape[0]):
        best = 0.0
        for b in range(values.shape[1]):
            if visits[c, b] > 0 and values[c, b] > best:
                best = values[c, b]
        for b in range(values.shape[1]):
            out[c, b] = values[c, b] if visits[c, b] > 0 else best


def q_update(grid, x, omega, y, samples, alpha=None, scene=None):
    """Tabular update of Q(x, omega) from the shading point ``y`` it sees.

    ``samples`` is a list of ``(wi, bsdf_cos, pdf, q_next)`` one-sample
    estimates of the scattering integral at ``y``; ``alpha`` defaults to the
    running-average schedule ``1 / (1 + visits)``.
    """
    c = grid.cell(x)
    b = direction_bin(tuple(map(float, omega)))
    if alpha is None:
        alpha = 1.0 / (1.0 + grid.visits[c, b])
    if not 0.0 <= alpha <= 1.0:
        raise ContractError("alpha must lie in [0, 1]")
    le = 0.0
    if scene is not None and y is not None:
        ptype, pgeo, pmat, mats = scene.kernel_data[:4]
        le = luminance(emitted(ptype, pgeo, pmat, mats, y.primitive, tuple(y.position), tuple(-np.asarray(omega))))
    elif y is not None and getattr(y, "emission", None) is not None:
        le = float(y.emission)
    w = np.array([luminance(tuple(np.broadcast_to(s[1], 3))) / s[2] for s in samples], dtype=np.float64)
    qn = np.array([s[3] for s in samples], dtype=np.float64)
    grid.q[c, b] = q_update_value(grid.q[c, b], le, w, qn, float(alpha))
    grid.visits[c, b] += 1
    return grid.q[c, b]


def guided_scatter_direction(grid, sp, u, eps=0.1):
    """(direction, pdf, fell_back) at shading point ``sp``."""
    row = grid.q[grid.cell(sp.position)]
    w, pdf, fb = guided_sample_row(row, tuple(map(float, sp.normal)), float(u[0]), float(u[1]), float(eps))
    return np.array(w), pdf, fb


def guided_pdf(grid, sp, w, eps=0.1):
    row = grid.q[grid.cell(sp.position)]
    return guided_pdf_row(row, tuple(map(float, sp.normal)), tuple(map(float, w)), float(eps))


# ---------------------------------------------------------------------------
# neural Q trained on the transport residual
# ---------------------------------------------------------------------------

class QNetwork:
    """Q(x, w) as a 9-input network: bbox-normalized position, normal, direction."""

    def __init__(self, lo, hi, hidden=(64, 64), seed=0, net=None):
        self.lo = np.asarray(lo, dtype=np.float64)
        self.hi = np.asarray(hi, dtype=np.float64)
        self.net = net or TinyMLP([9, *hidden, 1], ["relu"] * len(hidden) + ["identity"], seed=seed)

    @classmethod
    def for_scene(cls, scene, **kw):
        lo, hi = scene.bbox
        return cls(lo, hi, **kw)

    def features(self, x, n, w):
        return np.concatenate([(np.asarray(x) - self.lo) / (self.hi - self.lo), n, w])

    def raw(self, x, n, w):
        return float(self.net(self.features(x, n, w))[0])

    def __call__(self, x, n, w):
        return max(0.0, self.raw(x, n, w))

    def copy(self):
        return QNetwork(self.lo, self.hi, net=self.net.copy())


def residual_target(qnet, x, omega, y, scatter, scene, frozen=None):
    """Bootstrapped target and residual for Q(x, omega) with ``y = h(x, omega)``.

    ``x`` and ``y`` are shading points, ``scatter`` is ``(wi, bsdf_cos, pdf)``
    at ``y``.  The bootstrapped term uses ``frozen`` (default: ``qnet``) so
    gradients never flow through it.
    """
    frozen = frozen or qnet
    ptype, pgeo, pmat, mats = scene.kernel_data[:4]
    target = 0.0
    if y is not None:
        target = luminance(emitted(ptype, pgeo, pmat, mats, y.primitive, tuple(y.position),
                                   tuple(-np.asarray(omega, float))))
        wi, bsdf_cos, pdf = scatter
        if pdf > 0:
            target += luminance(tuple(np.broadcast_to(bsdf_cos, 3))) / pdf * frozen(y.position, y.normal, wi)
    dq = qnet.raw(x.position, x.normal, omega) - target
    return target, dq


@njit
def _train_q_kernel(ptype, pgeo, pmat, mats, prim_cdf, params, frozen, sizes, acts, offs, aoff,
                    lo, ext, n_paths, index0, max_vertices, rate, refresh, trace_every, seed):
    tot = aoff[acts.shape[0]] + sizes[acts.shape[0]]
    a = np.zeros(tot)
    z = np.zeros(tot)
    delta = np.zeros(tot)
    grad = np.zeros(params.shape[0])
    feat = np.zeros(9)
    trace = np.zeros((n_paths + trace_every - 1) // trace_every)
    acc = 0.0
    cnt = 0
    steps = 0
    nprim = prim_cdf.shape[0]
    top = aoff[acts.shape[0]]
    for path in range(n_paths):
        idx = index0 + path
        lr = rate * 0.5 ** min(3, (4 * path) // n_paths)
        us = sample(idx, 0, seed)
        prim = nprim - 1
        for k in range(nprim):
            if us < prim_cdf[k]:
                prim = k
                break
        x, n = sample_primitive(ptype, pgeo, prim, sample(idx, 1, seed), sample(idx, 2, seed))
        w = cosine_sample(n, sample(idx, 3, seed), sample(idx, 4, seed))
        dim = 5
        for v in range(max_vertices):
            o = spawn(x, n, w)
            t, hit = intersect_scene(ptype, pgeo, o, w, 0.0, np.inf)
            target = 0.0
            alive = False
            if hit >= 0:
                y = madd(o, w, t)
                ny = facing(front_normal(ptype, pgeo, hit, y), w)
                wo = neg(w)
                target = luminance(emitted(ptype, pgeo, pmat, mats, hit, y, wo))
                m = pmat[hit]
                wi, pdf = bsdf_sample(mats, m, ny, wo, sample(idx, dim, seed), sample(idx, dim + 1, seed))
                dim += 2
                if pdf > 0.0:
                    f = bsdf_eval(mats, m, ny, wo, wi)
                    wt = luminance(f) * max(dot(ny, wi), 0.0) / pdf
                    for k in range(3):
                        feat[k] = (y[k] - lo[k]) / ext[k]
                        feat[3 + k] = ny[k]
                        feat[6 + k] = wi[k]
                    qn = mlp_forward(frozen, sizes, acts, offs, aoff, feat, a, z)[0]
                    target += wt * max(qn, 0.0)
                    alive = wt > 0.0
            for k in range(3):
                feat[k] = (x[k] - lo[k]) / ext[k]
                feat[3 + k] = n[k]
                feat[6 + k] = w[k]
            qx = mlp_forward(params, sizes, acts, offs, aoff, feat, a, z)[0]
            dq = qx - target
            if not math.isfinite(dq):
                return trace, path
            for k in range(grad.shape[0]):
                grad[k] = 0.0
            delta[top] = 2.0 * dq
            mlp_backprop_delta(params, sizes, acts, offs, aoff, a, z, delta, grad)
            for k in range(grad.shape[0]):
                params[k] -= lr * grad[k]
            acc += dq * dq
            cnt += 1
            steps += 1
            if steps % refresh == 0:
                frozen[:] = params
            if not alive:
                break
            x = y
            n = ny
            w = wi
        if (path + 1) % trace_every == 0 or path == n_paths - 1:
            trace[path // trace_every] = acc / max(cnt, 1)
            acc = 0.0
            cnt = 0
    return trace, -1


@dataclass
class QTrainResult:
    qnet: QNetwork
    loss_trace: np.ndarray
    paths: int
    trace_every: int = 1000


def train_q_network_online(qnet, scene, budget, rate=1e-2, max_vertices=6, refresh=64, trace_every=1000,
                           seed=0, index0=0):
    """Semi-gradient training of ``qnet`` on squared residuals along QMC paths.

    Each of the ``budget`` paths starts at an area-uniform surface point with
    a cosine-distributed direction and is used exactly once; every vertex
    contributes one SGD step.  The bootstrapped target network is refreshed
    every ``refresh`` steps.  The returned loss trace holds the mean squared
    residual of each block of ``trace_every`` paths.
    """
    if budget <= 0:
        raise ContractError("training budget must be positive")
    ptype, pgeo, pmat, mats = scene.kernel_data[:4]
    areas = scene.surface_areas()
    cdf = np.cumsum(areas) / areas.sum()
    cdf[-1] = 1.0
    net = qnet.net
    frozen = net.params.copy()
    trace, failed = _train_q_kernel(ptype, pgeo, pmat, mats, cdf, net.params, frozen, net._sizes, net._acts,
                                    net._offs, net._aoff, qnet.lo, qnet.hi - qnet.lo, int(budget), int(index0),
                                    int(max_vertices), float(rate), int(refresh), int(trace_every), int(seed))
    net.version += 1
    if failed >= 0:
        raise TrainingError(f"non-finite residual at path index {index0 + failed}")
    return QTrainResult(qnet, trace, int(budget), trace_every)
