"""Scene representation, ray casting, BSDFs and light sampling.

A :class:`Scene` is assembled in Python and then frozen into flat numpy
arrays (``Scene.kernel_data``) which the compiled kernels consume:

* ``ptype``  (P,)   primitive kind: SPHERE, QUAD or TRIANGLE
* ``pgeo``   (P,12) sphere: center, signed radius; quad/triangle: p0, e1, e2, unit front normal
* ``pmat``   (P,)   material row per primitive
* ``mats``   (M,8)  kind, albedo rgb, glossy exponent, emission rgb
* ``lights`` (L,)   primitive index of every emitter
* ``larea``  (L,)   emitter surface area

A negative sphere radius flips the front side inward, which is how closed
spherical enclosures are described.  Emission is one-sided: only the front
side of an emitter radiates.
"""
import math
from dataclasses import dataclass

import numpy as np

from ._jit import njit
from .errors import ContractError
from .vecmath import cross, dot, madd, neg, normalize, onb, to_world

SPHERE, QUAD, TRIANGLE = 0, 1, 2
DIFFUSE, GLOSSY = 0, 1
RAY_EPS = 1e-4
INV_PI = 1.0 / math.pi

_KINDS = {"diffuse": DIFFUSE, "glossy": GLOSSY}
_PRIMS = {"sphere": SPHERE, "quad": QUAD, "triangle": TRIANGLE}


@dataclass(frozen=True)
class Material:
    kind: str = "diffuse"
    albedo: tuple = (0.5, 0.5, 0.5)
    exponent: float = 0.0
    emission: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ContractError(f"unknown material kind {self.kind!r}")
        if any(not (0.0 <= a < 1.0) for a in self.albedo):
            raise ContractError("albedo components must lie in [0, 1)")
        if self.exponent < 0:
            raise ContractError("glossy exponent must be >= 0")
        if any(not math.isfinite(e) or e < 0 for e in self.emission):
            raise ContractError("emission must be finite and >= 0")

    @property
    def emissive(self):
        return any(e > 0 for e in self.emission)

    def row(self):
        return [float(_KINDS[self.kind]), *map(float, self.albedo), float(self.exponent), *map(float, self.emission)]


@dataclass
class Camera:
    position: tuple = (0.0, 0.0, 0.0)
    look_at: tuple = (0.0, 0.0, -1.0)
    up: tuple = (0.0, 1.0, 0.0)
    fov: float = 40.0

    def kernel_data(self, width, height):
        pos = np.asarray(self.position, float)
        fwd = np.asarray(self.look_at, float) - pos
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(self.up, float))
        right /= np.linalg.norm(right)
        up = np.cross(right, fwd)
        tan_half = math.tan(math.radians(self.fov) * 0.5)
        return np.concatenate([pos, fwd, right, up, [tan_half, width / height]])


@dataclass
class Ray:
    origin: tuple
    direction: tuple
    t_min: float = 0.0
    t_max: float = math.inf

    def __post_init__(self):
        if self.t_min < 0 or not self.t_min < self.t_max:
            raise ContractError("ray requires 0 <= t_min < t_max")
        if abs(float(np.linalg.norm(self.direction)) - 1.0) > 1e-6:
            raise ContractError("ray direction must be normalized")


@dataclass
class ShadingPoint:
    position: np.ndarray
    normal: np.ndarray
    wo: np.ndarray
    material: int
    primitive: int
    is_light: bool
    t: float = 0.0


class Scene:
    """Mutable builder until :meth:`kernel_data` is first requested."""

    def __init__(self, name="scene", camera=None):
        self.name = name
        self.camera = camera or Camera()
        self.materials = []
        self._mat_index = {}
        self.prims = []  # (kind, geo list, material index)
        self._frozen = None

    # -- construction -----------------------------------------------------
    def material(self, name, material):
        if name in self._mat_index:
            raise ContractError(f"duplicate material {name!r}")
        self._mat_index[name] = len(self.materials)
        self.materials.append(material)
        return self._mat_index[name]

    def _mat(self, material):
        if isinstance(material, str):
            try:
                return self._mat_index[material]
            except KeyError:
                raise ContractError(f"unknown material {material!r}") from None
        return int(material)

    def _add(self, kind, geo, material):
        if self._frozen is not None:
            raise ContractError("scene is immutable once frozen")
        geo = list(map(float, geo)) + [0.0] * (12 - len(geo))
        self.prims.append((kind, geo, self._mat(material)))
        return len(self.prims) - 1

    def add_sphere(self, center, radius, material, inward=False):
        r = abs(float(radius))
        return self._add(SPHERE, [*center, -r if inward else r], material)

    def add_quad(self, origin, edge1, edge2, material):
        """Parallelogram ``origin + u*edge1 + v*edge2``; front normal is edge1 x edge2."""
        n = np.cross(edge1, edge2)
        n = n / np.linalg.norm(n)
        return self._add(QUAD, [*origin, *edge1, *edge2, *n], material)

    def add_triangle(self, v0, v1, v2, material):
        e1 = np.subtract(v1, v0)
        e2 = np.subtract(v2, v0)
        n = np.cross(e1, e2)
        n = n / np.linalg.norm(n)
        return self._add(TRIANGLE, [*v0, *e1, *e2, *n], material)

    def add_box(self, lo, hi, material, skip=()):
        """Axis-aligned box from outward-facing quads; ``skip`` names faces to omit."""
        x0, y0, z0 = lo
        x1, y1, z1 = hi
        dx, dy, dz = x1 - x0, y1 - y0, z1 - z0
        faces = {
            "-x": ((x0, y0, z0), (0, 0, dz), (0, dy, 0)),
            "+x": ((x1, y0, z0), (0, dy, 0), (0, 0, dz)),
            "-y": ((x0, y0, z0), (dx, 0, 0), (0, 0, dz)),
            "+y": ((x0, y1, z0), (0, 0, dz), (dx, 0, 0)),
            "-z": ((x0, y0, z0), (0, dy, 0), (dx, 0, 0)),
            "+z": ((x0, y0, z1), (dx, 0, 0), (0, dy, 0)),
        }
        return [self.add_quad(o, a, b, material) for k, (o, a, b) in faces.items() if k not in skip]

    # -- frozen arrays ----------------------------------------------------
    @property
    def kernel_data(self):
        if self._frozen is None:
            self._frozen = self._freeze()
        return self._frozen

    def _freeze(self):
        if not self.prims:
            raise ContractError("scene has no primitives")
        ptype = np.array([p[0] for p in self.prims], dtype=np.int64)
        pgeo = np.array([p[1] for p in self.prims], dtype=np.float64)
        pmat = np.array([p[2] for p in self.prims], dtype=np.int64)
        mats = np.array([m.row() for m in self.materials], dtype=np.float64).reshape(-1, 8)
        lights = np.array([i for i, p in enumerate(self.prims) if self.materials[p[2]].emissive], dtype=np.int64)
        larea = np.array([primitive_area(ptype[i], pgeo[i]) for i in lights], dtype=np.float64)
        return (ptype, pgeo, pmat, mats, lights, larea)

    @property
    def light_count(self):
        return len(self.kernel_data[4])

    @property
    def bbox(self):
        lo = np.full(3, np.inf)
        hi = np.full(3, -np.inf)
        for kind, g, _ in self.prims:
            g = np.asarray(g)
            if kind == SPHERE:
                r = abs(g[3])
                pts = np.array([g[:3] - r, g[:3] + r])
            else:
                o, e1, e2 = g[0:3], g[3:6], g[6:9]
                pts = np.array([o, o + e1, o + e2, o + e1 + e2] if kind == QUAD else [o, o + e1, o + e2])
            lo = np.minimum(lo, pts.min(axis=0))
            hi = np.maximum(hi, pts.max(axis=0))
        # degenerate axes (flat scenes) get a little thickness
        pad = np.where(hi - lo < 1e-6, 1e-3, 0.0)
        return np.stack([lo - pad, hi + pad])

    def surface_areas(self):
        ptype, pgeo = self.kernel_data[:2]
        return np.array([primitive_area(ptype[i], pgeo[i]) for i in range(len(ptype))])


def primitive_area(kind, g):
    if kind == SPHERE:
        return 4.0 * math.pi * g[3] * g[3]
    a = float(np.linalg.norm(np.cross(g[3:6], g[6:9])))
    return a if kind == QUAD else 0.5 * a


# ---------------------------------------------------------------------------
# kernels
# ---------------------------------------------------------------------------

@njit
def _hit_sphere(g, i, o, d, tmin, tmax):
    r = g[i, 3]
    oc = (o[0] - g[i, 0], o[1] - g[i, 1], o[2] - g[i, 2])
    b = dot(oc, d)
    c = dot(oc, oc) - r * r
    disc = b * b - c
    if disc < 0.0:
        return -1.0
    s = math.sqrt(disc)
    t = -b - s
    if t > tmin and t < tmax:
        return t
    t = -b + s
    if t > tmin and t < tmax:
        return t
    return -1.0


@njit
def _hit_planar(g, i, o, d, tmin, tmax, triangle):
    e1 = (g[i, 3], g[i, 4], g[i, 5])
    e2 = (g[i, 6], g[i, 7], g[i, 8])
    pvec = cross(d, e2)
    det = dot(e1, pvec)
    if abs(det) < 1e-14:
        return -1.0
    inv = 1.0 / det
    tvec = (o[0] - g[i, 0], o[1] - g[i, 1], o[2] - g[i, 2])
    u = dot(tvec, pvec) * inv
    if u < 0.0 or u > 1.0:
        return -1.0
    qvec = cross(tvec, e1)
    v = dot(d, qvec) * inv
    if v < 0.0 or (v > 1.0) or (triangle and u + v > 1.0):
        return -1.0
    t = dot(e2, qvec) * inv
    if t > tmin and t < tmax:
        return t
    return -1.0


@njit(inline="always")
def intersect_scene(ptype, pgeo, o, d, tmin, tmax):
    """Nearest hit by linear sweep; returns (t, primitive) with primitive -1 on a miss."""
    best = -1
    for i in range(ptype.shape[0]):
        k = ptype[i]
        if k == SPHERE:
            t = _hit_sphere(pgeo, i, o, d, tmin, tmax)
        else:
            t = _hit_planar(pgeo, i, o, d, tmin, tmax, k == TRIANGLE)
        if t > 0.0:
            tmax = t
            best = i
    return tmax, best


@njit(inline="always")
def occluded(ptype, pgeo, o, d, tmax):
    for i in range(ptype.shape[0]):
        k = ptype[i]
        if k == SPHERE:
            t = _hit_sphere(pgeo, i, o, d, 0.0, tmax)
        else:
            t = _hit_planar(pgeo, i, o, d, 0.0, tmax, k == TRIANGLE)
        if t > 0.0:
            return True
    return False


@njit(inline="always")
def front_normal(ptype, pgeo, prim, p):
    if ptype[prim] == SPHERE:
        r = pgeo[prim, 3]
        return ((p[0] - pgeo[prim, 0]) / r, (p[1] - pgeo[prim, 1]) / r, (p[2] - pgeo[prim, 2]) / r)
    return (pgeo[prim, 9], pgeo[prim, 10], pgeo[prim, 11])


@njit
def facing(n, d):
    """Flip ``n`` so that it faces against the ray direction ``d``."""
    if dot(n, d) > 0.0:
        return neg(n)
    return n


@njit(inline="always")
def emitted(ptype, pgeo, pmat, mats, prim, p, w):
    """Radiance leaving primitive ``prim`` at ``p`` toward direction ``w``."""
    m = pmat[prim]
    if mats[m, 5] == 0.0 and mats[m, 6] == 0.0 and mats[m, 7] == 0.0:
        return (0.0, 0.0, 0.0)
    if dot(front_normal(ptype, pgeo, prim, p), w) <= 0.0:
        return (0.0, 0.0, 0.0)
    return (mats[m, 5], mats[m, 6], mats[m, 7])


@njit(inline="always")
def bsdf_eval(mats, m, n, wo, wi):
    """f_s only; callers multiply by the cosine."""
    cos_i = dot(n, wi)
    if cos_i <= 0.0 or dot(n, wo) <= 0.0:
        return (0.0, 0.0, 0.0)
    if mats[m, 0] == DIFFUSE:
        return (mats[m, 1] * INV_PI, mats[m, 2] * INV_PI, mats[m, 3] * INV_PI)
    e = mats[m, 4]
    cn = 2.0 * dot(n, wo)
    r = (cn * n[0] - wo[0], cn * n[1] - wo[1], cn * n[2] - wo[2])
    c = dot(r, wi)
    if c <= 0.0:
        return (0.0, 0.0, 0.0)
    s = (e + 2.0) * (0.5 * INV_PI) * c ** e
    return (mats[m, 1] * s, mats[m, 2] * s, mats[m, 3] * s)


@njit
def cosine_sample(n, u1, u2):
    r = math.sqrt(u1)
    phi = 2.0 * math.pi * u2
    local = (r * math.cos(phi), r * math.sin(phi), math.sqrt(max(0.0, 1.0 - u1)))
    t, b, nn = onb(n)
    return to_world(local, t, b, nn)


@njit(inline="always")
def bsdf_sample(mats, m, n, wo, u1, u2):
    """Sample wi from the material lobe; returns (wi, pdf). pdf == 0 marks an absorbed sample."""
    if mats[m, 0] == DIFFUSE:
        wi = cosine_sample(n, u1, u2)
        return wi, max(dot(n, wi), 0.0) * INV_PI
    e = mats[m, 4]
    cn = 2.0 * dot(n, wo)
    r = normalize((cn * n[0] - wo[0], cn * n[1] - wo[1], cn * n[2] - wo[2]))
    ca = u1 ** (1.0 / (e + 1.0))
    sa = math.sqrt(max(0.0, 1.0 - ca * ca))
    phi = 2.0 * math.pi * u2
    t, b, rr = onb(r)
    wi = to_world((sa * math.cos(phi), sa * math.sin(phi), ca), t, b, rr)
    if dot(n, wi) <= 0.0:
        return wi, 0.0
    return wi, (e + 1.0) * (0.5 * INV_PI) * ca ** e


@njit
def bsdf_pdf(mats, m, n, wo, wi):
    if dot(n, wi) <= 0.0:
        return 0.0
    if mats[m, 0] == DIFFUSE:
        return dot(n, wi) * INV_PI
    e = mats[m, 4]
    cn = 2.0 * dot(n, wo)
    r = normalize((cn * n[0] - wo[0], cn * n[1] - wo[1], cn * n[2] - wo[2]))
    c = dot(r, wi)
    if c <= 0.0:
        return 0.0
    return (e + 1.0) * (0.5 * INV_PI) * c ** e


@njit(inline="always")
def sample_primitive(ptype, pgeo, prim, u1, u2):
    """Area-uniform point on a primitive: (position, front normal)."""
    k = ptype[prim]
    if k == SPHERE:
        z = 1.0 - 2.0 * u1
        s = math.sqrt(max(0.0, 1.0 - z * z))
        phi = 2.0 * math.pi * u2
        d = (s * math.cos(phi), s * math.sin(phi), z)
        r = pgeo[prim, 3]
        ar = abs(r)
        p = (pgeo[prim, 0] + ar * d[0], pgeo[prim, 1] + ar * d[1], pgeo[prim, 2] + ar * d[2])
        if r < 0.0:
            d = neg(d)
        return p, d
    if k == TRIANGLE:
        su = math.sqrt(u1)
        a = 1.0 - su
        b = u2 * su
    else:
        a = u1
        b = u2
    p = (pgeo[prim, 0] + a * pgeo[prim, 3] + b * pgeo[prim, 6],
         pgeo[prim, 1] + a * pgeo[prim, 4] + b * pgeo[prim, 7],
         pgeo[prim, 2] + a * pgeo[prim, 5] + b * pgeo[prim, 8])
    return p, (pgeo[prim, 9], pgeo[prim, 10], pgeo[prim, 11])


@njit
def spawn(p, n, d):
    """Ray origin offset off the surface, on the side ``d`` leaves toward."""
    if dot(n, d) >= 0.0:
        return madd(p, n, RAY_EPS)
    return madd(p, n, -RAY_EPS)


@njit
def camera_ray(cam, width, height, fx, fy):
    """Primary ray through continuous raster position (fx, fy); row 0 is the top."""
    th = cam[12]
    sx = (2.0 * fx / width - 1.0) * th * cam[13]
    sy = (1.0 - 2.0 * fy / height) * th
    d = (cam[3] + sx * cam[6] + sy * cam[9], cam[4] + sx * cam[7] + sy * cam[10], cam[5] + sx * cam[8] + sy * cam[11])
    return (cam[0], cam[1], cam[2]), normalize(d)


# ---------------------------------------------------------------------------
# Python-level operations
# ---------------------------------------------------------------------------

def intersect(ray, scene):
    """Nearest :class:`ShadingPoint` along ``ray`` or ``None``."""
    ptype, pgeo, pmat, mats, lights, _ = scene.kernel_data
    o = tuple(map(float, ray.origin))
    d = tuple(map(float, ray.direction))
    t, prim = intersect_scene(ptype, pgeo, o, d, float(ray.t_min), float(ray.t_max))
    if prim < 0:
        return None
    p = madd(o, d, t)
    n = facing(front_normal(ptype, pgeo, prim, p), d)
    m = int(pmat[prim])
    return ShadingPoint(np.array(p), np.array(n), -np.array(d), m, int(prim),
                        bool(scene.materials[m].emissive), float(t))


def eval_bsdf(sp, wi, scene):
    """f_s at ``sp`` for incident direction ``wi`` (no cosine)."""
    wi = np.asarray(wi, float)
    if abs(np.linalg.norm(wi) - 1.0) > 1e-6:
        raise ContractError("eval_bsdf: wi must be normalized")
    mats = scene.kernel_data[3]
    return np.array(bsdf_eval(mats, sp.material, tuple(sp.normal), tuple(sp.wo), tuple(wi)))


def build_onb(normal):
    n = tuple(map(float, normal))
    t, b, nn = onb(n)
    return np.array(t), np.array(b), np.array(nn)


def sample_light_point(scene, light, u):
    """Area-uniform point on emitter ``light``: (position, front normal, area pdf)."""
    ptype, pgeo, _, _, lights, larea = scene.kernel_data
    if not 0 <= light < len(lights):
        raise ContractError(f"light index {light} out of range (scene has {len(lights)} lights)")
    p, n = sample_primitive(ptype, pgeo, lights[light], float(u[0]), float(u[1]))
    return np.array(p), np.array(n), 1.0 / larea[light]
