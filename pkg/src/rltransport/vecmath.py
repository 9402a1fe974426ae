"""3-vector helpers on plain float tuples (cheap inside compiled kernels)."""
import math

from ._jit import njit


@njit
def add(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


@njit
def sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


@njit
def mul(a, s):
    return (a[0] * s, a[1] * s, a[2] * s)


@njit
def hadamard(a, b):
    return (a[0] * b[0], a[1] * b[1], a[2] * b[2])


@njit
def madd(a, b, s):
    """a + b * s"""
    return (a[0] + b[0] * s, a[1] + b[1] * s, a[2] + b[2] * s)


@njit
def dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit
def cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


@njit
def length(a):
    return math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])


@njit
def normalize(a):
    inv = 1.0 / math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2])
    return (a[0] * inv, a[1] * inv, a[2] * inv)


@njit
def neg(a):
    return (-a[0], -a[1], -a[2])


@njit
def luminance(c):
    return 0.2126 * c[0] + 0.7152 * c[1] + 0.0722 * c[2]


@njit
def onb(n):
    """Orthonormal frame (t, b, n) around a unit normal (Duff et al. 2017)."""
    sign = math.copysign(1.0, n[2])
    a = -1.0 / (sign + n[2])
    b = n[0] * n[1] * a
    t = (1.0 + sign * n[0] * n[0] * a, sign * b, -sign * n[0])
    bb = (b, sign + n[1] * n[1] * a, -n[1])
    return t, bb, n


@njit
def to_world(local, t, b, n):
    return (
        local[0] * t[0] + local[1] * b[0] + local[2] * n[0],
        local[0] * t[1] + local[1] * b[1] + local[2] * n[1],
        local[0] * t[2] + local[1] * b[2] + local[2] * n[2],
    )
