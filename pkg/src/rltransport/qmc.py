"""Halton sample streams.

Every random number used by the renderers and trainers is a pure function
of ``(index, dimension)``.  Dimensions below ``MAX_DIMS`` come from the
unscrambled Halton sequence; deeper dimensions fall back to a hashed
counter so long paths stay deterministic.
"""
import numpy as np

from ._jit import njit
from .errors import ContractError

MAX_DIMS = 32

PRIMES = np.array(
    [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53,
     59, 61, 67, 71, 73, 79, 83, 89, 97, 101, 103, 107, 109, 113, 127, 131],
    dtype=np.int64,
)

_M32 = 0xFFFFFFFF
_TABLE_LIMIT = 2048


def _digit_tables():
    """Radical inverses of all k-digit numbers for each base, with b**k <= 2048.

    ``sample`` consumes an index one k-digit chunk at a time, which needs a
    single division per chunk instead of one per digit.
    """
    chunk = np.ones(len(PRIMES), dtype=np.int64)
    for i, b in enumerate(PRIMES):
        while chunk[i] * b <= _TABLE_LIMIT:
            chunk[i] *= b
    table = np.zeros((len(PRIMES), _TABLE_LIMIT))
    for i, b in enumerate(PRIMES):
        j = np.arange(chunk[i])
        scale = 1.0 / b
        rest = j.copy()
        while chunk[i] > 1 and scale * chunk[i] > 1.0 - 1e-9:
            table[i, :chunk[i]] += (rest % b) * scale
            rest //= b
            scale /= b
    return chunk, table


_CHUNK, _TABLE = _digit_tables()


def _is_prime(n):
    if n < 2:
        return False
    f = 2
    while f * f <= n:
        if n % f == 0:
            return False
        f += 1
    return True


@njit
def _radical_inverse(base, index):
    inv = 1.0 / base
    scale = inv
    result = 0.0
    while index > 0:
        # reciprocal multiply instead of an integer divide; exact after the
        # one-step correction because index < 2**53
        q = int(index * inv)
        if q * base > index:
            q -= 1
        elif (q + 1) * base <= index:
            q += 1
        result += (index - q * base) * scale
        scale *= inv
        index = q
    return result


@njit
def _radical_inverse_2(index):
    result = 0.0
    scale = 0.5
    while index > 0:
        if index & 1:
            result += scale
        scale *= 0.5
        index >>= 1
    return result


@njit
def _hash32(x):
    # integer avalanche hash kept inside 63 bits so it behaves the same
    # compiled and interpreted
    x = x & 0xFFFFFFFF
    x ^= x >> 16
    x = (x * 0x7FEB352D) & 0xFFFFFFFF
    x ^= x >> 15
    x = (x * 0x68E31DA5) & 0xFFFFFFFF
    x ^= x >> 16
    return x


@njit
def hashed_uniform(index, dim, seed):
    """Counter-based uniform in [0, 1) keyed by (index, dim, seed)."""
    h = _hash32(seed * 0x2545F491 + dim)
    h = _hash32(h ^ (index & 0xFFFFFFFF))
    h = _hash32(h ^ ((index >> 32) & 0xFFFFFFFF) ^ 0x5BD1E995)
    return h * (1.0 / 4294967296.0)


@njit
def _radical_inverse_table(dim, index):
    size = _CHUNK[dim]
    inv = 1.0 / size
    scale = 1.0
    result = 0.0
    while index > 0:
        q = int(index * inv)
        if q * size > index:
            q -= 1
        elif (q + 1) * size <= index:
            q += 1
        result += _TABLE[dim, index - q * size] * scale
        scale *= inv
        index = q
    return result


@njit
def sample(index, dim, seed):
    """The value of dimension ``dim`` for global sample ``index``."""
    if dim < 32:
        return _radical_inverse_table(dim, index)
    return hashed_uniform(index, dim, seed)


def radical_inverse(base, index):
    """Digit-reversed fraction of ``index`` in ``base``; ``base`` must be prime."""
    base = int(base)
    index = int(index)
    if not _is_prime(base):
        raise ContractError(f"radical_inverse: base {base} is not prime")
    if index < 0:
        raise ContractError("radical_inverse: index must be nonnegative")
    if base == 2:
        return _radical_inverse_2(index)
    return _radical_inverse(base, index)


def halton_point(index, dims):
    if dims < 0 or dims > MAX_DIMS:
        raise ContractError(f"halton_point: dims must be in [0, {MAX_DIMS}], got {dims}")
    if index < 0:
        raise ContractError("halton_point: index must be nonnegative")
    return np.array([radical_inverse(int(PRIMES[d]), index) for d in range(dims)])


def coprime_stride(n):
    """Smallest prime >= ``n`` that exceeds every Halton base.

    Sample sets laid out as ``stride * k + offset`` keep each offset's
    subsequence stratified in every dimension only when the stride shares no
    factor with the bases; a power-of-two pixel count, for instance, would
    pin the base-2 dimension of each pixel to a 1/n-wide interval.
    """
    p = max(int(n), int(PRIMES[-1]) + 1)
    while not _is_prime(p):
        p += 1
    return p


SEED_SPAN = 1 << 40
MAX_SEED = 1 << 22


@njit
def seed_base(seed):
    """First sequence index of ``seed``.

    The low Halton dimensions are unscrambled, so the seed alone would leave
    them untouched; instead each seed owns a disjoint 2**40-long stretch of
    the sequence, and seed 0 starts at index 0.
    """
    return seed * SEED_SPAN


def check_seed(seed):
    if not 0 <= int(seed) < MAX_SEED:
        raise ContractError(f"seed must lie in [0, {MAX_SEED})")
    return int(seed)


class SampleStream:
    """Single-consumer cursor over the Halton dimensions of one sample index."""

    def __init__(self, index, dim=0):
        if index < 0:
            raise ContractError("SampleStream index must be nonnegative")
        self.index = int(index)
        self.dim = int(dim)

    def next(self):
        if self.dim >= MAX_DIMS:
            raise ContractError(f"SampleStream exhausted its {MAX_DIMS} Halton dimensions")
        value = radical_inverse(int(PRIMES[self.dim]), self.index)
        self.dim += 1
        return value

    def advance(self):
        """Move to the next sample index and rewind the dimension cursor."""
        self.index += 1
        self.dim = 0
