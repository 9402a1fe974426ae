import numpy as np
import pytest

from rltransport.scenes import bandit2, cornell, furnace, split_room

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        # lines read "[PASS] criterion NN ..."; order by criterion, not by verdict
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: l.split("criterion", 1)[1]):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def cornell_scene():
    return cornell()


@pytest.fixture(scope="session")
def glossy_scene():
    return cornell(glossy=True)


@pytest.fixture(scope="session")
def furnace_scene():
    return furnace(0.5, 1.0)


@pytest.fixture(scope="session")
def split_scene():
    return split_room()


@pytest.fixture(scope="session")
def bandit_scene():
    return bandit2()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def random_unit(rng, n):
    v = rng.normal(size=(n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def furnace_probes(rng, n):
    """Random (x, n, w) on the inward unit sphere with w in the inner hemisphere."""
    x = random_unit(rng, n)
    nrm = -x
    w = random_unit(rng, n)
    w = np.where((np.sum(w * nrm, axis=1) < 0)[:, None], -w, w)
    return x, nrm, w


def octahedral_oracle():
    """Numpy equal-area octahedral map (Clarberg 2008), kept separate from the package."""

    def to_sphere(px, py):
        u, v = 2 * px - 1, 2 * py - 1
        sd = 1 - (np.abs(u) + np.abs(v))
        r = 1 - np.abs(sd)
        with np.errstate(invalid="ignore", divide="ignore"):
            phi = np.where(r == 0, 1.0, (np.abs(v) - np.abs(u)) / r + 1) * np.pi / 4
        z = np.sign(sd) * (1 - r * r)
        s = r * np.sqrt(np.maximum(0, 2 - r * r))
        return np.stack([np.sign(u) * np.cos(phi) * s, np.sign(v) * np.sin(phi) * s, z], axis=-1)

    def to_square(d):
        x, y, z = np.abs(d[..., 0]), np.abs(d[..., 1]), np.abs(d[..., 2])
        r = np.sqrt(np.maximum(0, 1 - z))
        phi = np.arctan2(y, x) * 2 / np.pi
        v = phi * r
        u = r - v
        lower = d[..., 2] < 0
        u, v = np.where(lower, 1 - v, u), np.where(lower, 1 - u, v)
        u = np.copysign(u, d[..., 0])
        v = np.copysign(v, d[..., 1])
        return 0.5 * (u + 1), 0.5 * (v + 1)

    def bin_of(d, bins=8):
        px, py = to_square(d)
        ix = np.minimum((px * bins).astype(int), bins - 1)
        iy = np.minimum((py * bins).astype(int), bins - 1)
        return iy * bins + ix

    return to_sphere, to_square, bin_of
