import math

import numba
import numpy as np
import pytest
from scipy import stats

from rltransport.errors import ContractError
from rltransport.geometry import Material, Ray, Scene, intersect, sample_light_point
from rltransport.nee import (
    FLOOR, TDTable, build_cdf, direct_contribution, epsilon_greedy_select, estimate_direct,
    optimistic_row, render_with_online_learning, sample_cdf, softmax_temperature_select, td_update,
)
from rltransport.qmc import sample


def patch_scene(light_emission=4.0, blocker=False, light_z=1.0):
    """Diffuse receiver at z = 0 under a downward-facing unit-area light."""
    s = Scene()
    s.material("grey", Material(albedo=(0.6, 0.6, 0.6)))
    s.material("light", Material(albedo=(0, 0, 0), emission=(light_emission,) * 3))
    s.add_quad((-2, -2, 0), (4, 0, 0), (0, 4, 0), "grey")
    s.add_quad((0.2, -0.3, light_z), (0, 1, 0), (1, 0, 0), "light")
    if blocker:
        s.add_quad((-1, -1, 0.5), (3, 0, 0), (0, 3, 0), "grey")
    return s


def receiver(scene, at=(0.0, 0.0)):
    return intersect(Ray((at[0], at[1], 0.3), (0.0, 0.0, -1.0)), scene)


def polygon_irradiance(x, n, verts, radiance):
    """Closed-form irradiance from a uniformly emitting polygon (Lambert's edge sum)."""
    v = [np.subtract(p, x) for p in verts]
    v = [a / np.linalg.norm(a) for a in v]
    e = 0.0
    for a, b in zip(v, v[1:] + v[:1]):
        c = np.cross(a, b)
        e += math.acos(np.clip(a @ b, -1, 1)) * (n @ (c / np.linalg.norm(c)))
    return abs(0.5 * radiance * e)


def test_estimate_direct_zero_cases():
    s = patch_scene(blocker=True)
    sp = receiver(s)
    ls = sample_light_point(s, 0, (0.5, 0.5))
    assert np.all(estimate_direct(sp, s, 0, ls, 1.0) == 0)
    # light below the receiver's tangent plane
    s = patch_scene(light_z=-1.0)
    sp = receiver(s)
    assert np.all(estimate_direct(sp, s, 0, sample_light_point(s, 0, (0.5, 0.5)), 1.0) == 0)
    with pytest.raises(ContractError):
        estimate_direct(sp, s, 0, sample_light_point(s, 0, (0.5, 0.5)), 0.0)


def test_estimate_direct_single_sample_formula():
    s = patch_scene()
    sp = receiver(s, (0.1, 0.2))
    y, ny, pdf = sample_light_point(s, 0, (0.25, 0.75))
    d = y - sp.position
    r2 = d @ d
    d /= math.sqrt(r2)
    g = (d @ sp.normal) * (-d @ ny) / r2
    expected = 4.0 * 0.6 / math.pi * g / pdf / 0.5
    assert estimate_direct(sp, s, 0, (y, ny, pdf), 0.5) == pytest.approx([expected] * 3, rel=1e-12)


@numba.njit
def _direct_mean(kd, x, n, wo, m, count, seed):
    ptype, pgeo, pmat, mats, lights, larea = kd
    acc = 0.0
    acc2 = 0.0
    for i in range(count):
        c = direct_contribution(ptype, pgeo, pmat, mats, lights, larea, x, n, wo, m, 0,
                                sample(i, 0, seed), sample(i, 1, seed))[0]
        acc += c
        acc2 += c * c
    return acc / count, acc2 / count


def test_estimate_direct_matches_analytic_irradiance():
    s = patch_scene()
    sp = receiver(s, (0.1, 0.2))
    corners = [(0.2, -0.3, 1.0), (0.2, 0.7, 1.0), (1.2, 0.7, 1.0), (1.2, -0.3, 1.0)]
    exact = 0.6 / math.pi * polygon_irradiance(sp.position, sp.normal, corners, 4.0)
    mean, _ = _direct_mean(s.kernel_data, tuple(sp.position), tuple(sp.normal), tuple(sp.wo), sp.material, 10**6, 0)
    assert mean == pytest.approx(exact, rel=5e-3)
    # the Python entry point agrees with the kernel sample by sample
    for i in range(20):
        ls = sample_light_point(s, 0, (sample(i, 0, 0), sample(i, 1, 0)))
        k = direct_contribution(*s.kernel_data, tuple(sp.position), tuple(sp.normal), tuple(sp.wo), sp.material, 0,
                                sample(i, 0, 0), sample(i, 1, 0))
        assert estimate_direct(sp, s, 0, ls, 1.0) == pytest.approx(k, rel=1e-12)


@numba.njit
def _selection_mean(kd, x, n, wo, m, pmf, count, seed):
    ptype, pgeo, pmat, mats, lights, larea = kd
    vals = np.zeros(count)
    for i in range(count):
        l = 0 if sample(i, 2, seed) < pmf[0] else 1
        c = direct_contribution(ptype, pgeo, pmat, mats, lights, larea, x, n, wo, m, l,
                                sample(i, 3, seed), sample(i, 4, seed))[0]
        vals[i] = c / pmf[l]
    return vals.mean(), vals.std() / math.sqrt(count)


def test_selection_distribution_does_not_bias_estimate():
    s = patch_scene()
    s.add_quad((-1.2, -0.3, 1.0), (0, 1, 0), (0.5, 0, 0), "light")
    sp = receiver(s, (0.1, 0.2))
    args = (s.kernel_data, tuple(sp.position), tuple(sp.normal), tuple(sp.wo), sp.material)
    m_uni, s_uni = _selection_mean(*args, np.array([0.5, 0.5]), 10**6, 0)
    m_skew, s_skew = _selection_mean(*args, np.array([0.15, 0.85]), 10**6, 0)
    assert abs(m_uni - m_skew) < 3 * math.hypot(s_uni, s_skew)


def test_td_update_examples():
    t = TDTable(np.zeros(3), np.ones(3), 2, res=2)
    assert td_update(t, 5, 1, 0.7, alpha=1.0) == 0.7
    assert td_update(t, 5, 1, 0.1, alpha=0.0) == 0.7
    t.q[3, 0] = 0.2
    assert td_update(t, 3, 0, 0.6, alpha=0.5) == pytest.approx(0.4)
    with pytest.raises(ContractError):
        td_update(t, 3, 0, 0.6, alpha=-0.1)


def test_td_running_average_is_exact(rng):
    t = TDTable(np.zeros(3), np.ones(3), 1, res=1)
    values = rng.random(50)
    for k, c in enumerate(values):
        td_update(t, 0, 0, c, alpha=1.0 / (k + 1))
        assert t.q[0, 0] == pytest.approx(values[:k + 1].mean(), rel=1e-13)


def test_td_state_discretisation():
    t = TDTable(np.zeros(3), np.ones(3), 1, res=2)
    s = t.state((0.9, 0.1, 0.1), (0, 0, 1), (0, 0, -1))
    assert s == ((1 * 4 + 0 * 2 + 0) * 8 + 4) * 8 + 0
    assert t.state((5, -5, 0.1), (0, 0, 1), (0, 0, -1)) == ((1 * 4) * 8 + 4) * 8


def test_build_cdf_examples():
    cdf, total = build_cdf([1, 1, 1, 1])
    assert cdf == pytest.approx([0.25, 0.5, 0.75, 1.0], abs=1e-15) and total == 4
    cdf, _ = build_cdf([0, 1])
    assert cdf == pytest.approx([FLOOR, 1.0])
    pmf = np.diff(np.concatenate([[0], cdf]))
    assert pmf == pytest.approx([FLOOR, 1 - FLOOR])
    cdf, total = build_cdf([0, 0, 0])
    assert cdf == pytest.approx([1 / 3, 2 / 3, 1]) and total == 0
    with pytest.raises(ContractError):
        build_cdf([0.5, -0.1])
    with pytest.raises(ContractError):
        build_cdf([])


def test_build_cdf_is_monotone_and_normalised(rng):
    for _ in range(200):
        qs = rng.gamma(0.3, size=rng.integers(1, 12)) * (rng.random() < 0.9)
        cdf, _ = build_cdf(qs)
        assert np.all(np.diff(cdf) >= 0)
        assert abs(cdf[-1] - 1) < 1e-9
        assert np.all(np.diff(np.concatenate([[0], cdf])) >= FLOOR - 1e-15)


def test_sample_cdf_examples():
    assert sample_cdf([0.25, 0.5, 0.75, 1.0], 0.6) == (2, 0.25)
    cdf, _ = build_cdf([0, 1, 1], floor=0.0)
    assert sample_cdf(cdf, 0.0) == (1, 0.5)
    with pytest.raises(ContractError):
        sample_cdf(cdf, 1.0)


def test_sample_cdf_inverse_sweep(rng):
    cdf, _ = build_cdf(rng.random(7))
    edges = np.concatenate([[0.0], cdf])
    for u in np.linspace(0, 1, 10**4, endpoint=False):
        j, p = sample_cdf(cdf, u)
        assert edges[j] <= u < edges[j + 1]
        assert p == pytest.approx(edges[j + 1] - edges[j])


def chi_square_cdf(seed, draws=10**5):
    rng = np.random.default_rng(seed)
    qs = rng.gamma(1.0, size=8)
    cdf, _ = build_cdf(qs, floor=0.0)
    counts = np.bincount([sample_cdf(cdf, u)[0] for u in rng.random(draws)], minlength=8)
    return stats.chisquare(counts, qs / qs.sum() * draws).pvalue


def test_sample_cdf_chi_square():
    assert chi_square_cdf(0) > 0.01


def test_softmax_temperature_examples():
    for q in ([0.3, -2.0, 7.5], [1.0, 1.0], [5.0, 0.0, 1.0, 2.0]):
        for u in (0.0, 0.4, 0.99):
            i, p = softmax_temperature_select(q, 1.0, u)
            assert p == 1.0 / len(q)
            assert i == min(int(u * len(q)), len(q) - 1)
    assert softmax_temperature_select([1, 2], 2.0, 0.1) == (0, pytest.approx(1 / 3))
    assert softmax_temperature_select([1, 2], 2.0, 0.5)[1] == pytest.approx(2 / 3)
    i, p = softmax_temperature_select([1.0, 3.0, 2.0], 1e6, 0.5)
    assert i == 1 and p > 0.999
    # small T favours the low-q entries
    assert softmax_temperature_select([0.1, 0.9], 0.01, 0.0)[1] > 0.9
    with pytest.raises(ContractError):
        softmax_temperature_select([1, 2], 0.0, 0.5)


def test_epsilon_greedy_examples():
    assert epsilon_greedy_select([0.1, 0.9, 0.5], 1.0, 0.5) == (1, pytest.approx(1 / 3))
    assert epsilon_greedy_select([0.1, 0.9], 0.0, 0.0) == (1, 1.0)
    assert epsilon_greedy_select([0.1, 0.9], 0.5, 0.1) == (0, 0.25)
    assert epsilon_greedy_select([0.1, 0.9], 0.5, 0.9) == (1, 0.75)
    assert epsilon_greedy_select([0.4, 0.4], 0.0, 0.7) == (0, 1.0)
    with pytest.raises(ContractError):
        epsilon_greedy_select([0.1, 0.9], 1.5, 0.1)


def test_online_learning_single_light_equals_uniform(cornell_scene):
    net_run = render_with_online_learning(cornell_scene, 16, 16, iterations=2, batches=4, selector="net")
    uni_run = render_with_online_learning(cornell_scene, 16, 16, iterations=2, batches=4, selector="uniform")
    assert net_run.net([0.5] * 9) == pytest.approx([1.0])
    assert np.allclose(net_run.image, uni_run.image, rtol=1e-12, atol=0)
    assert np.array_equal(net_run.light_index, uni_run.light_index)


def test_online_learning_contracts(cornell_scene):
    with pytest.raises(ContractError):
        render_with_online_learning(cornell_scene, 8, 8, selector="greedy")
    with pytest.raises(ContractError):
        render_with_online_learning(cornell_scene, 0, 8)
    from rltransport.nee import light_selection_net
    with pytest.raises(ContractError):
        render_with_online_learning(cornell_scene, 8, 8, net=light_selection_net(3))


def test_online_learning_records_and_trace(split_scene):
    seen = []
    res = render_with_online_learning(split_scene, 16, 16, iterations=3, batches=2, selector="net",
                                      callback=lambda it, img, loss: seen.append(it))
    assert seen == [0, 1, 2]
    assert [t["samples"] for t in res.trace] == [128, 256, 384]
    r = res.records
    assert np.all(r.prob[r.valid] > 0)
    assert np.all(r.contribution >= 0) and np.all(np.isfinite(r.contribution))
    assert res.sample_counts.sum() == 384


@pytest.fixture(scope="module")
def uniform_reference(split_scene):
    return render_with_online_learning(split_scene, 16, 16, iterations=64, batches=64, selector="uniform").image


def _blocks(image):
    return image.mean(-1).reshape(4, 4, 4, 4).mean(axis=(1, 3))


@pytest.mark.parametrize("selector", ["uniform", "tabular-td", "net", "softmax-T", "eps-greedy"])
def test_learned_selectors_stay_unbiased(split_scene, uniform_reference, selector):
    """Learned selection changes variance, not the expected image.

    Compared on 4x4 pixel blocks against a 16x larger uniform-selection render.
    epsilon-greedy leaves the non-greedy lights with mass eps / k, so its
    estimate is heavy tailed and only the whole-image mean is compared.
    """
    img = render_with_online_learning(split_scene, 16, 16, iterations=16, batches=32, selector=selector).image
    if selector == "eps-greedy":
        assert img.mean() == pytest.approx(uniform_reference.mean(), rel=0.05)
    else:
        rel = np.abs(_blocks(img) - _blocks(uniform_reference)) / _blocks(uniform_reference)
        assert rel.max() < 0.05


def test_unvisited_lights_borrow_the_best_visited_value():
    out = np.zeros(4)
    optimistic_row(np.array([0.2, 0.0, 0.9, 0.0]), np.array([3, 0, 1, 2]), out)
    assert list(out) == [0.2, 0.9, 0.9, 0.0]
    optimistic_row(np.zeros(3), np.zeros(3, np.int64), out[:3])
    assert list(out[:3]) == [0.0, 0.0, 0.0]
