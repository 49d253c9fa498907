import math

import numpy as np
import pytest

from randflight import analytic as an
from randflight import freepath as fp
from randflight import montecarlo as mc
from randflight.errors import UNAVAILABLE, DomainError, StateError


def problem(spec, d, c):
    return fp.TransportProblem(fp.parse_model(spec), d, c)


def exact_moment(p, quantity, m):
    return an.exact_moment(an.SolutionKey(p, an.Quantity(quantity, None, m)))


def within(estimate, want, k=3.0):
    value, se = estimate
    return abs(value - want) <= k * se


def test_direction_fourth_moment_in_plane():
    u = mc.sample_direction(2, np.random.default_rng(3), 400_000)
    assert np.allclose(np.linalg.norm(u, axis=1), 1.0)
    x4 = u[:, 0] ** 4
    assert abs(x4.mean() - 3 / 8) < 3 * x4.std() / math.sqrt(x4.size)


def test_direction_rejects_fractional_dimension():
    with pytest.raises(DomainError):
        mc.sample_direction(2.5, np.random.default_rng(0))
    assert set(np.unique(mc.sample_direction(1, np.random.default_rng(0), 100))) == {-1.0, 1.0}


def test_config_validation():
    p = problem("exp", 3, 0.5)
    with pytest.raises(DomainError):
        mc.McConfig(p, 0)
    with pytest.raises(DomainError):
        mc.McConfig(problem("exp", 2.5, 0.5), 10)
    with pytest.raises(DomainError):
        mc.McConfig(p, 10, shell_edges=(0.1, 1.0))
    with pytest.raises(DomainError):
        mc.McConfig(p, 10, shell_edges=(0, 1.0, 1.0))
    with pytest.raises(DomainError):
        mc.McConfig(p, 10, tail_epsilon=1.0)
    assert mc.McConfig(p, 10, tail_epsilon=1e-6).max_order == 20


def test_first_collision_density_chi_flatland():
    p = problem("chi:k=2", 2, 0.5)
    lo, hi = 0.97, 1.03
    tallies = mc.run(mc.McConfig(p, 400_000, shell_edges=(0, lo, hi, 3.0), n_max=2))
    model = p.model
    shell_avg = (fp.extinction(model, lo) - fp.extinction(model, hi)) / (math.pi * (hi * hi - lo * lo))
    assert shell_avg == pytest.approx(math.exp(-math.pi / 4) / 4, rel=1e-3)
    assert within(mc.density_estimate(tallies, "collision", 1, 1.0), shell_avg)
    assert mc.density_estimate(tallies, "collision", 1, 5.0) is UNAVAILABLE


def test_collision_fourth_moment_exp_four_dimensions():
    p = problem("exp", 4, 0.5)
    assert exact_moment(p, "collision", 4) == pytest.approx(144.0)
    tallies = mc.run(mc.McConfig(p, 200_000, tail_epsilon=1e-6))
    assert within(mc.moment_estimate(tallies, "collision", 4), 144.0)


def test_flux_second_moment_gamma_flatland():
    p = problem("gamma:k=2", 2, 0.5)
    k, c = 2, 0.5
    closed = (k + 1) * (2 * c * (k - 1) + k + 2) / (3 * (1 - c) ** 2 * k * k)
    assert closed == pytest.approx(5.0)
    assert exact_moment(p, "flux", 2) == pytest.approx(closed, rel=1e-12)
    tallies = mc.run(mc.McConfig(p, 200_000, tail_epsilon=1e-6))
    assert within(mc.moment_estimate(tallies, "flux", 2), closed)


def test_weights_make_collision_counts_exact():
    c = 0.6
    cfg = mc.McConfig(problem("gamma:k=0.5", 3, c), 5000, n_max=3)
    tallies = mc.run(cfg)
    assert mc.moment_estimate(tallies, "collision", 0, 1) == (1.0, 0.0)
    assert mc.moment_estimate(tallies, "collision", 0, 3)[0] == pytest.approx(c * c)
    total = (1 - c ** cfg.max_order) / (1 - c)
    assert mc.moment_estimate(tallies, "collision", 0)[0] == pytest.approx(total)


@pytest.mark.parametrize("spec,d", [("pearson", 3), ("besselk:m=2", 2), ("chi:k=3", 1)])
def test_low_moments_match_exact(spec, d):
    p = problem(spec, d, 0.7)
    tallies = mc.run(mc.McConfig(p, 100_000, tail_epsilon=1e-6))
    for quantity in ("collision", "flux"):
        assert within(mc.moment_estimate(tallies, quantity, 2), exact_moment(p, quantity, 2), k=4)


def test_determinism_and_worker_independence():
    p = problem("exp", 3, 0.8)
    base = dict(problem=p, histories=3000, shell_edges=(0, 1, 2, 4), block_size=700, flux_shells=True)
    a = mc.run(mc.McConfig(**base))
    b = mc.run(mc.McConfig(**base))
    w = mc.run(mc.McConfig(**base, workers=2))
    other = mc.run(mc.McConfig(**base, master_seed=99))
    for t in (b, w):
        for kind in ("collision", "flux"):
            np.testing.assert_array_equal(a.shell_sum[kind], t.shell_sum[kind])
            np.testing.assert_array_equal(a.moment_sq[kind], t.moment_sq[kind])
    assert not np.array_equal(a.shell_sum["collision"], other.shell_sum["collision"])


def test_save_and_load_round_trip(tmp_path):
    p = problem("chi:k=2", 3, 0.5)
    tallies = mc.run(mc.McConfig(p, 2000, shell_edges=(0, 0.5, 1.5), n_max=3, flux_shells=True))
    path = tmp_path / "tallies.txt"
    mc.save_tallies(tallies, path)
    back = mc.load_tallies(path)
    assert back.histories == tallies.histories and back.meta == tallies.meta
    for kind in ("collision", "flux"):
        for name in ("shell_sum", "shell_sq", "overflow", "moment_sum", "moment_sq"):
            np.testing.assert_array_equal(getattr(back, name)[kind], getattr(tallies, name)[kind])
    for n in (1, 2, 3, None):
        assert mc.shell_estimates(back, "collision", n)[0] == pytest.approx(mc.shell_estimates(tallies, "collision", n)[0])


def test_load_rejects_other_versions(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("# randflight-tallies v9\n")
    with pytest.raises(StateError):
        mc.load_tallies(path)
    path.write_text("hello\n")
    with pytest.raises(StateError):
        mc.load_tallies(path)


def test_estimate_errors():
    with pytest.raises(StateError):
        mc.moment_estimate(mc.TallySet(), "collision", 2)
    tallies = mc.run(mc.McConfig(problem("exp", 2, 0.5), 500, n_max=2))
    with pytest.raises(StateError):
        mc.shell_estimates(tallies, "collision")
    with pytest.raises(DomainError):
        mc.moment_estimate(tallies, "collision", 3)
    with pytest.raises(DomainError):
        mc.moment_estimate(tallies, "collision", 2, 5)
    with pytest.raises(DomainError):
        mc.moment_estimate(tallies, "current", 2)
