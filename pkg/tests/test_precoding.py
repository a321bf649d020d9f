import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from mahbf.channel import ChannelConfig, generate_channel
from mahbf.numerics import ContractError, Rng
from mahbf.precoding import (
    AnalogPrecoder,
    DegenerateGeometryError,
    LinkConfig,
    RewardForm,
    assemble_digital,
    effective_gains,
    full_digital_zf_rate,
    general_sum_rate,
    hybrid_zf_solution,
    random_phase_baseline,
    water_filling,
    wrap_phase,
    zf_digital,
    zf_sum_rate,
)


def setup(seed, n_tx=16, k=4, n_rf=4):
    rng = Rng(seed)
    H = generate_channel(ChannelConfig(n_tx=n_tx, n_users=k), rng)
    analog = AnalogPrecoder(rng.uniform((n_tx, n_rf), -np.pi, np.pi))
    return H, analog


def bisection_water_filling(y, s, p_total):
    """Independent oracle: root-find the water level on the budget equation."""
    def excess(mu):
        return np.sum(y * np.maximum(mu / y - s, 0.0)) - p_total
    mu = brentq(excess, 0.0, p_total + np.max(y * s) * len(y) + 1.0, xtol=1e-14, rtol=1e-15)
    return np.maximum(mu / y - s, 0.0), mu


class TestZf:
    @pytest.mark.parametrize("seed", range(5))
    def test_diagonalizes(self, seed):
        H, analog = setup(seed)
        f = zf_digital(H, analog)
        G = H @ analog.matrix @ f
        assert np.max(np.abs(G - np.eye(4))) < 1e-9

    def test_more_rf_than_users(self):
        H, analog = setup(1, n_tx=16, k=3, n_rf=6)
        f = zf_digital(H, analog)
        assert f.shape == (6, 3)
        assert np.max(np.abs(H @ analog.matrix @ f - np.eye(3))) < 1e-9

    def test_single_user_closed_form(self):
        H, analog = setup(2, k=1, n_rf=1)
        f = zf_digital(H, analog)
        hf = (H @ analog.matrix)[0, 0]
        assert abs(f[0, 0] - np.conj(hf) / abs(hf) ** 2) < 1e-12

    def test_scale_homogeneity(self):
        H, analog = setup(3)
        np.testing.assert_allclose(zf_digital(2.5 * H, analog), zf_digital(H, analog) / 2.5, atol=1e-12)

    def test_degenerate_geometry(self):
        H = np.ones((2, 4), dtype=complex)
        with pytest.raises(DegenerateGeometryError):
            zf_digital(H, AnalogPrecoder(np.zeros((4, 2))))

    def test_too_many_users(self):
        H, analog = setup(4, k=4, n_rf=4)
        with pytest.raises(ContractError):
            zf_digital(H, AnalogPrecoder(analog.phases[:, :3]))


class TestWaterFilling:
    def test_symmetric(self):
        pa = water_filling([1.0, 1.0], [1.0, 1.0], 2.0)
        np.testing.assert_allclose(pa.powers, [1.0, 1.0])
        assert pa.mu == pytest.approx(2.0)

    def test_weak_user_dropped(self):
        pa = water_filling([1.0, 4.0], [1.0, 1.0], 1.0)
        np.testing.assert_allclose(pa.powers, [1.0, 0.0], atol=1e-15)
        assert pa.mu == pytest.approx(2.0)

    def test_boundary_user_gets_zero(self):
        # second threshold equals the one-user water level exactly
        pa = water_filling([1.0, 2.0], [1.0, 1.0], 1.0)
        np.testing.assert_allclose(pa.powers, [1.0, 0.0], atol=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2**31), k=st.integers(1, 8), log_p=st.floats(-2, 3))
    def test_against_bisection(self, seed, k, log_p):
        rng = Rng(seed)
        y = np.exp(rng.uniform(k, -3, 3))
        s = np.exp(rng.uniform(k, -1, 1))
        p_total = 10.0**log_p
        pa = water_filling(y, s, p_total)
        ref, mu = bisection_water_filling(y, s, p_total)
        assert np.all(pa.powers >= 0)
        assert abs(pa.budget_used() - p_total) <= 1e-9 * p_total
        assert pa.mu == pytest.approx(mu, rel=1e-9)
        np.testing.assert_allclose(pa.powers, ref, atol=1e-9 * max(1.0, p_total))

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31), k=st.integers(2, 6))
    def test_beats_random_feasible(self, seed, k):
        rng = Rng(seed)
        y, s = np.exp(rng.uniform(k, -2, 2)), np.exp(rng.uniform(k, -1, 1))
        best = zf_sum_rate(water_filling(y, s, 3.0))
        for _ in range(100):
            w = rng.uniform(k)
            p = 3.0 * w / np.dot(y, w)
            assert np.sum(np.log2(1 + p / s)) <= best + 1e-12

    def test_rate_monotone_in_budget(self):
        y, s = np.array([0.5, 1.0, 3.0]), np.ones(3)
        rates = [zf_sum_rate(water_filling(y, s, p)) for p in np.logspace(-2, 2, 30)]
        assert np.all(np.diff(rates) > 0)

    @pytest.mark.parametrize("y, s, p", [([0.0, 1.0], [1, 1], 1), ([1, 1], [1, -1], 1), ([1], [1], 0)])
    def test_rejects_bad_input(self, y, s, p):
        with pytest.raises(ContractError):
            water_filling(np.array(y, float), np.array(s, float), p)


class TestRates:
    def test_effective_gains_are_column_norms(self):
        H, analog = setup(5)
        f = zf_digital(H, analog)
        B = analog.matrix @ f
        np.testing.assert_allclose(effective_gains(f, analog), np.real(np.diag(B.conj().T @ B)), rtol=1e-12)

    def test_assembled_power_matches_budget(self):
        H, analog = setup(6)
        link = LinkConfig(n_rf=4, snr_db=5.0)
        sol = hybrid_zf_solution(H, analog, link)
        assert sol.total_power() == pytest.approx(link.p_total, rel=1e-9)
        assert sol.power.budget_used() == pytest.approx(link.p_total, rel=1e-9)

    def test_zf_rate_equals_sinr_rate(self):
        # with ZF there is no interference, so both rate formulas agree
        H, analog = setup(7)
        link = LinkConfig(n_rf=4, snr_db=10.0)
        sol = hybrid_zf_solution(H, analog, link)
        assert general_sum_rate(H, analog, sol.digital, link.noise_powers(4)) == pytest.approx(sol.sum_rate, rel=1e-9)

    def test_reward_forms(self):
        pa = water_filling([1.0, 1.0], [1.0, 1.0], 4.0)
        assert zf_sum_rate(pa) == pytest.approx(2 * np.log2(3))
        assert zf_sum_rate(pa, RewardForm.P_SQUARED) == pytest.approx(2 * np.log2(5))

    @pytest.mark.parametrize("seed", range(8))
    def test_full_digital_bounds_hybrid(self, seed):
        H, analog = setup(seed, n_tx=8, k=2, n_rf=2)
        link = LinkConfig(n_rf=2, snr_db=5.0)
        ub = full_digital_zf_rate(H, link.noise_powers(2), link.p_total)
        # hybrid ZF realizes a ZF precoder with the same budget, never beating the pseudo-inverse
        assert hybrid_zf_solution(H, analog, link).sum_rate <= ub + 1e-9

    def test_baseline_deterministic(self):
        H, _ = setup(9)
        link = LinkConfig(n_rf=4)
        a = random_phase_baseline(H, link, Rng(1))
        b = random_phase_baseline(H, link, Rng(1))
        assert a.sum_rate == b.sum_rate
        assert np.all(np.abs(a.analog.phases) <= np.pi)


class TestPhases:
    def test_wrap(self):
        np.testing.assert_allclose(wrap_phase([0.0, np.pi, -np.pi, 3 * np.pi, 2 * np.pi + 0.1]),
                                   [0.0, np.pi, np.pi, np.pi, 0.1], atol=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(x=st.floats(-100, 100))
    def test_wrap_range_and_equivalence(self, x):
        w = float(wrap_phase(x))
        assert -np.pi < w <= np.pi
        assert abs(np.exp(1j * w) - np.exp(1j * x)) < 1e-9

    def test_vec_round_trip(self):
        phases = Rng(3).uniform((5, 3), -3, 3)
        a = AnalogPrecoder(phases)
        v = a.vec()
        np.testing.assert_array_equal(v[:5], phases[:, 0])
        np.testing.assert_array_equal(AnalogPrecoder.from_vec(v, 5, 3).phases, a.phases)
        with pytest.raises(ContractError):
            AnalogPrecoder.from_vec(v[:-1], 5, 3)

    def test_matrix_is_unit_modulus(self):
        a = AnalogPrecoder(Rng(4).uniform((6, 2), -10, 10))
        np.testing.assert_allclose(np.abs(a.matrix), 1.0)
