import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from mwlines import integrator as itg


class TestStepConfig:
    @pytest.mark.parametrize("dt", [0.0, -1e-3])
    def test_rejects_nonpositive_dt(self, dt):
        with pytest.raises(ValueError):
            itg.StepConfig(dt)

    def test_rejects_unknown_method(self):
        with pytest.raises(ValueError):
            itg.StepConfig(1e-3, "midpoint")


class TestStep:
    @pytest.mark.parametrize("method", [itg.RK4, itg.EULER])
    def test_zero_rhs(self, method):
        x = np.array([1.0, -2.0, 3.0])
        out = itg.step(lambda t, s: np.zeros_like(s), x, 0.0, itg.StepConfig(0.1, method))
        np.testing.assert_array_equal(out, x)

    def test_rk4_exponential(self):
        out = itg.step(lambda t, x: -x, np.array([1.0]), 0.0, itg.StepConfig(0.01))
        assert out[0] == pytest.approx(0.99004983, abs=1e-8)
        assert abs(out[0] - np.exp(-0.01)) < 1e-10

    def test_euler_exponential(self):
        out = itg.step(lambda t, x: -x, np.array([1.0]), 0.0, itg.StepConfig(0.01, itg.EULER))
        assert out[0] == pytest.approx(0.99)

    def test_rk4_stage_times(self):
        seen = []

        def rhs(t, x):
            seen.append(t)
            return np.zeros_like(x)

        itg.step(rhs, np.zeros(1), 2.0, itg.StepConfig(0.5))
        assert seen == [2.0, 2.25, 2.25, 2.5]

    def test_rk4_exact_for_cubic_in_time(self):
        # x' = 3 t^2 integrates exactly under Simpson weights
        out = itg.step(lambda t, x: np.array([3 * t**2]), np.zeros(1), 1.0, itg.StepConfig(0.5))
        assert out[0] == pytest.approx(1.5**3 - 1.0, abs=1e-14)

    def test_fourth_order(self):
        def err(dt):
            x, t = np.array([1.0]), 0.0
            cfg = itg.StepConfig(dt)
            for _ in range(int(round(1.0 / dt))):
                x = itg.step(lambda t, s: -s, x, t, cfg)
                t += dt
            return abs(x[0] - np.exp(-1.0))

        ratio = err(0.1) / err(0.05)
        assert 14 < ratio < 18

    def test_nonfinite_raises(self):
        with pytest.raises(itg.NonFiniteState):
            itg.step(lambda t, x: np.full_like(x, np.nan), np.zeros(2), 0.0, itg.StepConfig())

    def test_nonfinite_unchecked(self):
        out = itg.step(lambda t, x: np.full_like(x, np.nan), np.zeros(2), 0.0, itg.StepConfig(),
                       check_finite=False)
        assert np.isnan(out).all()

    def test_deterministic(self):
        rhs = lambda t, x: np.sin(t) * x + np.cos(x)  # noqa: E731
        x = np.linspace(-1, 1, 7)
        a = itg.step(rhs, x, 0.3, itg.StepConfig())
        b = itg.step(rhs, x.copy(), 0.3, itg.StepConfig())
        assert a.tobytes() == b.tobytes()


class TestLayout:
    def test_ranges_disjoint_and_cover(self):
        lay = itg.StateLayout({"c": (3,), "tau": (6, 2), "chi": (6,)})
        assert lay.size == 21
        covered = np.zeros(lay.size, int)
        for sl in lay.slices.values():
            covered[sl] += 1
        np.testing.assert_array_equal(covered, 1)

    def test_pack_unpack(self):
        lay = itg.StateLayout({"c": (3,), "tau": (2, 2), "psi": ()})
        rng = np.random.default_rng(0)
        blocks = {"c": rng.normal(size=(5, 3)), "tau": rng.normal(size=(5, 2, 2)), "psi": rng.normal(size=5)}
        x = lay.pack(**blocks)
        assert x.shape == (5, lay.size)
        back = lay.unpack(x)
        for k, v in blocks.items():
            np.testing.assert_array_equal(back[k], v)

    def test_pack_broadcasts(self):
        lay = itg.StateLayout({"a": (2,), "b": (1,)})
        x = lay.pack(a=np.ones((4, 2)), b=np.zeros(1))
        assert x.shape == (4, 3)

    def test_pack_missing(self):
        with pytest.raises(KeyError):
            itg.StateLayout({"a": (2,), "b": (1,)}).pack(a=np.ones(2))

    def test_pack_bad_shape(self):
        with pytest.raises(ValueError):
            itg.StateLayout({"a": (2,)}).pack(a=np.ones(3))

    def test_unknown_unit_block(self):
        with pytest.raises(KeyError):
            itg.StateLayout({"a": (3,)}, unit=("b",))


class TestRenormalize:
    def test_unit_block_untouched(self):
        lay = itg.StateLayout({"d": (3,), "x": (1,)}, unit=("d",))
        state = np.array([0.6, 0.8, 0.0, 5.0])
        out = itg.renormalize_rotation_block(state, lay)
        assert out.tobytes() == state.tobytes()

    def test_rescales(self):
        lay = itg.StateLayout({"d": (3,), "x": (1,)}, unit=("d",))
        out = itg.renormalize_rotation_block(np.array([0.0, 2.0, 0.0, 5.0]), lay)
        np.testing.assert_array_equal(out, [0.0, 1.0, 0.0, 5.0])

    def test_zero_norm(self):
        lay = itg.StateLayout({"d": (3,)}, unit=("d",))
        with pytest.raises(itg.ZeroNorm):
            itg.renormalize_rotation_block(np.zeros(3), lay)

    @given(st.lists(st.floats(0.1, 10), min_size=3, max_size=3))
    def test_normalize_rows(self, v):
        assert np.linalg.norm(itg.normalize_rows(v)) == pytest.approx(1.0)

    def test_orthonormalize(self):
        rng = np.random.default_rng(4)
        R = np.eye(3) + 1e-3 * rng.normal(size=(3, 3))
        Q = itg.orthonormalize(R)
        np.testing.assert_allclose(Q.T @ Q, np.eye(3), atol=1e-14)
        assert np.linalg.det(Q) == pytest.approx(1.0)
        # nearest rotation beats the identity
        assert np.linalg.norm(Q - R) <= np.linalg.norm(np.eye(3) - R)

    def test_polish_matches_polar_factor(self):
        rng = np.random.default_rng(5)
        R = itg.orthonormalize(rng.normal(size=(20, 3, 3)))
        R = R * np.sign(np.linalg.det(R))[:, None, None]
        drift = R + 1e-8 * rng.normal(size=R.shape)
        np.testing.assert_allclose(itg.polish_rotation(drift), itg.orthonormalize(drift), atol=1e-14)
        P = itg.polish_rotation(drift)
        np.testing.assert_allclose(np.swapaxes(P, -1, -2) @ P, np.broadcast_to(np.eye(3), P.shape), atol=1e-15)
