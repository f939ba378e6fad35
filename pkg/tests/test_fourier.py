import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fourier_circuits.construction import construct_max_margin, construct_neuron_specs, cosine_neuron
from fourier_circuits.dataset import BudgetExceeded
from fourier_circuits.fourier import (
    Spectrum,
    dft1,
    dft2,
    frequency_powers,
    idft1,
    idft2,
    max_normalized_power,
    network_dft,
    output_table,
    table_dft,
    write_spectrum_csv,
)
from fourier_circuits.mlp import forward_mlp

PRIMES = [3, 5, 7, 11, 13]


def slow_dft(u):
    """Scalar reference: sum_a u(a) exp(-2 pi i j a / p) with cmath."""
    p = len(u)
    return [sum(u[a] * cmath.exp(-2j * math.pi * j * a / p) for a in range(p)) for j in range(p)]


def finite_floats():
    return st.floats(-10, 10, allow_nan=False, allow_infinity=False)


class TestDft1:
    def test_delta(self):
        np.testing.assert_allclose(dft1(np.eye(5)[0]).coeffs, np.ones(5), atol=1e-15)

    def test_cosine_peaks(self):
        u = np.cos(2 * np.pi * 2 * np.arange(7) / 7)
        c = dft1(u).coeffs
        np.testing.assert_allclose(c[[2, 5]], [3.5, 3.5], atol=1e-12)
        mask = np.ones(7, bool)
        mask[[2, 5]] = False
        assert np.abs(c[mask]).max() < 1e-12

    def test_constant(self):
        c = dft1(np.ones(5)).coeffs
        assert abs(c[0] - 5) < 1e-12
        assert np.abs(c[1:]).max() < 1e-12

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            dft1(np.ones(4), p=5)

    @pytest.mark.parametrize("p", PRIMES)
    def test_matches_scalar_oracle(self, p):
        u = np.random.default_rng(p).normal(size=p)
        np.testing.assert_allclose(dft1(u).coeffs, slow_dft(list(u)), atol=1e-11)

    @settings(max_examples=50, deadline=None)
    @given(st.sampled_from(PRIMES).flatmap(lambda p: arrays(float, p, elements=finite_floats())))
    def test_plancherel(self, u):
        p = len(u)
        lhs = np.sum(np.abs(dft1(u).coeffs) ** 2)
        rhs = p * np.sum(u**2)
        assert abs(lhs - rhs) <= 1e-12 * max(rhs, 1e-300) + 1e-300

    @settings(max_examples=50, deadline=None)
    @given(st.sampled_from(PRIMES).flatmap(lambda p: arrays(float, p, elements=finite_floats())))
    def test_conjugate_symmetry(self, u):
        c = dft1(u).coeffs
        p = len(u)
        np.testing.assert_allclose(c[(-np.arange(p)) % p], np.conj(c), atol=1e-10)

    @settings(max_examples=30, deadline=None)
    @given(
        st.sampled_from(PRIMES).flatmap(
            lambda p: st.tuples(arrays(float, p, elements=finite_floats()), arrays(float, p, elements=finite_floats()))
        ),
        finite_floats(),
        finite_floats(),
    )
    def test_linearity(self, uv, alpha, beta):
        u, v = uv
        lhs = dft1(alpha * u + beta * v).coeffs
        rhs = alpha * dft1(u).coeffs + beta * dft1(v).coeffs
        np.testing.assert_allclose(lhs, rhs, atol=1e-12 * max(1.0, np.abs(lhs).max()) * 10)


class TestIdft1:
    def test_roundtrip(self):
        u = np.random.default_rng(0).uniform(-1, 1, 11)
        assert np.abs(idft1(dft1(u)) - u).max() < 1e-12

    def test_dc_spectrum(self):
        s = Spectrum(5, np.array([5, 0, 0, 0, 0], dtype=complex))
        np.testing.assert_allclose(idft1(s), np.ones(5), atol=1e-15)

    def test_pair_gives_cosine(self):
        p, z = 7, 3
        c = np.zeros(p, complex)
        c[z] = c[p - z] = p / 2
        np.testing.assert_allclose(idft1(Spectrum(p, c)), np.cos(2 * np.pi * z * np.arange(p) / p), atol=1e-12)


class TestDft2:
    def test_constant(self):
        c = dft2(np.ones((5, 5))).coeffs
        assert abs(c[0, 0] - 25) < 1e-12
        c[0, 0] = 0
        assert np.abs(c).max() < 1e-12

    def test_product_cosine(self):
        p, z = 7, 2
        cz = np.cos(2 * np.pi * z * np.arange(p) / p)
        c = dft2(np.outer(cz, cz)).coeffs
        peaks = [(z, z), (z, p - z), (p - z, z), (p - z, p - z)]
        for j in peaks:
            assert abs(c[j] - p * p / 4) < 1e-10
        for j in np.ndindex(p, p):
            if j not in peaks:
                assert abs(c[j]) < 1e-10

    def test_matches_double_sum(self):
        p = 5
        m = np.random.default_rng(1).normal(size=(p, p))
        c = dft2(m).coeffs
        for j1, j2 in [(0, 0), (1, 3), (4, 2)]:
            ref = sum(m[a, b] * cmath.exp(-2j * math.pi * (j1 * a + j2 * b) / p) for a in range(p) for b in range(p))
            assert abs(c[j1, j2] - ref) < 1e-11

    def test_roundtrip(self):
        m = np.random.default_rng(2).normal(size=(7, 7))
        np.testing.assert_allclose(idft2(dft2(m)), m, atol=1e-10)

    def test_non_square(self):
        with pytest.raises(ValueError):
            dft2(np.ones((3, 5)))


class TestMaxNormalizedPower:
    def test_single_frequency(self):
        u = np.cos(2 * np.pi * 3 * np.arange(11) / 11 + 0.7)
        power, z = max_normalized_power(u)
        assert abs(power - 1.0) < 1e-12 and z == 3

    def test_delta_is_flat(self):
        power, z = max_normalized_power(np.eye(7)[0])
        assert abs(power - 1 / 3) < 1e-12 and z == 1

    def test_tie_goes_to_smaller_frequency(self):
        a = np.arange(7)
        u = np.cos(2 * np.pi * a / 7) + np.cos(2 * np.pi * 2 * a / 7)
        power, z = max_normalized_power(u)
        assert abs(power - 0.5) < 1e-12 and z == 1

    def test_dc_ignored(self):
        u = 5 + np.cos(2 * np.pi * 2 * np.arange(5) / 5)
        assert max_normalized_power(u) == pytest.approx((1.0, 2))

    def test_zero_vector(self):
        with pytest.raises(ValueError):
            max_normalized_power(np.zeros(5))
        with pytest.raises(ValueError):
            max_normalized_power(np.ones(5))

    def test_powers_pair_conjugates(self):
        u = np.random.default_rng(3).normal(size=11)
        pw = np.abs(np.array(slow_dft(list(u)))) ** 2
        np.testing.assert_allclose(frequency_powers(u), [pw[j] + pw[11 - j] for j in range(1, 6)], rtol=1e-10)


class TestNetworkDft:
    def test_constant(self):
        f = lambda a1, a2, c: np.ones(np.broadcast(a1, a2, c).shape)  # noqa: E731
        assert abs(network_dft(f, 5, 2, (0, 0, 0)) - 125) < 1e-9
        assert abs(network_dft(f, 5, 2, (1, 0, 3))) < 1e-9

    @pytest.mark.parametrize("lam", [0.5, 2.0])
    def test_indicator(self, lam):
        p, k = 5, 2
        f = lambda a1, a2, c: lam * ((a1 + a2 - c) % p == 0)  # noqa: E731
        for j in range(p):
            assert abs(network_dft(f, p, k, (j, j, -j)) - lam * p**k) < 1e-9

    def test_scalar_callable(self):
        p, k = 3, 2
        f = lambda a1, a2, c: float((a1 + a2 - c) % p == 0)  # noqa: E731
        assert abs(network_dft(f, p, k, (1, 1, 2)) - 9) < 1e-9

    def test_constructed_network_positive(self):
        p, k = 5, 2
        net = construct_max_margin(p, k)
        f = lambda *x: forward_mlp(net, x[:k])[x[k]]  # noqa: E731
        for z in (1, 2):
            assert network_dft(f, p, k, (z, z, -z)).real > 0

    def test_single_neuron_support(self):
        p, k = 5, 2
        spec = construct_neuron_specs(p, k)[5]
        from fourier_circuits.mlp import MlpParams

        net = MlpParams.from_neurons([cosine_neuron(spec, p, k)])
        f = lambda *x: forward_mlp(net, x[:k])[x[k]]  # noqa: E731
        z = spec.zeta
        table = output_table(f, p, k)
        for j in np.ndindex(p, p, p):
            if abs(table_dft(table, j)) > 1e-9:
                assert set(j) <= {z, p - z} or 0 in j[:k]

    def test_budget(self):
        with pytest.raises(BudgetExceeded):
            network_dft(lambda *a: 0.0, 101, 3, (0, 0, 0, 0))

    def test_wrong_index_count(self):
        with pytest.raises(ValueError):
            network_dft(lambda *a: 0.0, 5, 2, (0, 0))


def test_spectrum_csv(tmp_path):
    path = tmp_path / "s.csv"
    write_spectrum_csv(path, {"n0": np.cos(2 * np.pi * np.arange(5) / 5)})
    rows = path.read_text().splitlines()
    assert rows[0] == "neuron,freq,power,normalized_power"
    assert rows[1].startswith("n0,1,") and rows[1].endswith(",1.0")
