import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from fockqpt import (Phase, build_hamiltonian, coupling_report, exit_rate_hamiltonian,
                     finite_size_prediction, ground_state, make_partition, partition_energies,
                     propagator_apply, theorem_prediction, two_level_rpm)
from fockqpt.errors import EmptyReservoir
from fockqpt.fock import restrict
from fockqpt.spectral import DegenerateGroundState, classify

from conftest import connected_models, cube, path3, two_state


class TestGroundState:
    def test_two_state_free(self):
        gs = ground_state(two_state(eta=0.6))
        assert gs.energy == pytest.approx(-0.6, abs=1e-14)
        assert np.allclose(gs.vector, [1 / math.sqrt(2)] * 2)

    @pytest.mark.parametrize("N,gamma", [(3, 1.0), (5, 0.3), (8, 1.7)])
    def test_free_hypercube(self, N, gamma):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateGroundState)
            assert ground_state(cube(N, gamma)).energy == pytest.approx(-N * gamma, abs=1e-10)

    @pytest.mark.parametrize("v,eta", [(1.0, 1.0), (0.3, 2.0), (5.0, 0.1)])
    def test_two_state_closed_form(self, v, eta):
        gs = ground_state(two_state((0.0, v), eta))
        assert gs.energy == pytest.approx(v / 2 - math.sqrt(v * v / 4 + eta * eta), abs=1e-13)

    def test_excited_energy(self):
        gs = ground_state(two_state((0.0, 1.0)))
        assert gs.gap_energy == pytest.approx(0.5 + math.sqrt(1.25))

    def test_single_state(self):
        gs = ground_state(restrict(two_state((0.4, 1.0)), [0], allow_isolated=True))
        assert gs.energy == 0.4 and gs.gap_energy == math.inf

    @pytest.mark.parametrize("N", [6, 8, 10])
    def test_sparse_matches_dense(self, N):
        rng = np.random.default_rng(N)
        H = cube(N, 1.0, N * rng.choice([0.0, 1.0], size=1 << N))
        d = ground_state(H, method="dense")
        s = ground_state(H, method="sparse")
        assert s.energy == pytest.approx(d.energy, abs=1e-9)
        assert s.gap_energy == pytest.approx(d.gap_energy, abs=1e-9)
        assert abs(s.vector @ d.vector) == pytest.approx(1.0, abs=1e-9)

    def test_sparse_path_large(self):
        rng = np.random.default_rng(3)
        H = cube(13, 1.0, 13 * rng.choice([0.0, 1.0], size=1 << 13, p=[0.1, 0.9]))
        gs = ground_state(H)
        assert gs.residual <= 1e-10 * H.norm()
        assert gs.energy <= H.potential.min()

    def test_dense_size_cap(self):
        with pytest.raises(ValueError):
            ground_state(cube(13, 1.0), method="dense")

    def test_deterministic(self):
        H = cube(7, 0.8, np.arange(128) % 5 * 1.0)
        a, b = ground_state(H, method="sparse"), ground_state(H, method="sparse")
        assert a.energy == b.energy and np.array_equal(a.vector, b.vector)

    @given(connected_models())
    def test_oracle_invariants(self, H):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateGroundState)
            gs = ground_state(H)
        assert gs.residual <= 1e-10 * max(H.norm(), 1)
        assert abs(gs.vector @ gs.vector - 1) <= 1e-12
        assert gs.energy <= gs.gap_energy
        assert gs.energy <= H.potential.min() + 1e-12
        if H.stoquastic:
            assert gs.vector.min() > 0

    @given(connected_models(), st.data())
    def test_variational_ordering(self, H, data):
        ids = data.draw(st.sets(st.integers(0, H.M - 1), min_size=1, max_size=H.M - 1))
        P = make_partition(H, ids)
        en = partition_energies(H, P)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", DegenerateGroundState)
            E = ground_state(H).energy
        assert E <= min(en.e_tilde, en.e_bar) + 1e-10


class TestPropagator:
    def test_identity_at_zero(self):
        v = np.array([0.3, -1.0, 2.0])
        assert np.array_equal(propagator_apply(path3((1, 2, 3)), v, 0.0), v)

    @pytest.mark.parametrize("t", [0.1, 1.0, 3.0])
    def test_two_state_sum(self, t):
        eta = 0.9
        out = propagator_apply(two_state(eta=eta), np.array([1.0, 0.0]), t)
        assert out.sum() == pytest.approx(math.exp(eta * t), rel=1e-12)

    def test_weak_kinetic_is_nearly_diagonal(self):
        H = build_hamiltonian(3, 1, [0.5, 1.0, 2.0], [(0, 1, -1e-9), (1, 2, -1e-9)])
        out = propagator_apply(H, np.ones(3), 2.0)
        assert np.allclose(out, np.exp(-2.0 * H.potential), rtol=1e-9)

    @pytest.mark.parametrize("t", [0.5, 2.0, 6.0])
    def test_krylov_matches_dense(self, t):
        rng = np.random.default_rng(11)
        H = cube(8, 0.7, rng.normal(0, 2, 256))
        v0 = np.zeros(256)
        v0[3] = 1.0
        ref = expm(-t * H.dense()) @ v0
        kr = propagator_apply(H, v0, t, method="krylov")
        assert np.allclose(kr, ref, rtol=1e-9, atol=1e-9 * np.abs(ref).max())


class TestPartitionEnergies:
    def test_single_state_cavity(self):
        H = cube(4, 1.0, [0.7] + [3.0] * 15)
        en = partition_energies(H, make_partition(H, [0]))
        assert en.e_bar == 0.7

    def test_full_cavity_forbidden(self):
        with pytest.raises(EmptyReservoir):
            make_partition(path3(), [0, 1, 2])

    def test_reservoir_trend(self):
        v2, gamma = 1.0, 0.8
        dev = []
        for N in (8, 10, 12):
            H, P = two_level_rpm(N, gamma, 0.0, v2)
            dev.append(abs(partition_energies(H, P).e_tilde / N - (v2 - gamma)))
        assert dev[0] > dev[1] > dev[2]
        assert dev[2] < 0.01


class TestPrediction:
    def test_normal(self):
        e, ph = theorem_prediction(-0.5, 0.0, 1)
        assert (e, ph) == (-0.5, Phase.NORMAL)

    def test_frozen(self):
        assert theorem_prediction(0.3, 0.0, 1) == (0.0, Phase.FROZEN)

    def test_critical(self):
        assert theorem_prediction(-2.0, -2.0, 4)[1] is Phase.CRITICAL
        assert theorem_prediction(-2.0, -2.0 + 1e-8, 4, tol=1e-6) == (-0.5, Phase.CRITICAL)

    def test_extensive_inputs(self):
        assert theorem_prediction(-10.0, -8.0, 10) == (-1.0, Phase.NORMAL)

    def test_non_finite(self):
        with pytest.raises(ValueError):
            theorem_prediction(math.nan, 0.0, 1)

    def test_classify_densities(self):
        assert classify(0.1, 0.2) == (0.1, Phase.NORMAL)


class TestCoupling:
    def test_single_state_stoquastic(self):
        H = cube(4, 0.5, np.arange(16.0))
        rep = coupling_report(H, make_partition(H, [0]))
        assert rep.kout_simple == pytest.approx(-H.R[0])

    def test_hypercube_three(self):
        g = 1.3
        H = cube(3, g, [0.0] + [2.0] * 7)
        rep = coupling_report(H, make_partition(H, [0]))
        assert rep.kout_simple == pytest.approx(-3 * g)

    def test_negative_links(self):
        H = build_hamiltonian(4, 1, [0, 1, 1, 1], [(0, 1, 0.5), (0, 2, 0.5), (1, 3, -1), (2, 3, -1)])
        rep = coupling_report(H, make_partition(H, [0]))
        assert rep.kout_simple == pytest.approx(+1.0)

    def test_overlap_definition(self):
        H = cube(4, 0.7, np.arange(16.0) % 3)
        P = make_partition(H, [0])
        en = partition_energies(H, P)
        rep = coupling_report(H, P, en)
        vec = en.reservoir.vector
        for n, c in rep.overlap_reservoir.items():
            k = int(np.searchsorted(P.reservoir, n))
            assert c == pytest.approx(vec.sum() * vec[k], rel=1e-14)
        assert set(rep.overlap_reservoir) == set(P.reservoir_boundary.tolist())

    def test_single_state_estimators_coincide_in_sign(self):
        H, P = two_level_rpm(6, 1.0, 0.0, 1.0)
        rep = coupling_report(H, P)
        assert rep.kout_simple == pytest.approx(-6.0)
        assert rep.kout_boundary < 0 and math.isfinite(rep.kout_boundary)


class TestExitRate:
    def test_single_state(self):
        H = cube(4, 0.9)
        rep = exit_rate_hamiltonian(H, make_partition(H, [6]))
        assert rep.e_star == pytest.approx(3.6)
        assert rep.star_star_energy == 0.0

    def test_two_state_cavity(self):
        a, b = 0.4, 1.1
        H = build_hamiltonian(4, 1, np.zeros(4), [(0, 1, -a), (0, 2, -b), (1, 3, -b), (2, 3, -1)])
        assert exit_rate_hamiltonian(H, make_partition(H, [0, 1])).e_star == pytest.approx(b)

    @given(connected_models(), st.data())
    def test_positive_rate_zero_star_star(self, H, data):
        ids = data.draw(st.sets(st.integers(0, H.M - 1), min_size=1, max_size=H.M - 1))
        rep = exit_rate_hamiltonian(H, make_partition(H, ids))
        assert rep.e_star > 0
        assert abs(rep.star_star_energy) <= 1e-10 * rep.norm


class TestFiniteSize:
    def test_dilution_limits(self):
        assert finite_size_prediction(-1.5, 0.0, -3.0) == -1.5
        assert finite_size_prediction(-1.5, 0.2, 0.0) == -1.5

    def test_hypercube_single_state(self):
        N, g = 8, 1.0
        H, P = two_level_rpm(N, g, 0.0, 1.0)
        rep = coupling_report(H, P)
        assert finite_size_prediction(0.0, P.pibar, rep.kout_simple) == pytest.approx(-N * g / 2**N)
