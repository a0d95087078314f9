import math

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp

from qmemlab import bath, davies, lattice as lat
from qmemlab._errors import CapacityError, NumericalFailure, ParameterError

from conftest import flat_rates


@pytest.fixture(scope="module")
def ring3_gen():
    ring = lat.build_ising_ring(3)
    rates = flat_rates(1e-12, davies.ising_bohr_frequencies(ring))
    return davies.build_ising_generator(ring, rates, beta=1e-12)


@pytest.fixture(scope="module")
def kitaev2_gen():
    torus = lat.build_torus(2)
    rates = flat_rates(1.0, davies.kitaev_bohr_frequencies())
    return davies.build_kitaev_sector_generator(torus, rates, beta=1.0)


class TestRates:
    def test_kms_arithmetic(self):
        model = bath.build_spectral_density(bath.FLAT_KMS, amplitude=1.0,
                                            cutoff=10.0, beta=0.5)
        table = davies.build_rates(model, (-4.0, 0.0, 4.0), coupling_sq=2.0)
        assert table.rate(4.0) == pytest.approx(2.0)
        assert table.rate(-4.0) == pytest.approx(2.0 * math.exp(-2.0))
        assert table.rate(0.0) == pytest.approx(2.0)
        assert table.detailed_balance_residual() == 0.0

    def test_infinite_temperature_rates_equal(self):
        model = bath.build_spectral_density(bath.FLAT_KMS, amplitude=1.0,
                                            cutoff=10.0, beta=1e-12)
        table = davies.build_rates(model, (-4.0, -2.0, 0.0, 2.0, 4.0))
        assert np.allclose(table.rates, table.rates[0], rtol=1e-9)

    def test_frequency_outside_window(self):
        model = bath.build_spectral_density(bath.FLAT_KMS, amplitude=1.0,
                                            cutoff=3.0, beta=1.0)
        with pytest.raises(ParameterError):
            davies.build_rates(model, (-4.0, 0.0, 4.0))

    def test_negation_closure_required(self):
        model = bath.build_spectral_density(bath.FLAT_KMS, amplitude=1.0,
                                            cutoff=10.0, beta=1.0)
        with pytest.raises(ParameterError):
            davies.build_rates(model, (0.0, 4.0))


class TestGeneratorStructure:
    def test_column_sums_zero(self, kitaev2_gen):
        sums = np.asarray(kitaev2_gen.matrix.sum(axis=0)).ravel()
        assert np.max(np.abs(sums)) < 1e-12

    def test_offdiagonals_nonnegative(self, kitaev2_gen):
        coo = kitaev2_gen.matrix.tocoo()
        off = coo.data[coo.row != coo.col]
        assert np.all(off >= 0)

    def test_gibbs_weights(self, kitaev2_gen):
        pi = kitaev2_gen.stationary_weights
        assert np.all(pi > 0)
        assert pi.sum() == pytest.approx(1.0)

    def test_db_and_stationarity_residuals(self, kitaev2_gen):
        rep = davies.check_db_stationarity(kitaev2_gen)
        assert rep.stationarity_residual < 1e-10
        assert rep.db_max_residual < 1e-10

    def test_perturbed_rate_detected(self, ring3_gen):
        mat = ring3_gen.matrix.tolil(copy=True)
        rows, cols = mat.nonzero()
        r, c = next((i, j) for i, j in zip(rows, cols) if i != j)
        mat[r, c] *= 1.1
        broken = davies.GeneratorMatrix(
            dimension=ring3_gen.dimension, matrix=mat.tocsr(),
            stationary_weights=ring3_gen.stationary_weights,
            kind=ring3_gen.kind, beta=ring3_gen.beta,
            energies=ring3_gen.energies)
        rep = davies.check_db_stationarity(broken)
        assert rep.db_max_residual > 1e-6

    def test_beta_zero_uniform_stationary(self, ring3_gen):
        assert np.allclose(ring3_gen.stationary_weights, 1.0 / 8, atol=1e-12)

    def test_capacity_error(self):
        ring = lat.build_ising_ring(8)
        rates = flat_rates(1.0, davies.ising_bohr_frequencies(ring))
        with pytest.raises(CapacityError):
            davies.build_ising_generator(ring, rates, beta=1.0, state_cap=100)


class TestSpectralGap:
    def test_hypercube_walk_gap(self, ring3_gen):
        # beta = 0, unit rates: single-flip walk on the 3-cube; analytic
        # spectrum 2k with multiplicity C(3, k)
        rep = davies.spectral_gap(ring3_gen, k=8)
        assert rep.gap == pytest.approx(2.0, rel=1e-9)
        expected = np.sort([2.0 * bin(s).count("1") for s in range(8)])
        assert np.allclose(rep.eigenvalues, expected, atol=1e-9)

    def test_perron_structure(self, kitaev2_gen):
        rep = davies.spectral_gap(kitaev2_gen, k=3)
        assert abs(rep.eigenvalues[0]) < 1e-9
        assert rep.eigenvalues[1] > 1e-9

    def test_dense_vs_sparse_paths(self, monkeypatch):
        ring = lat.build_ising_ring(7)
        rates = flat_rates(0.7, davies.ising_bohr_frequencies(ring))
        gen = davies.build_ising_generator(ring, rates, beta=0.7)
        dense = davies.spectral_gap(gen, k=4)
        monkeypatch.setattr(davies, "DENSE_LIMIT", 16)
        sparse = davies.spectral_gap(gen, k=4)
        assert sparse.method == "iterative-sparse"
        assert np.allclose(dense.eigenvalues, sparse.eigenvalues, atol=1e-8)

    def test_exact_diagonalization_oracle(self):
        # independent route: dense eig of the full generator (nonsymmetric)
        ring = lat.build_ising_ring(5)
        rates = flat_rates(0.9, davies.ising_bohr_frequencies(ring))
        gen = davies.build_ising_generator(ring, rates, beta=0.9)
        rep = davies.spectral_gap(gen, k=4)
        raw = np.sort(-np.real(scipy.linalg.eigvals(gen.matrix.toarray())))
        assert rep.gap == pytest.approx(raw[1], abs=1e-9)

    def test_requires_detailed_balance(self, ring3_gen):
        mat = ring3_gen.matrix.tolil(copy=True)
        mat[0, 3] = mat[0, 3] + 0.5
        mat[3, 3] = mat[3, 3] - 0.5
        broken = davies.GeneratorMatrix(
            dimension=8, matrix=mat.tocsr(),
            stationary_weights=ring3_gen.stationary_weights,
            kind=ring3_gen.kind, beta=ring3_gen.beta,
            energies=ring3_gen.energies)
        with pytest.raises(ParameterError):
            davies.spectral_gap(broken)


class TestKitaevSector:
    def test_reduced_spectrum_inside_full(self):
        # the gauge quotient is an exact lumping: every reduced eigenvalue
        # must appear in the full configuration-space spectrum
        torus = lat.build_torus(2)
        rates = flat_rates(1.0, davies.kitaev_bohr_frequencies())
        red = davies.build_kitaev_sector_generator(torus, rates, beta=1.0,
                                                   reduced=True)
        full = davies.build_kitaev_sector_generator(torus, rates, beta=1.0,
                                                    reduced=False)
        ev_red = np.linalg.eigvalsh(-davies.symmetrized(red).toarray())
        ev_full = np.linalg.eigvalsh(-davies.symmetrized(full).toarray())
        for ev in ev_red:
            assert np.min(np.abs(ev_full - ev)) < 1e-8

    def test_reduced_dimension(self):
        torus = lat.build_torus(3)
        rates = flat_rates(1.0, davies.kitaev_bohr_frequencies())
        gen = davies.build_kitaev_sector_generator(torus, rates, beta=1.0)
        assert gen.dimension == 4 * 2 ** 8

    def test_energy_scale_changes_boltzmann(self):
        torus = lat.build_torus(2)
        model = bath.build_spectral_density(bath.FLAT_KMS, amplitude=1.0,
                                            cutoff=10.0, beta=1.0)
        for scale in (1.0, 0.5):
            rates = davies.build_rates(model,
                                       davies.kitaev_bohr_frequencies(scale))
            gen = davies.build_kitaev_sector_generator(torus, rates, beta=1.0,
                                                       energy_scale=scale)
            pi = gen.stationary_weights
            e = gen.energies
            boltz = pi[np.argmax(e)] / pi[np.argmin(e)]
            assert boltz == pytest.approx(
                math.exp(-1.0 * (e.max() - e.min())), rel=1e-9)
            assert e.max() - e.min() == pytest.approx(2 * scale * 4)

    def test_star_sector_mirror(self):
        torus = lat.build_torus(2)
        rates = flat_rates(1.0, davies.kitaev_bohr_frequencies())
        plaq = davies.build_kitaev_sector_generator(torus, rates, beta=1.0,
                                                    sector=lat.PLAQUETTE)
        star = davies.build_kitaev_sector_generator(torus, rates, beta=1.0,
                                                    sector=lat.STAR)
        gp = davies.spectral_gap(plaq, k=3)
        gs = davies.spectral_gap(star, k=3)
        assert gp.gap == pytest.approx(gs.gap, rel=1e-9)


class TestConvexityBound:
    @pytest.fixture(scope="class")
    def ring6_gen(self):
        ring = lat.build_ising_ring(6)
        rates = flat_rates(0.8, davies.ising_bohr_frequencies(ring))
        return davies.build_ising_generator(ring, rates, beta=0.8)

    def test_zero_time_equality(self, ring6_gen):
        rng = np.random.default_rng(0)
        obs = davies.random_zero_mean_observable(ring6_gen, rng)
        rep = davies.convexity_bound_check(ring6_gen, obs, [0.0])
        assert rep.min_slack == pytest.approx(0.0, abs=1e-12)

    def test_eigenvector_equality(self, ring6_gen):
        s_mat = davies.symmetrized(ring6_gen).toarray()
        evals, evecs = scipy.linalg.eigh(s_mat)
        sq = np.sqrt(ring6_gen.stationary_weights)
        obs = evecs[:, 5] / sq
        obs = davies.normalize_observable(ring6_gen, obs)
        rep = davies.convexity_bound_check(ring6_gen, obs,
                                           np.linspace(0, 3, 13))
        assert np.max(np.abs(rep.lhs - rep.rhs)) < 1e-10

    def test_random_observables_never_violate(self, ring6_gen):
        rng = np.random.default_rng(42)
        t_grid = np.linspace(0.0, 5.0, 11)
        worst = 0.0
        for _ in range(200):
            obs = davies.random_zero_mean_observable(ring6_gen, rng)
            rep = davies.convexity_bound_check(ring6_gen, obs, t_grid)
            worst = min(worst, rep.min_slack)
        assert worst >= -1e-10

    def test_matrix_exponential_oracle(self, ring6_gen):
        # independent oracle: dense expm of the Heisenberg generator
        rng = np.random.default_rng(3)
        obs = davies.random_zero_mean_observable(ring6_gen, rng)
        rep = davies.convexity_bound_check(ring6_gen, obs, [0.7, 2.1])
        lstar = ring6_gen.matrix.T.toarray()
        pi = ring6_gen.stationary_weights
        for t, lhs in zip([0.7, 2.1], rep.lhs):
            prop = scipy.linalg.expm(lstar * t) @ obs
            assert lhs == pytest.approx(float(np.sum(pi * obs * prop)),
                                        abs=1e-11)

    def test_preconditions(self, ring6_gen):
        with pytest.raises(ParameterError):
            davies.convexity_bound_check(ring6_gen,
                                         np.ones(ring6_gen.dimension), [0.0])


class TestGapInequality:
    def test_identity_both_sides_zero(self, kitaev2_gen):
        rep = davies.gap_inequality_check(kitaev2_gen,
                                          np.ones(kitaev2_gen.dimension))
        assert rep.lhs == pytest.approx(0.0, abs=1e-12)
        assert rep.rhs == pytest.approx(0.0, abs=1e-12)

    def test_single_spin_flip_form(self):
        # dense evaluation oracle: assemble the flip-difference form by
        # explicit summation over states and moves
        ring = lat.build_ising_ring(4)
        rates = flat_rates(0.6, davies.ising_bohr_frequencies(ring))
        gen = davies.build_ising_generator(ring, rates, beta=0.6)
        obs = davies.ising_spin_observable(4, 1)
        rep = davies.gap_inequality_check(gen, obs)
        pi = gen.stationary_weights
        q_sum = 0.0
        for move in range(gen.flip_targets.shape[0]):
            diff = obs[gen.flip_targets[move]] - obs
            q_sum += float(np.sum(pi * diff ** 2))
        assert rep.rhs == pytest.approx(2.0 * gen.max_rate * q_sum, rel=1e-12)
        assert rep.lhs <= rep.rhs + 1e-10
        lstar_a = gen.matrix.T @ obs
        assert rep.lhs == pytest.approx(-float(np.sum(pi * obs * lstar_a)),
                                        rel=1e-12)

    def test_random_commuting_observables(self, kitaev2_gen):
        rng = np.random.default_rng(5)
        for _ in range(100):
            obs = rng.standard_normal(kitaev2_gen.dimension)
            rep = davies.gap_inequality_check(kitaev2_gen, obs)
            assert rep.slack >= -1e-10


class TestKSquaredBound:
    def test_diagonal_example(self):
        verdict = davies.k_squared_gap_bound(np.diag([0.0, 1.0, 2.0]), 1.0)
        assert verdict.condition_holds
        assert verdict.gap == pytest.approx(1.0)
        assert verdict.gap_bound_verified

    def test_failing_example(self):
        verdict = davies.k_squared_gap_bound(np.diag([0.0, 0.5]), 1.0)
        assert not verdict.condition_holds

    def test_random_psd_with_own_gap(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            a = rng.standard_normal((20, 8))
            k_mat = a @ a.T   # PSD with 12-dim kernel
            evals = np.linalg.eigvalsh(k_mat)
            c = evals[evals > 1e-8][0]
            verdict = davies.k_squared_gap_bound(k_mat, c)
            assert verdict.condition_holds
            assert verdict.gap_bound_verified

    def test_rejects_nonsymmetric(self):
        with pytest.raises(ParameterError):
            davies.k_squared_gap_bound(np.array([[0.0, 1.0], [0.0, 0.0]]), 0.1)


class TestRelaxation:
    def test_relaxes_to_gibbs(self):
        ring = lat.build_ising_ring(4)
        rates = flat_rates(0.5, davies.ising_bohr_frequencies(ring))
        gen = davies.build_ising_generator(ring, rates, beta=0.5)
        tv, t = davies.relaxation_check(gen, n_initial=20, seed=1)
        assert tv < 1e-3


class TestQuantumOracle:
    def test_single_qubit_davies(self):
        model = bath.build_spectral_density(bath.FLAT_KMS, amplitude=1.0,
                                            cutoff=10.0, beta=1.3)
        h = np.diag([1.0, -1.0])
        sx = np.array([[0, 1], [1, 0]], dtype=complex)
        qd = davies.build_quantum_davies(h, [sx], model)
        checks = davies.quantum_davies_checks(qd)
        assert checks["stationarity"] < 1e-12
        assert checks["db_residual"] < 1e-12
        assert checks["max_symmetrized_eigenvalue"] < 1e-9

    def test_noncommuting_model_properties(self):
        # 2-spin transverse-field model: Hamiltonian does not commute with
        # the couplings, so all Bohr components are exercised
        model = bath.build_spectral_density(bath.FLAT_KMS, amplitude=1.0,
                                            cutoff=40.0, beta=0.7)
        sx = np.array([[0, 1], [1, 0]], dtype=complex)
        sz = np.diag([1.0, -1.0]).astype(complex)
        eye = np.eye(2)
        h = (np.kron(sz, sz) + 0.5 * (np.kron(sx, eye) + np.kron(eye, sx)))
        couplings = [np.kron(sx, eye), np.kron(eye, sx),
                     np.kron(sz, eye), np.kron(eye, sz)]
        qd = davies.build_quantum_davies(h, couplings, model)
        checks = davies.quantum_davies_checks(qd)
        assert checks["stationarity"] < 1e-10
        assert checks["db_residual"] < 1e-10
        assert checks["max_symmetrized_eigenvalue"] < 1e-9

    def test_classical_restriction_matches_ising_generator(self):
        # with a diagonal Hamiltonian and x-type couplings, the quantum
        # dissipator closed on diagonal observables must equal the
        # classical-sector generator
        n = 3
        ring = lat.build_ising_ring(n)
        beta = 0.9
        model = bath.build_spectral_density(bath.FLAT_KMS, amplitude=1.0,
                                            cutoff=20.0, beta=beta)
        rates = davies.build_rates(model, davies.ising_bohr_frequencies(ring))
        gen = davies.build_ising_generator(ring, rates, beta=beta)

        sx = np.array([[0, 1], [1, 0]], dtype=complex)
        sz = np.diag([1.0, -1.0]).astype(complex)
        def site_op(op, i):
            mats = [np.eye(2, dtype=complex)] * n
            mats[i] = op
            out = mats[0]
            for m in mats[1:]:
                out = np.kron(out, m)
            return out
        h = -sum(site_op(sz, i) @ site_op(sz, (i + 1) % n) for i in range(n))
        couplings = [site_op(sx, i) for i in range(n)]
        qd = davies.build_quantum_davies(h, couplings, model)
        restricted, leak = davies.quantum_classical_restriction(qd)
        assert leak < 1e-12
        assert np.max(np.abs(restricted - gen.matrix.T.toarray())) < 1e-10


class TestExactAutocorrelation:
    def test_dense_vs_sparse_paths(self, monkeypatch):
        ring = lat.build_ising_ring(6)
        rates = flat_rates(0.4, davies.ising_bohr_frequencies(ring))
        gen = davies.build_ising_generator(ring, rates, beta=0.4)
        f = davies.ising_spin_observable(6, 2)
        t = np.linspace(0.0, 4.0, 9)
        dense = davies.exact_autocorrelation(gen, f, t)
        monkeypatch.setattr(davies, "DENSE_LIMIT", 16)
        sparse = davies.exact_autocorrelation(gen, f, t)
        assert np.allclose(dense, sparse, atol=1e-9)


class TestExport:
    def test_triplet_roundtrip(self, tmp_path, ring3_gen):
        csv_path = tmp_path / "gen.csv"
        json_path = tmp_path / "gen.json"
        davies.export_generator(ring3_gen, csv_path, json_path)
        import csv as _csv
        import json as _json
        with open(csv_path) as fh:
            rows = list(_csv.reader(fh))
        assert rows[0] == ["row", "col", "value"]
        rebuilt = np.zeros((8, 8))
        for r, c, v in rows[1:]:
            rebuilt[int(r), int(c)] += float(v)
        assert np.allclose(rebuilt, ring3_gen.matrix.toarray(), atol=1e-15)
        side = _json.loads(json_path.read_text())
        assert side["dimension"] == 8
        assert side["beta"] == ring3_gen.beta
