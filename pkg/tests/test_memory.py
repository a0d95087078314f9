import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from qmemlab import bath, davies, dynamics as dyn, lattice as lat, memory as mem
from qmemlab._errors import DecodingError, ParameterError

from conftest import flat_rates


def brute_force_min_pairing(coords, L):
    """Exhaustive enumeration over all perfect pairings."""
    idx = list(range(len(coords)))

    def pairings(items):
        if not items:
            yield []
            return
        first = items[0]
        for k in range(1, len(items)):
            rest = items[1:k] + items[k + 1:]
            for tail in pairings(rest):
                yield [(first, items[k])] + tail

    return min(sum(lat.torus_distance(L, coords[i], coords[j])
                   for i, j in pairing)
               for pairing in pairings(idx))


class TestMajority:
    def test_minority_site_corrected(self):
        cfg = np.array([1, 1, -1], dtype=np.int8)
        f = mem.decode_majority(cfg, bare_site=2)
        assert f == -1
        assert cfg[2] * f == 1

    def test_flipped_ground_state(self):
        cfg = -np.ones(5, dtype=np.int8)
        assert cfg[0] * mem.decode_majority(cfg, 0) == -1

    def test_tie_breaks_positive(self):
        cfg = np.array([1, 1, -1, -1], dtype=np.int8)
        assert cfg[0] * mem.decode_majority(cfg, 0) == 1
        assert cfg[2] * mem.decode_majority(cfg, 2) == 1


class TestMatching:
    def test_adjacent_pair_single_edge(self, torus4):
        synd = np.zeros(16, dtype=bool)
        synd[torus4.cell_index(1, 1)] = True
        synd[torus4.cell_index(2, 1)] = True
        res = mem.decode_matching(synd, torus4)
        assert len(res.chain) == 1
        assert res.optimal

    def test_empty_syndrome(self, torus4):
        res = mem.decode_matching(np.zeros(16, dtype=bool), torus4)
        assert res.chain == ()
        assert res.f_correction == 1

    def test_odd_syndrome_rejected(self, torus4):
        synd = np.zeros(16, dtype=bool)
        synd[3] = True
        with pytest.raises(DecodingError):
            mem.decode_matching(synd, torus4)

    def test_six_anyons_match_brute_force(self, torus4):
        rng = np.random.default_rng(7)
        for _ in range(25):
            cells = rng.choice(16, size=6, replace=False)
            coords = tuple(torus4.cell_coords(int(c)) for c in cells)
            cost, _ = mem._min_weight_pairing(coords, 4)
            assert cost == pytest.approx(brute_force_min_pairing(coords, 4))

    def test_greedy_fallback_flagged(self):
        torus = lat.build_torus(6)
        rng = np.random.default_rng(0)
        cells = rng.choice(36, size=16, replace=False)
        synd = np.zeros(36, dtype=bool)
        synd[cells] = True
        res = mem.decode_matching(synd, torus)
        assert not res.optimal
        cfg = lat.apply_flips(np.ones(torus.n_edges, dtype=np.int8), res.chain)
        assert np.array_equal(lat.syndrome(torus, cfg), synd)

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 10 ** 6))
    def test_chain_annihilates_syndrome(self, seed):
        torus = lat.build_torus(4)
        rng = np.random.default_rng(seed)
        cfg = np.where(rng.random(torus.n_edges) < 0.2, -1, 1).astype(np.int8)
        synd = lat.syndrome(torus, cfg, lat.PLAQUETTE)
        res = mem.decode_matching(synd, torus)
        cleaned = lat.apply_flips(cfg, res.chain)
        assert not lat.syndrome(torus, cleaned, lat.PLAQUETTE).any()


class TestMeasureDressed:
    def test_majority_ground_state(self):
        obs = mem.DressedObservable(bare=0, decoder=mem.MAJORITY)
        assert mem.measure_dressed(np.ones(9, dtype=np.int8), obs) == 1
        assert mem.measure_dressed(-np.ones(9, dtype=np.int8), obs) == -1

    def test_majority_corrects_minority_site(self):
        cfg = np.ones(10, dtype=np.int8)
        cfg[:4] = -1   # 60 percent majority up
        obs = mem.DressedObservable(bare=0, decoder=mem.MAJORITY)
        assert cfg[0] == -1
        assert mem.measure_dressed(cfg, obs) == 1

    def test_matching_corrects_crossing_error(self, torus4):
        # error chain crossing the logical line once: bare flips, the
        # decoder must undo it (exhaustive matching oracle regime, L <= 4)
        logs = lat.canonical_logicals(torus4)
        zh = logs[(lat.ZLIKE, lat.HORIZONTAL)]
        obs = mem.DressedObservable(bare=zh, decoder=mem.MATCHING,
                                    sector=lat.PLAQUETTE)
        err = lat.cell_path_edges(torus4, lat.PLAQUETTE,
                                  torus4.cell_index(1, 3),
                                  torus4.cell_index(1, 0))
        cfg = lat.apply_flips(np.ones(torus4.n_edges, dtype=np.int8), err)
        assert lat.bare_logical_value(cfg, zh) == -1
        assert mem.measure_dressed(cfg, obs, torus4) == 1

    def test_noncontractible_error_flips_dressed(self, torus4):
        logs = lat.canonical_logicals(torus4)
        zh = logs[(lat.ZLIKE, lat.HORIZONTAL)]
        xv = logs[(lat.XLIKE, lat.VERTICAL)]
        obs = mem.DressedObservable(bare=zh, decoder=mem.MATCHING,
                                    sector=lat.PLAQUETTE)
        cfg = lat.apply_flips(np.ones(torus4.n_edges, dtype=np.int8),
                              xv.support)
        assert mem.measure_dressed(cfg, obs, torus4) == -1

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10 ** 6))
    def test_homology_invariance_at_fixed_syndrome(self, seed):
        # gauge (star) flips keep the syndrome and must not change the
        # dressed outcome
        torus = lat.build_torus(3)
        rng = np.random.default_rng(seed)
        logs = lat.canonical_logicals(torus)
        obs = mem.DressedObservable(bare=logs[(lat.ZLIKE, lat.HORIZONTAL)],
                                    decoder=mem.MATCHING, sector=lat.PLAQUETTE)
        cfg = np.where(rng.random(torus.n_edges) < 0.15, -1, 1).astype(np.int8)
        base = mem.measure_dressed(cfg, obs, torus)
        for _ in range(rng.integers(1, 5)):
            star = torus.stars[rng.integers(0, torus.n_cells)]
            cfg = lat.apply_flips(cfg, star)
        assert mem.measure_dressed(cfg, obs, torus) == base

    def test_decoder_deterministic(self, torus3):
        rng = np.random.default_rng(4)
        logs = lat.canonical_logicals(torus3)
        obs = mem.DressedObservable(bare=logs[(lat.ZLIKE, lat.HORIZONTAL)],
                                    decoder=mem.MATCHING, sector=lat.PLAQUETTE)
        cfg = np.where(rng.random(torus3.n_edges) < 0.3, -1, 1).astype(np.int8)
        assert (mem.measure_dressed(cfg, obs, torus3)
                == mem.measure_dressed(cfg.copy(), obs, torus3))


class TestM1:
    def test_canonical_pair(self, torus3):
        logs = lat.canonical_logicals(torus3)
        q = mem.EncodedQubit(x_logical=logs[(lat.XLIKE, lat.VERTICAL)],
                             z_logical=logs[(lat.ZLIKE, lat.HORIZONTAL)])
        rep = mem.m1_check(q)
        assert rep.anticommute and rep.is_qubit_pair
        assert rep.intersection_parity == 1

    def test_same_winding_pair_rejected(self, torus3):
        logs = lat.canonical_logicals(torus3)
        q = mem.EncodedQubit(x_logical=logs[(lat.XLIKE, lat.HORIZONTAL)],
                             z_logical=logs[(lat.ZLIKE, lat.HORIZONTAL)])
        rep = mem.m1_check(q)
        assert not rep.anticommute and not rep.is_qubit_pair

    def test_two_zlike_rejected(self, torus3):
        logs = lat.canonical_logicals(torus3)
        q = mem.EncodedQubit(x_logical=logs[(lat.ZLIKE, lat.VERTICAL)],
                             z_logical=logs[(lat.ZLIKE, lat.HORIZONTAL)])
        assert not mem.m1_check(q).is_qubit_pair


class TestObservableSeries:
    def test_dressed_series_matches_pointwise(self, torus3):
        rng = np.random.default_rng(8)
        logs = lat.canonical_logicals(torus3)
        obs = mem.DressedObservable(bare=logs[(lat.ZLIKE, lat.HORIZONTAL)],
                                    decoder=mem.MATCHING, sector=lat.PLAQUETTE)
        series_fn = mem.observable_series_fn(obs, torus3)
        cfgs = np.where(rng.random((40, torus3.n_edges)) < 0.2, -1, 1
                        ).astype(np.int8)
        series = series_fn(cfgs)
        for i in range(len(cfgs)):
            assert series[i] == mem.measure_dressed(cfgs[i], obs, torus3)

    def test_kitaev_logical_vectors(self, torus3):
        rates = flat_rates(1.0, davies.kitaev_bohr_frequencies())
        gen = davies.build_kitaev_sector_generator(torus3, rates, beta=1.0)
        bare, dressed = mem.kitaev_logical_vectors(gen, torus3)
        assert set(np.unique(bare)) <= {-1.0, 1.0}
        assert set(np.unique(dressed)) <= {-1.0, 1.0}
        assert np.any(bare != dressed)


class TestLifetimeStudy:
    def test_small_study_and_writers(self, tmp_path):
        cells = [
            mem.StudyCell(model=mem.ISING_TORUS, size=4, beta=0.2,
                          observable=mem.DRESSED, n_trajectories=20,
                          t_max=300.0, sample_interval=0.25, seed=5),
            mem.StudyCell(model=mem.KITAEV, size=2, beta=1.0,
                          observable=mem.DRESSED, n_trajectories=20,
                          t_max=300.0, sample_interval=0.25, seed=6),
        ]
        report, estimates = mem.lifetime_study(cells, flat_rates)
        assert len(report.rows) == 2
        for row in report.rows:
            assert row.gamma > 0
            assert row.stderr >= 0
        assert report.rows[0].decoder == mem.MAJORITY
        assert report.rows[1].decoder == mem.MATCHING

        csv_path = tmp_path / "rep.csv"
        json_path = tmp_path / "rep.json"
        report.write_csv(csv_path)
        report.write_json(json_path)
        header = csv_path.read_text().splitlines()[0]
        assert header == "model,N_or_L,beta,observable,decoder,gamma,stderr,mode"
        import json
        rows = json.loads(json_path.read_text())["rows"]
        assert rows[0]["model"] == mem.ISING_TORUS

    def test_kitaev_kmc_matches_exact_oracle(self):
        # gamma from the sampled dynamics against the reduced-generator
        # spectral value, at matched fit windows
        cell = mem.StudyCell(model=mem.KITAEV, size=2, beta=1.0,
                             observable=mem.DRESSED, n_trajectories=32,
                             t_max=250.0, sample_interval=0.2, seed=17)
        row, est = mem.run_study_cell(cell, flat_rates)
        rates = flat_rates(1.0, davies.kitaev_bohr_frequencies())
        torus = lat.build_torus(2)
        gen = davies.build_kitaev_sector_generator(torus, rates, beta=1.0)
        _, dressed = mem.kitaev_logical_vectors(gen, torus)
        exact = davies.exact_autocorrelation(gen, dressed, est.lags)
        keep = exact > 0.05
        dev = np.abs(est.values - exact)[keep] \
            / np.where(est.stderr[keep] > 0, est.stderr[keep], np.inf)
        assert np.nanmax(dev) < 3.0
