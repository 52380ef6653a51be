import itertools
import math

import numpy as np
import pytest
from scipy import stats

from sbauth.bits import BitString
from sbauth.errors import DatasetFormatError, DimensionMismatchError, EstimationError, ParameterError
from sbauth.population import LabeledSample, PopulationConfig, Session, generate_population
from sbauth.sampling import (BitWeights, HashMode, SubsetPlan, SystemParams, estimate_mutual_information, load_plan,
                             sample_subsets, save_plan, setup, zeta_weights)


class TestSystemParams:
    @pytest.mark.parametrize('kwargs', [
        dict(n=10, k=0, m=1),
        dict(n=10, k=10, m=1),
        dict(n=10, k=3, m=0),
        dict(n=10, k=3, m=5, tau=0),
        dict(n=10, k=3, m=5, tau=6),
        dict(n=10, k=3, m=5, zeta=-1.0),
        dict(n=10, k=3, m=5, zeta=float('nan')),
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ParameterError):
            SystemParams(**kwargs)

    def test_storage_per_identity(self):
        assert SystemParams(n=4096, k=110, m=250_000).bytes_per_identity() == 9_000_000
        assert SystemParams(n=4096, k=110, m=1000).bytes_per_identity() == 36_000

    def test_hash_mode_from_string(self):
        assert SystemParams(n=4, k=2, m=1, hash_mode='keyed-prf').hash_mode == HashMode.KEYED_PRF

    def test_infinite_zeta_is_valid(self):
        assert SystemParams(n=4, k=2, m=1, zeta=math.inf).zeta == math.inf


class TestZetaWeights:
    def test_linear(self):
        np.testing.assert_allclose(zeta_weights([1.0, 3.0], 1), [0.25, 0.75])

    def test_squared(self):
        np.testing.assert_allclose(zeta_weights([1.0, 3.0], 2), [0.1, 0.9])

    def test_zero_exponent_is_uniform(self):
        np.testing.assert_allclose(zeta_weights([0.1, 0.5, 0.0, 2.0], 0), [0.25] * 4)

    def test_all_zero_information_is_uniform(self):
        np.testing.assert_allclose(zeta_weights([0.0, 0.0, 0.0], 1), [1 / 3] * 3)

    def test_infinite_exponent_keeps_the_maximum(self):
        np.testing.assert_allclose(zeta_weights([1.0, 3.0, 3.0], math.inf), [0.0, 0.5, 0.5])

    def test_large_exponent_does_not_overflow(self):
        weights = zeta_weights([0.5, 0.25, 0.0], 2000)
        assert np.all(np.isfinite(weights))
        np.testing.assert_allclose(weights, [1.0, 0.0, 0.0], atol=1e-12)

    def test_negative_information(self):
        with pytest.raises(ParameterError):
            zeta_weights([-0.1, 1.0], 1)


class TestMutualInformation:
    def test_identity_parity_bit_is_fully_informative(self):
        samples = []
        for _id, text in ((0, '01'), (1, '11')):
            for session in (Session.ENROLL, Session.AUTH):
                samples.append(LabeledSample(_id, BitString.from_string(text), session))
        mi = estimate_mutual_information(samples)
        assert mi[0] == pytest.approx(1.0, abs=1e-12)
        assert mi[1] == pytest.approx(0.0, abs=1e-12)

    def test_noisy_bits(self):
        p = 0.05
        samples = generate_population(PopulationConfig(count=1000, noise=p, dimension_or_length=128, seed=2))
        mi = estimate_mutual_information(samples)
        assert np.all(mi >= 0)
        # plug-in estimate: H(bit) ~ 1, H(bit | id) ~ probability that the two samples differ
        assert mi.mean() == pytest.approx(1 - 2 * p * (1 - p), abs=0.02)

    def test_needs_two_identities(self):
        samples = [LabeledSample(0, BitString.from_string('01'), Session.ENROLL),
                   LabeledSample(0, BitString.from_string('11'), Session.AUTH)]
        with pytest.raises(EstimationError):
            estimate_mutual_information(samples)


class TestSampleSubsets:
    def test_shape_order_and_distinctness(self):
        plan = sample_subsets(SystemParams(n=100, k=10, m=50), seed=1)
        assert plan.index_matrix.shape == (50, 10)
        for subset in plan.subsets:
            assert list(subset) == sorted(set(subset))
            assert all(0 <= i < 100 for i in subset)

    def test_deterministic(self):
        params = SystemParams(n=64, k=8, m=20)
        assert sample_subsets(params, seed=5) == sample_subsets(params, seed=5)
        assert sample_subsets(params, seed=5) != sample_subsets(params, seed=6)

    def test_uniform_pairs_pass_chi_square(self):
        plan = sample_subsets(SystemParams(n=4, k=2, m=100_000), seed=0)
        pairs = list(itertools.combinations(range(4), 2))
        counts = [sum(1 for s in plan.subsets if s == pair) for pair in pairs]
        assert sum(counts) == 100_000
        _, p_value = stats.chisquare(counts, [100_000 / 6] * 6)
        assert p_value > 0.01

    def test_matches_sequential_draws(self):
        weights = BitWeights([0.5, 0.3, 0.2])
        plan = sample_subsets(SystemParams(n=3, k=2, m=50_000), weights, seed=4)
        frequencies = {pair: 0 for pair in itertools.combinations(range(3), 2)}
        for subset in plan.subsets:
            frequencies[subset] += 1
        # first draw proportional to weight, second renormalized over the rest
        expected = {
            (0, 1): 0.5 * 0.3 / 0.5 + 0.3 * 0.5 / 0.7,
            (0, 2): 0.5 * 0.2 / 0.5 + 0.2 * 0.5 / 0.8,
            (1, 2): 0.3 * 0.2 / 0.7 + 0.2 * 0.3 / 0.8,
        }
        for pair, probability in expected.items():
            assert frequencies[pair] / 50_000 == pytest.approx(probability, abs=0.01)

    def test_inclusion_frequency_follows_weights(self):
        mi = np.linspace(1.0, 20.0, 20)
        weights = BitWeights(zeta_weights(mi, 1))
        plan = sample_subsets(SystemParams(n=20, k=5, m=20_000), weights, seed=3)
        inclusion = np.bincount(plan.index_matrix.reshape(-1), minlength=20)
        rho, _ = stats.spearmanr(inclusion, weights.weights)
        assert rho > 0.99

    def test_infinite_exponent_draws_only_the_maximum(self):
        mi = [0.1, 0.4, 0.9, 0.3, 0.2]
        weights = BitWeights(zeta_weights(mi, math.inf))
        plan = sample_subsets(SystemParams(n=5, k=1, m=1000, zeta=math.inf), weights, seed=2)
        assert set(plan.subsets) == {(2,)}

    def test_zero_weight_bits_are_never_drawn(self):
        weights = BitWeights([0.0, 0.25, 0.25, 0.25, 0.25])
        plan = sample_subsets(SystemParams(n=5, k=3, m=500), weights, seed=1)
        assert 0 not in plan.index_matrix

    def test_too_few_positive_weights(self):
        with pytest.raises(ParameterError, match='positive weight'):
            sample_subsets(SystemParams(n=4, k=3, m=1), BitWeights([0.5, 0.5, 0.0, 0.0]))

    def test_weight_count_must_match_n(self):
        with pytest.raises(DimensionMismatchError):
            sample_subsets(SystemParams(n=4, k=2, m=1), BitWeights.uniform(5))

    def test_weights_must_sum_to_one(self):
        with pytest.raises(ParameterError):
            BitWeights([0.5, 0.6])


class TestSetup:
    def test_without_training_weights_are_uniform(self):
        plan, weights = setup(SystemParams(n=16, k=4, m=3))
        assert weights.mi is None
        np.testing.assert_allclose(weights.weights, 1 / 16)
        assert len(plan) == 3

    def test_training_samples_weight_by_information(self):
        samples = generate_population(PopulationConfig(count=50, noise=0.05, dimension_or_length=32))
        _, weights = setup(SystemParams(n=32, k=4, m=3, zeta=1.0), samples)
        assert weights.mi is not None and weights.mi.shape == (32,)
        assert weights.weights.sum() == pytest.approx(1.0)


class TestSubsetPlan:
    def test_rows_are_sorted(self):
        plan = SubsetPlan([[3, 1], [0, 2]], SystemParams(n=4, k=2, m=2))
        assert plan.subsets == [(1, 3), (0, 2)]
        assert plan[0] == (1, 3)

    def test_out_of_range(self):
        with pytest.raises(ParameterError):
            SubsetPlan([[0, 4]], SystemParams(n=4, k=2, m=1))

    def test_repeated_index(self):
        with pytest.raises(ParameterError, match='distinct'):
            SubsetPlan([[1, 1]], SystemParams(n=4, k=2, m=1))

    def test_wrong_shape(self):
        with pytest.raises(DimensionMismatchError):
            SubsetPlan([[0, 1, 2]], SystemParams(n=4, k=2, m=1))


class TestPlanFiles:
    def test_round_trip(self, tmp_path):
        plan = sample_subsets(SystemParams(n=300, k=20, m=40), seed=8)
        save_plan(plan, tmp_path / 'plan.bin')
        loaded = load_plan(tmp_path / 'plan.bin', tau=3)
        assert loaded == plan
        assert loaded.params.tau == 3

    def test_same_seed_gives_identical_files(self, tmp_path):
        params = SystemParams(n=128, k=16, m=32)
        save_plan(sample_subsets(params, seed=2), tmp_path / 'a.bin')
        save_plan(sample_subsets(params, seed=2), tmp_path / 'b.bin')
        assert (tmp_path / 'a.bin').read_bytes() == (tmp_path / 'b.bin').read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / 'plan.bin'
        save_plan(sample_subsets(SystemParams(n=8, k=2, m=2)), path)
        path.write_bytes(b'NOTAPLAN' + path.read_bytes()[8:])
        with pytest.raises(DatasetFormatError, match='magic'):
            load_plan(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / 'plan.bin'
        save_plan(sample_subsets(SystemParams(n=8, k=2, m=2)), path)
        path.write_bytes(path.read_bytes()[:-1])
        with pytest.raises(DatasetFormatError):
            load_plan(path)

    def test_threshold_above_m_is_rejected(self, tmp_path):
        path = tmp_path / 'plan.bin'
        save_plan(sample_subsets(SystemParams(n=8, k=2, m=2)), path)
        with pytest.raises(DatasetFormatError):
            load_plan(path, tau=3)
