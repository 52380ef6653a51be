import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from sbauth import utils
from sbauth.errors import DegenerateStatisticsError, EstimationError
from sbauth.population import Session, bit_matrix
from sbauth.sampling import SubsetPlan

logger = logging.getLogger(__name__)

DEFAULT_PAIR_BUDGET = 10 ** 6
_PAIR_CHUNK = 100_000


def _all_pair_distances(matrix):
    x = matrix.astype(np.float64)
    # hamming(a, b) = a.(1 - b) + (1 - a).b
    distances = x @ (1.0 - x).T + (1.0 - x) @ x.T
    upper = np.triu_indices(matrix.shape[0], k=1)
    return distances[upper] / matrix.shape[1]


def _sampled_pair_distances(matrix, budget, rng):
    rows = matrix.shape[0]
    first = rng.integers(0, rows, size=budget)
    second = rng.integers(0, rows - 1, size=budget)
    second += second >= first
    distances = np.empty(budget)
    for start in range(0, budget, _PAIR_CHUNK):
        a = matrix[first[start:start + _PAIR_CHUNK]]
        b = matrix[second[start:start + _PAIR_CHUNK]]
        distances[start:start + _PAIR_CHUNK] = np.count_nonzero(a != b, axis=1) / matrix.shape[1]
    return distances


def unlike_statistics(substrings, pair_budget=DEFAULT_PAIR_BUDGET, seed=0):
    """
    Mean and standard deviation of the fractional hamming distance between substrings of
    different identities. All pairs are used while they fit into pair_budget, otherwise
    pair_budget random pairs.

    :param substrings: matrix with one row (substring) per identity
    :returns (mu_unlike, sigma_unlike)
    """
    substrings = np.asarray(substrings, dtype=np.uint8)
    identities = substrings.shape[0]
    if identities < 2:
        raise EstimationError(f'Unlike statistics need at least two identities, got {identities}.')

    if identities * (identities - 1) // 2 <= pair_budget:
        distances = _all_pair_distances(substrings)
    else:
        distances = _sampled_pair_distances(substrings, pair_budget, utils.make_rng(seed, 'pairs'))
    return float(distances.mean()), float(distances.std())


def estimate_min_entropy(mu_unlike, sigma_unlike):
    """
    e = -mu (1 - mu) log2 max(mu, 1 - mu) / sigma^2, in bits
    """
    if not 0 < mu_unlike < 1:
        raise DegenerateStatisticsError(f'mu_unlike must lie in (0, 1), got {mu_unlike}.')
    if not sigma_unlike > 0:
        raise DegenerateStatisticsError(f'sigma_unlike must be positive, got {sigma_unlike}.')
    return -mu_unlike * (1 - mu_unlike) * math.log2(max(mu_unlike, 1 - mu_unlike)) / sigma_unlike ** 2


@dataclass
class EntropyReport:
    per_subset: np.ndarray
    mu_unlike: np.ndarray
    sigma_unlike: np.ndarray
    k: int

    @property
    def min(self):
        return float(self.per_subset.min())

    @property
    def max(self):
        return float(self.per_subset.max())

    @property
    def mean(self):
        return float(self.per_subset.mean())

    def to_csv(self, path):
        """
        One row per subset, followed by min, max and mean rows.
        """
        with open(path, 'w', newline='') as file:
            writer = csv.writer(file)
            writer.writerow(['subset_index', 'mu_unlike', 'sigma_unlike', 'e_bits'])
            for i, (mu, sigma, e) in enumerate(zip(self.mu_unlike, self.sigma_unlike, self.per_subset)):
                writer.writerow([i, repr(float(mu)), repr(float(sigma)), repr(float(e))])
            for name in ('min', 'max', 'mean'):
                writer.writerow([name, '', '', repr(getattr(self, name))])

    def __str__(self):
        return f'k={self.k}: min {self.min:.2f}, max {self.max:.2f}, mean {self.mean:.2f} bits'


def enrollment_matrix(samples):
    """
    One bit string per identity: its first enroll sample, or its first sample of any session.
    """
    chosen = {}
    for sample in samples:
        current = chosen.get(sample.id)
        if current is None or (current.session != Session.ENROLL and sample.session == Session.ENROLL):
            chosen[sample.id] = sample
    _, matrix = bit_matrix([chosen[i] for i in sorted(chosen)])
    return matrix


def entropy_report(plan: SubsetPlan, samples, pair_budget=DEFAULT_PAIR_BUDGET, seed=0, workers=1):
    """
    Estimates the min-entropy of every substring of the plan over the given bit-level samples.
    """
    matrix = enrollment_matrix(samples)
    if matrix.shape[1] != plan.n:
        raise EstimationError(f'Samples have length {matrix.shape[1]}, plan expects n={plan.n}.')

    def estimate(i):
        mu, sigma = unlike_statistics(matrix[:, plan.index_matrix[i]], pair_budget, seed=seed + i)
        return mu, sigma, estimate_min_entropy(mu, sigma)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            rows = list(executor.map(estimate, range(plan.m)))
    else:
        rows = [estimate(i) for i in range(plan.m)]

    mu, sigma, e = (np.array(column) for column in zip(*rows))
    report = EntropyReport(per_subset=e, mu_unlike=mu, sigma_unlike=sigma, k=plan.k)
    logger.info(f'Min-entropy estimate over {matrix.shape[0]} identities, {report}')
    return report
