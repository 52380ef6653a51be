import enum
import logging
import math
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import entr

from sbauth import utils
from sbauth.errors import DatasetFormatError, DimensionMismatchError, EstimationError, ParameterError
from sbauth.population import bit_matrix

logger = logging.getLogger(__name__)

PLAN_MAGIC = b'SBAPLAN1'
_PLAN_HEADER = struct.Struct('<8sIIIQ')

# plan files store indices as u16
MAX_LENGTH = 0x10000

# rows of random keys drawn at once while sampling subsets
_KEY_BUDGET = 1 << 22


class HashMode(enum.Enum):
    PLAIN_HASH = 'plain_hash'
    KEYED_PRF = 'keyed_prf'

    @staticmethod
    def from_arg(arg):
        if isinstance(arg, HashMode):
            return arg
        try:
            return HashMode(arg.lower().replace('-', '_'))
        except ValueError:
            raise ValueError(f'Unknown hash mode "{arg}".')


@dataclass(frozen=True)
class SystemParams:
    """
    :param n: LSH output length
    :param k: substring length, 0 < k < n
    :param m: number of subsets
    :param tau: match threshold, 1 <= tau <= m
    :param zeta: sampling exponent, >= 0 (inf selects the most informative bits)
    :param hash_mode: plain hash or keyed PRF
    :param domain_separation: prefix every preimage with its subset index
    """
    n: int
    k: int
    m: int
    tau: int = 1
    zeta: float = 1.0
    hash_mode: HashMode = HashMode.PLAIN_HASH
    domain_separation: bool = True

    def __post_init__(self):
        if not 0 < self.k < self.n:
            raise ParameterError(f'Substring length must satisfy 0 < k < n, got k={self.k}, n={self.n}.')
        if self.n > MAX_LENGTH:
            raise ParameterError(f'n={self.n} exceeds the supported maximum {MAX_LENGTH}.')
        if self.m < 1:
            raise ParameterError(f'Number of subsets must be at least 1, got m={self.m}.')
        if not 1 <= self.tau <= self.m:
            raise ParameterError(f'Threshold must satisfy 1 <= tau <= m, got tau={self.tau}, m={self.m}.')
        if math.isnan(self.zeta) or self.zeta < 0:
            raise ParameterError(f'zeta must be non-negative, got {self.zeta}.')
        object.__setattr__(self, 'hash_mode', HashMode.from_arg(self.hash_mode))

    @property
    def t(self):
        """
        number of indices excluded from every subset
        """
        return self.n - self.k

    def bytes_per_identity(self):
        """
        storage of m (256-bit digest, 32-bit identity) records
        """
        return self.m * (256 + 32) // 8


@dataclass
class BitWeights:
    weights: np.ndarray
    mi: np.ndarray = field(default=None)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if np.any(self.weights < 0) or not np.isclose(self.weights.sum(), 1.0, rtol=0, atol=1e-9):
            raise ParameterError('Bit weights must be non-negative and sum to 1.')

    @classmethod
    def uniform(cls, n):
        return cls(np.full(n, 1.0 / n), mi=None)

    def __len__(self):
        return self.weights.size


def _binary_entropy(p):
    return (entr(p) + entr(1.0 - p)) / np.log(2)


def estimate_mutual_information(samples):
    """
    Plug-in estimate of I(bit_i; ID) = H(bit_i) - sum_id p(id) H(bit_i | id), in bits.

    :param samples: bit-level LabeledSamples, at least two identities
    :returns array of n non-negative values
    """
    ids, matrix = bit_matrix(samples)
    identities, inverse, per_id = np.unique(ids, return_inverse=True, return_counts=True)
    if identities.size < 2:
        raise EstimationError(f'Mutual information needs at least two identities, got {identities.size}.')

    order = np.argsort(inverse, kind='stable')
    starts = np.concatenate(([0], np.cumsum(per_id)[:-1]))
    ones = np.add.reduceat(matrix[order].astype(np.int64), starts, axis=0)

    total = matrix.shape[0]
    h_bit = _binary_entropy(matrix.sum(axis=0) / total)
    h_given_id = ((per_id / total)[:, None] * _binary_entropy(ones / per_id[:, None])).sum(axis=0)
    return np.maximum(h_bit - h_given_id, 0.0)


def zeta_weights(mi, zeta):
    """
    wt_i = mi_i^zeta / sum_j mi_j^zeta, uniform if all mi are zero.
    zeta = inf spreads the weight evenly over the maximal entries.
    """
    mi = np.asarray(mi, dtype=np.float64)
    if np.any(mi < 0):
        raise ParameterError('Mutual information values must be non-negative.')

    positive = mi > 0
    if zeta == 0 or not positive.any():
        return np.full(mi.size, 1.0 / mi.size)

    if math.isinf(zeta):
        weights = (mi == mi.max()).astype(np.float64)
    else:
        # log space, mi^zeta over- or underflows quickly
        logs = np.full(mi.size, -np.inf)
        logs[positive] = np.log(mi[positive])
        weights = np.exp(zeta * (logs - logs.max()))
    return weights / weights.sum()


def bit_weights(samples, zeta):
    mi = estimate_mutual_information(samples)
    return BitWeights(zeta_weights(mi, zeta), mi=mi)


class SubsetPlan:
    """
    The m public index subsets. Each subset is stored sorted ascending.
    """
    def __init__(self, subsets, params: SystemParams, seed=0):
        subsets = np.array(subsets, dtype=np.int64)
        if subsets.shape != (params.m, params.k):
            raise DimensionMismatchError(f'Expected {params.m} subsets of size {params.k}, got shape {subsets.shape}.')
        subsets = np.sort(subsets, axis=1)
        if subsets.size and (subsets.min() < 0 or subsets.max() >= params.n):
            raise ParameterError(f'Subset indices must lie in [0, {params.n}).')
        if params.k > 1 and np.any(subsets[:, 1:] == subsets[:, :-1]):
            raise ParameterError('Subset indices must be distinct.')
        subsets.setflags(write=False)
        self._subsets = subsets
        self.params = params
        self.seed = seed

    @property
    def index_matrix(self):
        """
        m x k array of sorted indices
        """
        return self._subsets

    @property
    def subsets(self):
        return [tuple(int(i) for i in row) for row in self._subsets]

    @property
    def n(self):
        return self.params.n

    @property
    def k(self):
        return self.params.k

    @property
    def m(self):
        return self.params.m

    def with_params(self, params: SystemParams):
        """
        Same subsets with other tau/zeta/hash mode settings.
        """
        return SubsetPlan(self._subsets, params, seed=self.seed)

    def __len__(self):
        return self.params.m

    def __getitem__(self, item):
        return tuple(int(i) for i in self._subsets[item])

    def __eq__(self, other):
        if not isinstance(other, SubsetPlan):
            return NotImplemented
        return (self.params.n, self.params.k, self.seed) == (other.params.n, other.params.k, other.seed) \
            and np.array_equal(self._subsets, other._subsets)

    def __hash__(self):
        return hash((self.params.n, self.params.k, self.seed, self._subsets.tobytes()))


def sample_subsets(params: SystemParams, weights: BitWeights = None, seed=0) -> SubsetPlan:
    """
    Draws m subsets of k distinct indices, each index chosen with probability proportional
    to its weight among the indices not drawn yet.

    Uses exponential keys: the k largest log(u_i) / w_i are distributed exactly like k
    sequential draws with renormalization, and they vectorize over many subsets at once.
    """
    if weights is None:
        weights = BitWeights.uniform(params.n)
    if len(weights) != params.n:
        raise DimensionMismatchError(f'Got {len(weights)} weights for n={params.n}.')
    if params.k >= params.n:
        raise ParameterError(f'k={params.k} must be smaller than n={params.n}.')

    w = weights.weights
    positive = w > 0
    if np.count_nonzero(positive) < params.k:
        raise ParameterError(f'Only {np.count_nonzero(positive)} bits have positive weight, '
                             f'cannot draw {params.k} distinct indices.')

    rng = utils.make_rng(seed, 'subsets')
    inverse_weights = np.zeros(params.n)
    inverse_weights[positive] = 1.0 / w[positive]

    subsets = np.empty((params.m, params.k), dtype=np.int64)
    chunk = max(1, _KEY_BUDGET // params.n)
    for start in range(0, params.m, chunk):
        rows = min(chunk, params.m - start)
        with np.errstate(divide='ignore'):
            keys = np.log(rng.random((rows, params.n))) * inverse_weights
        keys[:, ~positive] = -np.inf
        top = np.argpartition(-keys, params.k - 1, axis=1)[:, :params.k]
        subsets[start:start + rows] = np.sort(top, axis=1)

    logger.info(f'Sampled {params.m} subsets of size {params.k} from n={params.n} (seed {seed}).')
    return SubsetPlan(subsets, params, seed=seed)


def setup(params: SystemParams, training_samples=None, seed=0):
    """
    Global setup. With training samples the subsets are zeta-sampled by mutual information,
    otherwise every bit is equally likely.
    :returns (SubsetPlan, BitWeights)
    """
    if training_samples:
        weights = bit_weights(training_samples, params.zeta)
    else:
        weights = BitWeights.uniform(params.n)
    return sample_subsets(params, weights, seed=seed), weights


def save_plan(plan: SubsetPlan, path):
    with open(path, 'wb') as file:
        file.write(_PLAN_HEADER.pack(PLAN_MAGIC, plan.n, plan.k, plan.m, plan.seed & 0xFFFFFFFFFFFFFFFF))
        file.write(plan.index_matrix.astype('<u2').tobytes())
    logger.info(f'Saved plan (n={plan.n}, k={plan.k}, m={plan.m}) to {path}.')


def load_plan(path, tau=1, zeta=1.0, hash_mode=HashMode.PLAIN_HASH, domain_separation=True):
    """
    Reads a plan file. Settings that are not part of the file are taken from the arguments.
    """
    with open(path, 'rb') as file:
        header = utils.read_exact(file, _PLAN_HEADER.size, DatasetFormatError)
        magic, n, k, m, seed = _PLAN_HEADER.unpack(header)
        if magic != PLAN_MAGIC:
            raise DatasetFormatError(f'{path}: bad magic {magic!r}.')
        body = file.read()

    if len(body) != 2 * m * k:
        raise DatasetFormatError(f'{path}: expected {m * k} indices, found {len(body) // 2}.')
    try:
        params = SystemParams(n=n, k=k, m=m, tau=tau, zeta=zeta, hash_mode=hash_mode,
                              domain_separation=domain_separation)
    except ParameterError as err:
        raise DatasetFormatError(f'{path}: invalid parameters - {err}')
    subsets = np.frombuffer(body, dtype='<u2').reshape(m, k)
    return SubsetPlan(subsets, params, seed=seed)
