import logging

import numpy as np

from sbauth import utils
from sbauth.bits import BitString, Template
from sbauth.errors import DimensionMismatchError, ParameterError
from sbauth.population import LabeledSample

logger = logging.getLogger(__name__)


class HyperplaneBank:
    """
    n random unit normals in dimension d. Immutable after construction.
    """
    def __init__(self, normals, seed=None):
        normals = np.array(normals, dtype=np.float64)
        if normals.ndim != 2 or 0 in normals.shape:
            raise ParameterError('Hyperplane normals must form a non-empty n x d matrix.')
        if not np.all(np.isfinite(normals)):
            raise ParameterError('Hyperplane normals must be finite.')
        if not np.allclose(np.linalg.norm(normals, axis=1), 1.0):
            raise ParameterError('Hyperplane normals must have unit norm.')
        normals.setflags(write=False)
        self._normals = normals
        self.seed = seed

    @property
    def normals(self):
        return self._normals

    @property
    def n(self):
        return self._normals.shape[0]

    @property
    def dimension(self):
        return self._normals.shape[1]

    def __eq__(self, other):
        if not isinstance(other, HyperplaneBank):
            return NotImplemented
        return np.array_equal(self._normals, other._normals)

    def __hash__(self):
        return hash(self._normals.tobytes())


def build_bank(d, n, seed=0):
    """
    Samples n isotropic unit normals in dimension d (gaussian, then normalized).
    """
    if d < 1 or n < 1:
        raise ParameterError(f'Bank needs d >= 1 and n >= 1, got d={d}, n={n}.')
    rng = utils.make_rng(seed, 'hyperplanes')
    normals = rng.standard_normal((n, d))
    norms = np.linalg.norm(normals, axis=1, keepdims=True)
    # a zero row has probability 0 but would break normalization
    while np.any(norms == 0):
        zero = norms[:, 0] == 0
        normals[zero] = rng.standard_normal((int(zero.sum()), d))
        norms = np.linalg.norm(normals, axis=1, keepdims=True)
    return HyperplaneBank(normals / norms, seed=seed)


def project_matrix(coords, bank: HyperplaneBank):
    """
    Vectorized lsh_project for a matrix with one template per row.
    :returns uint8 matrix of bits
    """
    coords = np.atleast_2d(coords)
    if coords.shape[1] != bank.dimension:
        raise DimensionMismatchError(f'Template dimension {coords.shape[1]} does not match '
                                     f'bank dimension {bank.dimension}.')
    return (coords @ bank.normals.T >= 0).astype(np.uint8)


def lsh_project(t: Template, bank: HyperplaneBank) -> BitString:
    """
    bit_i = 1 iff <t, normal_i> >= 0
    """
    return BitString(project_matrix(t.coords, bank)[0])


def hamming(a: BitString, b: BitString) -> int:
    if len(a) != len(b):
        raise DimensionMismatchError(f'Cannot compare bit strings of length {len(a)} and {len(b)}.')
    return int(np.count_nonzero(a.bits != b.bits))


def fractional_hamming(a: BitString, b: BitString) -> float:
    return hamming(a, b) / len(a)


def project_samples(samples, bank: HyperplaneBank):
    """
    Maps template samples to bit samples keeping identity and session.
    Bit samples pass through unchanged (e.g. externally computed hash outputs).
    """
    result = []
    templates = [s for s in samples if not s.is_bits()]
    if templates:
        bits = project_matrix(np.stack([s.payload.coords for s in templates]), bank)
        projected = iter(bits)
    for sample in samples:
        if sample.is_bits():
            if len(sample.payload) != bank.n:
                raise DimensionMismatchError(f'Bit sample of identity {sample.id} has length '
                                             f'{len(sample.payload)}, expected {bank.n}.')
            result.append(sample)
        else:
            result.append(LabeledSample(sample.id, BitString(next(projected)), sample.session))
    return result
