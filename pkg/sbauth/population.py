import enum
import logging
import struct
from dataclasses import dataclass
from typing import Union

import numpy as np

from sbauth import utils
from sbauth.bits import BitString, Template
from sbauth.errors import DatasetFormatError, DimensionMismatchError, ParameterError

logger = logging.getLogger(__name__)

MAX_IDENTITY = 0xFFFFFFFF

DATASET_MAGIC = b'SBAPOP1'
_HEADER = struct.Struct('<7sII')
_RECORD_HEADER = struct.Struct('<IB')


def check_identity(value):
    """
    Raises ParameterError if value is not a 32-bit unsigned identity.
    :returns the identity as int
    """
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise ParameterError(f'Identity must be an integer, got {value!r}.')
    value = int(value)
    if not 0 <= value <= MAX_IDENTITY:
        raise ParameterError(f'Identity {value} does not fit into 32 bits.')
    return value


class Session(enum.Enum):
    ENROLL = 0
    AUTH = 1

    @staticmethod
    def from_arg(arg):
        if arg in ('enroll', 'ENROLL', 0):
            return Session.ENROLL
        elif arg in ('auth', 'AUTH', 1):
            return Session.AUTH
        else:
            raise ValueError(f'Unknown session "{arg}".')


class PopulationMode(enum.Enum):
    BIT_LEVEL = 'bit_level'
    TEMPLATE_LEVEL = 'template_level'

    @staticmethod
    def from_arg(arg):
        if isinstance(arg, PopulationMode):
            return arg
        try:
            return PopulationMode(arg.lower().replace('-', '_'))
        except ValueError:
            raise ValueError(f'Unknown population mode "{arg}".')


class DatasetFormat(enum.Enum):
    BITS = 'bits'
    TEMPLATES = 'templates'

    @staticmethod
    def from_arg(arg):
        try:
            return DatasetFormat(arg.lower())
        except ValueError:
            raise ValueError(f'Unknown dataset format "{arg}".')


@dataclass(frozen=True)
class LabeledSample:
    id: int
    payload: Union[BitString, Template]
    session: Session

    def is_bits(self):
        return isinstance(self.payload, BitString)


@dataclass(frozen=True)
class PopulationConfig:
    """
    :param count: number of identities
    :param mode: bit_level or template_level
    :param noise: bit flip probability p_same (bit_level) or gaussian scale sigma_t (template_level)
    :param dimension_or_length: n for bit_level, d for template_level
    :param seed: 64-bit seed
    :param duplicate: bit_level only, repeat each ground truth bit this many times to fill n
    :param first_id: identity of the first generated identity
    """
    count: int
    mode: PopulationMode = PopulationMode.BIT_LEVEL
    noise: float = 0.05
    dimension_or_length: int = 4096
    seed: int = 0
    duplicate: int = 1
    first_id: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ParameterError(f'Population count must be at least 1, got {self.count}.')
        if self.dimension_or_length < 1:
            raise ParameterError(f'Dimension/length must be positive, got {self.dimension_or_length}.')
        if self.mode == PopulationMode.BIT_LEVEL:
            if not 0 <= self.noise < 0.5:
                raise ParameterError(f'p_same must lie in [0, 0.5), got {self.noise}.')
        elif self.noise < 0:
            raise ParameterError(f'sigma_t must be non-negative, got {self.noise}.')
        if self.duplicate < 1:
            raise ParameterError(f'Duplication factor must be at least 1, got {self.duplicate}.')
        check_identity(self.first_id)
        check_identity(self.first_id + self.count - 1)


def _ground_truth_bits(rng, cfg):
    n = cfg.dimension_or_length
    base_length = -(-n // cfg.duplicate)
    base = rng.integers(0, 2, size=(cfg.count, base_length), dtype=np.uint8)
    if cfg.duplicate == 1:
        return base
    return np.repeat(base, cfg.duplicate, axis=1)[:, :n]


def _flip(rng, truth, p_same):
    if p_same == 0:
        return truth.copy()
    return truth ^ (rng.random(truth.shape) < p_same).astype(np.uint8)


def _perturb(rng, centroids, sigma):
    d = centroids.shape[1]
    noisy = centroids + rng.standard_normal(centroids.shape) * (sigma / np.sqrt(d))
    return noisy / np.linalg.norm(noisy, axis=1, keepdims=True)


def generate_population(cfg: PopulationConfig):
    """
    Generates one enroll and one auth sample per identity.

    bit_level: every identity gets a uniformly random ground truth string, both samples
    flip each bit independently with probability p_same.
    template_level: every identity gets a random unit centroid, samples add gaussian noise
    with total expected norm sigma_t and are renormalized.

    :returns list of LabeledSample, ordered by identity then session
    """
    rng = utils.make_rng(cfg.seed, 'population')

    if cfg.mode == PopulationMode.BIT_LEVEL:
        truth = _ground_truth_bits(rng, cfg)
        enroll = _flip(rng, truth, cfg.noise)
        auth = _flip(rng, truth, cfg.noise)
        wrap = BitString
    else:
        if cfg.duplicate != 1:
            raise ParameterError('Bit duplication is only available for bit_level populations.')
        centroids = rng.standard_normal((cfg.count, cfg.dimension_or_length))
        centroids /= np.linalg.norm(centroids, axis=1, keepdims=True)
        enroll = _perturb(rng, centroids, cfg.noise)
        auth = _perturb(rng, centroids, cfg.noise)
        wrap = Template

    samples = []
    for i in range(cfg.count):
        _id = cfg.first_id + i
        samples.append(LabeledSample(_id, wrap(enroll[i]), Session.ENROLL))
        samples.append(LabeledSample(_id, wrap(auth[i]), Session.AUTH))

    logger.debug(f'Generated {cfg.mode.value} population of {cfg.count} identities (seed {cfg.seed}).')
    return samples


def duplicate_bits(cfg: PopulationConfig, factor=2):
    """
    Bit-level population whose ground truth bits are each repeated factor times.
    """
    return generate_population(PopulationConfig(
        count=cfg.count, mode=PopulationMode.BIT_LEVEL, noise=cfg.noise,
        dimension_or_length=cfg.dimension_or_length, seed=cfg.seed, duplicate=factor,
        first_id=cfg.first_id,
    ))


def by_session(samples, session):
    """
    :returns dict identity -> first sample of the given session
    """
    result = {}
    for sample in samples:
        if sample.session == session and sample.id not in result:
            result[sample.id] = sample
    return result


def bit_matrix(samples):
    """
    Stacks bit-level samples.
    :returns (ids array, uint8 matrix with one row per sample)
    """
    if not samples:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 0), dtype=np.uint8)
    lengths = {len(s.payload) for s in samples if s.is_bits()}
    if len(lengths) != 1 or not all(s.is_bits() for s in samples):
        raise DimensionMismatchError('Samples must all be bit strings of one length.')
    ids = np.array([s.id for s in samples], dtype=np.int64)
    return ids, np.stack([s.payload.bits for s in samples])


def save_dataset(samples, path, fmt=None, length=None):
    """
    Writes samples in the SBAPOP1 dataset format.
    :param fmt: DatasetFormat, derived from the samples if None
    :param length: bit length/dimension, required for empty datasets
    """
    if fmt is None:
        fmt = DatasetFormat.BITS if not samples or samples[0].is_bits() else DatasetFormat.TEMPLATES
    if length is None:
        if not samples:
            raise ParameterError('Length is required to save an empty dataset.')
        length = len(samples[0].payload)

    with open(path, 'wb') as file:
        file.write(_HEADER.pack(DATASET_MAGIC, length, len(samples)))
        for sample in samples:
            if len(sample.payload) != length:
                raise DimensionMismatchError(f'Sample of identity {sample.id} has length '
                                             f'{len(sample.payload)}, expected {length}.')
            file.write(_RECORD_HEADER.pack(check_identity(sample.id), sample.session.value))
            if fmt == DatasetFormat.BITS:
                file.write(sample.payload.pack())
            else:
                file.write(sample.payload.coords.astype('<f8').tobytes())

    logger.info(f'Saved {len(samples)} samples to {path}.')


def load_dataset(path, fmt=DatasetFormat.BITS, expected_length=None, multiplicity=1):
    """
    Reads a dataset written by save_dataset.

    :param fmt: DatasetFormat of the file
    :param expected_length: configured n (or d), records of other lengths are rejected
    :param multiplicity: allowed number of samples per (identity, session)
    :returns list of LabeledSample
    """
    with open(path, 'rb') as file:
        data = file.read()
    if not data:
        return []

    if len(data) < _HEADER.size:
        raise DatasetFormatError(f'{path}: truncated header.')
    magic, length, count = _HEADER.unpack_from(data, 0)
    if magic != DATASET_MAGIC:
        raise DatasetFormatError(f'{path}: bad magic {magic!r}.')
    if expected_length is not None and length != expected_length:
        raise DimensionMismatchError(f'{path}: records have length {length}, expected {expected_length}.')
    if length == 0 and count:
        raise DatasetFormatError(f'{path}: zero record length.')

    payload_size = (length + 7) // 8 if fmt == DatasetFormat.BITS else 8 * length
    record_size = _RECORD_HEADER.size + payload_size
    if len(data) != _HEADER.size + count * record_size:
        raise DatasetFormatError(f'{path}: expected {count} records of {record_size} bytes, '
                                 f'file holds {len(data) - _HEADER.size} bytes.')

    seen = {}
    samples = []
    offset = _HEADER.size
    for _ in range(count):
        _id, session_value = _RECORD_HEADER.unpack_from(data, offset)
        offset += _RECORD_HEADER.size
        try:
            session = Session(session_value)
        except ValueError:
            raise DatasetFormatError(f'{path}: unknown session tag {session_value}.')
        raw = data[offset:offset + payload_size]
        offset += payload_size

        key = (_id, session)
        seen[key] = seen.get(key, 0) + 1
        if seen[key] > multiplicity:
            raise DatasetFormatError(f'{path}: identity {_id} has more than {multiplicity} '
                                     f'{session.name.lower()} samples.')

        if fmt == DatasetFormat.BITS:
            payload = BitString.unpack(raw, length)
        else:
            payload = Template(np.frombuffer(raw, dtype='<f8'))
        samples.append(LabeledSample(_id, payload, session))

    logger.info(f'Loaded {len(samples)} samples from {path}.')
    return samples
