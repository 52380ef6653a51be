import logging
import math
from dataclasses import dataclass, fields

from sbauth.errors import ParameterError
from sbauth.population import PopulationConfig, PopulationMode
from sbauth.sampling import HashMode, SystemParams
from sbauth.store import DEFAULT_CAPACITY

logger = logging.getLogger(__name__)

_TRUE = ('1', 'true', 'yes', 'on')
_FALSE = ('0', 'false', 'no', 'off')


def normalize_key(key):
    return key.strip().lower().replace('-', '_')


def load_config_file(path):
    """
    Reads a plain text key=value file. Blank lines and lines starting with '#' are ignored,
    '-' and '_' in keys are interchangeable.
    :returns dict key -> raw string value
    """
    values = {}
    with open(path, 'r', encoding='utf-8') as file:
        for number, line in enumerate(file, start=1):
            line = line.strip()
            if not line or line.startswith('#'):
                continue
            if '=' not in line:
                raise ParameterError(f'{path}:{number}: expected key=value, got "{line}".')
            key, value = line.split('=', 1)
            key = normalize_key(key)
            if not key:
                raise ParameterError(f'{path}:{number}: empty key.')
            if key in values:
                logger.warning(f'{path}:{number}: "{key}" set twice, using the last value.')
            values[key] = value.strip()
    logger.debug(f'Read {len(values)} settings from {path}.')
    return values


def parse_bool(value):
    if isinstance(value, bool):
        return value
    text = str(value).strip().lower()
    if text in _TRUE:
        return True
    if text in _FALSE:
        return False
    raise ParameterError(f'Expected a boolean, got "{value}".')


def parse_float(value):
    """
    Like float(), also accepts 'inf'. NaN is rejected.
    """
    try:
        result = float(value)
    except (TypeError, ValueError):
        raise ParameterError(f'Expected a number, got "{value}".')
    if math.isnan(result):
        raise ParameterError('NaN is not a valid setting.')
    return result


def parse_int(value):
    if isinstance(value, bool):
        raise ParameterError(f'Expected an integer, got "{value}".')
    text = str(value).strip().replace('_', '')
    try:
        return int(text, 0)
    except ValueError:
        pass
    try:
        return int(text)
    except ValueError:
        raise ParameterError(f'Expected an integer, got "{value}".')


def parse_list(value, cast):
    """
    Comma separated values, or an iterable of values.
    :returns tuple of cast values
    """
    if isinstance(value, str):
        items = [item.strip() for item in value.split(',') if item.strip()]
    elif isinstance(value, (list, tuple)):
        items = list(value)
    else:
        items = [value]
    return tuple(cast(item) for item in items)


@dataclass
class CliConfig:
    """
    Settings shared by the command line commands.
    Resolution order: defaults < config file < command line flags.
    """
    # SystemParams
    n: int = 4096
    k: int = 110
    m: int = 1000
    tau: int = 1
    zeta: float = 1.0
    hash_mode: HashMode = HashMode.PLAIN_HASH
    domain_separation: bool = True
    # PopulationConfig
    count: int = 1000
    mode: PopulationMode = PopulationMode.BIT_LEVEL
    noise: float = 0.05
    length: int = None
    seed: int = 0
    duplicate: int = 1
    # store
    shard_capacity: int = DEFAULT_CAPACITY

    _CASTS = {
        'n': parse_int, 'k': parse_int, 'm': parse_int, 'tau': parse_int, 'zeta': parse_float,
        'hash_mode': HashMode.from_arg, 'domain_separation': parse_bool,
        'count': parse_int, 'mode': PopulationMode.from_arg, 'noise': parse_float,
        'length': parse_int, 'seed': parse_int, 'duplicate': parse_int, 'shard_capacity': parse_int,
    }

    @classmethod
    def resolve(cls, file_values=None, flags=None):
        """
        :param file_values: dict from load_config_file, unknown keys are ignored
        :param flags: dict of command line values, None entries are not set on the command line
        :returns validated CliConfig
        """
        names = {f.name for f in fields(cls)}
        merged = {}
        for key, value in (file_values or {}).items():
            key = normalize_key(key)
            if key in names:
                merged[key] = value
            else:
                logger.debug(f'Ignoring setting "{key}".')
        for key, value in (flags or {}).items():
            key = normalize_key(key)
            if key in names and value is not None:
                merged[key] = value

        converted = {}
        for key, value in merged.items():
            try:
                converted[key] = cls._CASTS[key](value)
            except ValueError as err:
                raise ParameterError(f'Invalid value for {key}: {err}')
        config = cls(**converted)
        # fails with ParameterError before any command runs
        config.system_params()
        return config

    def system_params(self):
        return SystemParams(n=self.n, k=self.k, m=self.m, tau=self.tau, zeta=self.zeta,
                            hash_mode=self.hash_mode, domain_separation=self.domain_separation)

    def population_config(self):
        length = self.length
        if length is None:
            length = self.n if self.mode == PopulationMode.BIT_LEVEL else 512
        return PopulationConfig(count=self.count, mode=self.mode, noise=self.noise,
                                dimension_or_length=length, seed=self.seed, duplicate=self.duplicate)
