import math

import pytest

from sbauth.config import CliConfig, load_config_file, parse_bool, parse_float, parse_int, parse_list
from sbauth.errors import ParameterError
from sbauth.population import PopulationMode
from sbauth.sampling import HashMode


def test_load_config_file(tmp_path):
    path = tmp_path / 'sbauth.conf'
    path.write_text('# defaults\n\nk = 64\nHash-Mode=keyed_prf\nm=10\nm=20\n')
    assert load_config_file(path) == {'k': '64', 'hash_mode': 'keyed_prf', 'm': '20'}


def test_malformed_config_file(tmp_path):
    path = tmp_path / 'sbauth.conf'
    path.write_text('k=64\nno value here\n')
    with pytest.raises(ParameterError, match=':2:'):
        load_config_file(path)


@pytest.mark.parametrize('text, expected', [('yes', True), ('On', True), ('1', True), ('false', False),
                                            ('0', False), (True, True)])
def test_parse_bool(text, expected):
    assert parse_bool(text) is expected


def test_parse_numbers():
    assert parse_int('0x10') == 16
    assert parse_int('1_000') == 1000
    assert parse_int('010') == 10
    assert parse_float('inf') == math.inf
    with pytest.raises(ParameterError):
        parse_float('nan')
    with pytest.raises(ParameterError):
        parse_int('1.5')
    with pytest.raises(ParameterError):
        parse_bool('maybe')


def test_parse_list():
    assert parse_list('64, 96,110', parse_int) == (64, 96, 110)
    assert parse_list([1, 2], parse_int) == (1, 2)
    assert parse_list(0.5, parse_float) == (0.5,)


class TestCliConfig:
    def test_defaults(self):
        config = CliConfig.resolve()
        params = config.system_params()
        assert (params.n, params.k, params.m, params.tau) == (4096, 110, 1000, 1)
        assert params.hash_mode == HashMode.PLAIN_HASH and params.domain_separation

    def test_flags_override_the_file(self):
        config = CliConfig.resolve({'k': '64', 'm': '500', 'color': 'red'}, {'k': 32, 'm': None})
        assert (config.k, config.m) == (32, 500)

    def test_invalid_combination(self):
        with pytest.raises(ParameterError):
            CliConfig.resolve({'n': '64', 'k': '64'})

    def test_invalid_value(self):
        with pytest.raises(ParameterError, match='hash_mode'):
            CliConfig.resolve({'hash_mode': 'md5'})

    def test_population_length(self):
        assert CliConfig.resolve({'n': '256', 'k': '8'}).population_config().dimension_or_length == 256
        templates = CliConfig.resolve({'mode': 'template_level'}).population_config()
        assert templates.mode == PopulationMode.TEMPLATE_LEVEL
        assert templates.dimension_or_length == 512
