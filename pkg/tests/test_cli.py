import io

import pytest

from sbauth.command_line_interface import EXIT_FAILURE, EXIT_OK, EXIT_REJECTED, main
from sbauth.population import Session, by_session, load_dataset
from sbauth.store import load_store

SYSTEM = ['--n', '256', '--k', '16', '--m', '50']


def _run(*argv):
    out = io.StringIO()
    code = main([str(a) for a in argv], out=out)
    return code, out.getvalue().strip()


@pytest.fixture
def workspace(tmp_path):
    pop, plan, store = tmp_path / 'pop.bin', tmp_path / 'plan.bin', tmp_path / 'store.db'
    assert _run('genpop', '--count', 20, '--length', 256, '--noise', 0.01, '--seed', 3, '--out', pop)[0] == EXIT_OK
    assert _run('setup', *SYSTEM, '--seed', 4, '--out', plan)[0] == EXIT_OK
    return pop, plan, store


class TestCommands:
    def test_enroll_auth_revoke(self, workspace):
        pop, plan, store = workspace
        code, text = _run('enroll', '--store', store, '--plan', plan, '--dataset', pop)
        assert code == EXIT_OK
        assert text == 'enrolled 20 identities, 20 in total'
        assert load_store(store).enrolled_count() == 20

        assert _run('auth', '--store', store, '--plan', plan, '--dataset', pop, '--sample-id', 5) == (EXIT_OK, '5')

        assert _run('revoke', '--store', store, '--id', 5) == (EXIT_OK, 'revoked 5')
        assert _run('auth', '--store', store, '--plan', plan, '--dataset', pop, '--sample-id', 5) == \
               (EXIT_REJECTED, 'REJECT')

    def test_enroll_and_auth_hex(self, workspace):
        pop, plan, store = workspace
        samples = load_dataset(pop, expected_length=256)
        enroll = by_session(samples, Session.ENROLL)[7].payload.to_hex()
        auth = by_session(samples, Session.AUTH)[7].payload.to_hex()
        assert _run('enroll', '--store', store, '--plan', plan, '--bits', enroll, '--id', 7)[0] == EXIT_OK
        assert _run('auth', '--store', store, '--plan', plan, '--bits', auth) == (EXIT_OK, '7')

    def test_auth_without_store_rejects(self, workspace):
        pop, plan, store = workspace
        assert _run('auth', '--store', store, '--plan', plan, '--dataset', pop, '--sample-id', 1) == \
               (EXIT_REJECTED, 'REJECT')

    def test_enroll_twice_fails(self, workspace):
        pop, plan, store = workspace
        _run('enroll', '--store', store, '--plan', plan, '--dataset', pop)
        assert _run('enroll', '--store', store, '--plan', plan, '--dataset', pop)[0] == EXIT_FAILURE
        assert load_store(store).enrolled_count() == 20

    def test_keyed_mode_is_refused(self, workspace):
        pop, plan, store = workspace
        code, _ = _run('enroll', '--hash-mode', 'keyed_prf', '--store', store, '--plan', plan, '--dataset', pop)
        assert code == EXIT_FAILURE

    def test_revoke_without_store(self, tmp_path):
        assert _run('revoke', '--store', tmp_path / 'missing.db', '--id', 1)[0] == EXIT_FAILURE

    def test_invalid_parameters(self, tmp_path):
        assert _run('setup', '--n', 16, '--k', 16, '--out', tmp_path / 'plan.bin')[0] == EXIT_FAILURE

    def test_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main(['frobnicate'])
        assert err.value.code == 2

    def test_entropy(self, workspace, tmp_path):
        pop, plan, _ = workspace
        code, text = _run('entropy', '--plan', plan, '--dataset', pop, '--out', tmp_path / 'entropy.csv')
        assert code == EXIT_OK
        assert text.startswith('k=16: ')
        assert (tmp_path / 'entropy.csv').read_text().startswith('subset_index,mu_unlike,sigma_unlike,e_bits')

    def test_config_file(self, tmp_path):
        config = tmp_path / 'sbauth.conf'
        config.write_text('n=128\nk=8\nm=20\n')
        assert _run('--config', config, 'setup', '--out', tmp_path / 'plan.bin') == \
               (EXIT_OK, f'plan n=128 k=8 m=20 written to {tmp_path / "plan.bin"}')


class TestBenchCommand:
    def test_rerun_is_identical(self, tmp_path):
        config = tmp_path / 'experiment.conf'
        config.write_text('sizes=30\nn=128\nk=16,32\nm=40\nfn_probe_count=30\nfp_probe_count=30\n'
                          'seeds=1,2\np_same=0.02\n')
        for name in ('a.csv', 'b.csv'):
            code, _ = _run('bench', '--config', config, '--out', tmp_path / name, '--no-timings')
            assert code == EXIT_OK
        assert (tmp_path / 'a.csv').read_bytes() == (tmp_path / 'b.csv').read_bytes()
        assert len((tmp_path / 'a.csv').read_text().splitlines()) == 5

    def test_unknown_setting(self, tmp_path):
        config = tmp_path / 'experiment.conf'
        config.write_text('sizes=30\nwarp=9\n')
        assert _run('bench', '--config', config, '--out', tmp_path / 'out.csv')[0] == EXIT_FAILURE
