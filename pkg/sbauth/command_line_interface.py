import argparse
import asyncio
import logging
import os
import sys

from sbauth import bench, engine, logging_default as log, utils
from sbauth.bits import BitString
from sbauth.config import CliConfig, load_config_file, parse_bool
from sbauth.crypto import InMemoryKeyProvider
from sbauth.entropy import entropy_report
from sbauth.errors import ParameterError, SbauthError
from sbauth.lsh import build_bank, project_samples
from sbauth.population import (DatasetFormat, PopulationMode, Session, by_session, generate_population,
                               load_dataset, save_dataset)
from sbauth.protocol import AuthService
from sbauth.sampling import HashMode, load_plan, save_plan, setup
from sbauth.server import parse_bind_address, serve_forever
from sbauth.store import ShardedStore, load_store, save_store
from sbauth.wire import DEFAULT_MAX_FRAME_SIZE

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_REJECTED = 3

_SYSTEM_FLAGS = ('n', 'k', 'm', 'tau', 'zeta', 'hash_mode', 'domain_separation')
_POPULATION_FLAGS = ('count', 'mode', 'noise', 'length', 'seed', 'duplicate')


class SbauthCLI:
    """
    One method per sub command. Methods only parse, wire library calls together and print.
    :returns exit code
    """
    def __init__(self, config: CliConfig, out=None):
        self.config = config
        self.out = out if out is not None else sys.stdout

    def _print(self, text):
        print(text, file=self.out)

    def _load_plan(self, path):
        c = self.config
        return load_plan(path, tau=c.tau, zeta=c.zeta, hash_mode=c.hash_mode, domain_separation=c.domain_separation)

    def _refuse_keyed(self, command):
        if self.config.hash_mode == HashMode.KEYED_PRF:
            raise ParameterError(f'{command}: keyed_prf needs a long running process, use bench or serve.')

    def _load_store(self, path):
        if os.path.exists(path):
            return load_store(path)
        logger.info(f'{path} does not exist, starting with an empty store.')
        return ShardedStore(self.config.shard_capacity)

    def _load_bit_samples(self, path, fmt, n):
        """
        Template datasets are projected to n bits with the hyperplane bank of the configured seed.
        """
        fmt = DatasetFormat.from_arg(fmt)
        samples = load_dataset(path, fmt=fmt, expected_length=n if fmt == DatasetFormat.BITS else None)
        if fmt == DatasetFormat.TEMPLATES and samples:
            bank = build_bank(samples[0].payload.dimension, n, seed=self.config.seed)
            samples = project_samples(samples, bank)
        return samples

    def cmd_setup(self, args):
        """
        setup - samples the public subset plan

        Usage:
            setup --out PLAN [--train-dataset F]
        """
        training = None
        if args.train_dataset:
            training = self._load_bit_samples(args.train_dataset, args.format, self.config.n)
        plan, _ = setup(self.config.system_params(), training, seed=self.config.seed)
        save_plan(plan, args.out)
        self._print(f'plan n={plan.n} k={plan.k} m={plan.m} written to {args.out}')
        return EXIT_OK

    def cmd_genpop(self, args):
        """
        genpop - generates a synthetic population, one enroll and one auth sample per identity
        """
        cfg = self.config.population_config()
        samples = generate_population(cfg)
        fmt = DatasetFormat.BITS if cfg.mode == PopulationMode.BIT_LEVEL else DatasetFormat.TEMPLATES
        save_dataset(samples, args.out, fmt=fmt, length=cfg.dimension_or_length)
        self._print(f'{cfg.count} identities ({len(samples)} samples) written to {args.out}')
        return EXIT_OK

    def cmd_enroll(self, args):
        """
        enroll - enrolls one bit string or the enroll samples of a dataset

        Usage:
            enroll --store S --plan P --bits HEX --id ID
            enroll --store S --plan P --dataset F
        """
        self._refuse_keyed('enroll')
        plan = self._load_plan(args.plan)
        store = self._load_store(args.store)
        try:
            if args.bits is not None:
                if args.id is None:
                    raise ParameterError('enroll --bits requires --id.')
                engine.enroll(store, args.id, BitString.from_hex(args.bits, plan.n), plan)
                enrolled = 1
            elif args.dataset is not None:
                samples = by_session(self._load_bit_samples(args.dataset, args.format, plan.n), Session.ENROLL)
                for _id in sorted(samples):
                    engine.enroll(store, _id, samples[_id].payload, plan)
                enrolled = len(samples)
            else:
                raise ParameterError('enroll requires --bits or --dataset.')
            save_store(store, args.store)
        finally:
            store.close()
        self._print(f'enrolled {enrolled} identities, {store.enrolled_count()} in total')
        return EXIT_OK

    def cmd_auth(self, args):
        """
        auth - prints the matched identity or REJECT

        Usage:
            auth --store S --plan P --bits HEX
            auth --store S --plan P --dataset F --sample-id ID
        """
        self._refuse_keyed('auth')
        plan = self._load_plan(args.plan)
        if args.bits is not None:
            v = BitString.from_hex(args.bits, plan.n)
        elif args.dataset is not None and args.sample_id is not None:
            samples = self._load_bit_samples(args.dataset, args.format, plan.n)
            probes = by_session(samples, Session.AUTH)
            if args.sample_id not in probes:
                probes = by_session(samples, Session.ENROLL)
            if args.sample_id not in probes:
                raise ParameterError(f'{args.dataset} has no sample of identity {args.sample_id}.')
            v = probes[args.sample_id].payload
        else:
            raise ParameterError('auth requires --bits or --dataset with --sample-id.')

        store = self._load_store(args.store)
        try:
            result = engine.authenticate(store, v, plan)
        finally:
            store.close()
        if result.matched:
            self._print(str(result.id))
            return EXIT_OK
        self._print('REJECT')
        return EXIT_REJECTED

    def cmd_revoke(self, args):
        """
        revoke - removes every record of one identity
        """
        if not os.path.exists(args.store):
            raise ParameterError(f'{args.store} does not exist.')
        store = load_store(args.store)
        try:
            engine.revoke(store, args.id)
            save_store(store, args.store)
        finally:
            store.close()
        self._print(f'revoked {args.id}')
        return EXIT_OK

    def cmd_bench(self, args):
        """
        bench - runs an experiment described by a key=value file and writes a results CSV

        Usage:
            bench --config F --out CSV [--experiment error|timing|baseline|compare] [--no-timings]
        """
        cfg = bench.ExperimentConfig.from_mapping(load_config_file(args.experiment_config))
        if args.experiment == 'compare':
            for comparison in bench.compare_with_baseline(cfg):
                self._print(f'N={comparison.N} p_same={comparison.p_same}: secure {comparison.secure_error:.4f} '
                            f'baseline {comparison.baseline_error:.4f} ratio {comparison.ratio:.2f}')
            return EXIT_OK

        run = {
            'error': bench.run_error_experiment,
            'timing': bench.run_timing_experiment,
            'baseline': bench.run_insecure_baseline,
        }[args.experiment]
        results = run(cfg)
        bench.emit_results(results, args.out, include_timings=not args.no_timings)
        for summary in bench.summarize(results):
            self._print(f'{summary.point}: fnr {summary.fnr:.4f} (+-{summary.fnr_se:.4f}) fpr {summary.fpr:.4f} '
                        f'error {summary.error_rate:.4f}')
        return EXIT_OK

    def cmd_entropy(self, args):
        """
        entropy - per subset min-entropy estimates as CSV
        """
        plan = self._load_plan(args.plan)
        report = entropy_report(plan, self._load_bit_samples(args.dataset, args.format, plan.n),
                                pair_budget=args.pair_budget, seed=self.config.seed)
        report.to_csv(args.out)
        self._print(str(report))
        return EXIT_OK

    def cmd_serve(self, args):
        """
        serve - runs the authentication service until interrupted

        Usage:
            serve --store S --plan P --bind HOST:PORT [--accept-bits] [--capture F] [--save-on-exit]
        """
        plan = self._load_plan(args.plan)
        host, port = parse_bind_address(args.bind)
        key = None
        if self.config.hash_mode == HashMode.KEYED_PRF:
            if not args.accept_bits:
                raise ParameterError('keyed_prf hashes on the server, serve needs --accept-bits.')
            key = InMemoryKeyProvider()
        store = self._load_store(args.store)
        service = AuthService(store, plan, key=key, accept_bits=args.accept_bits)

        with utils.get_output(path=args.capture, default=None) as capture_file:
            try:
                asyncio.run(serve_forever(service, host, port, max_frame_size=args.max_frame_size,
                                          capture_file=capture_file))
            except KeyboardInterrupt:
                logger.info('Interrupted.')
            finally:
                if args.save_on_exit:
                    save_store(store, args.store)
                store.close()
        return EXIT_OK

    def run(self, args):
        return getattr(self, f'cmd_{args.command}')(args)


def _add_system_flags(parser):
    group = parser.add_argument_group('system parameters')
    group.add_argument('--n', type=int)
    group.add_argument('--k', type=int)
    group.add_argument('--m', type=int)
    group.add_argument('--tau', type=int)
    group.add_argument('--zeta', type=float)
    group.add_argument('--hash-mode', dest='hash_mode', help='plain_hash or keyed_prf')
    group.add_argument('--domain-separation', dest='domain_separation', type=parse_bool)
    group.add_argument('--seed', type=int)


def _add_format_flag(parser):
    parser.add_argument('--format', default='bits', help='dataset format: bits or templates')


def build_parser():
    parser = argparse.ArgumentParser(prog='sbauth')
    parser.add_argument('-l', '--log', help='also log to a dated file with this name')
    parser.add_argument('-v', '--verbose', action='store_true', help='log debug messages to the console')
    parser.add_argument('--config', help='key=value file with default settings')
    commands = parser.add_subparsers(dest='command', required=True)

    cmd = commands.add_parser('setup', help='sample the subset plan')
    _add_system_flags(cmd)
    _add_format_flag(cmd)
    cmd.add_argument('--train-dataset', dest='train_dataset')
    cmd.add_argument('--out', required=True)

    cmd = commands.add_parser('genpop', help='generate a synthetic population')
    cmd.add_argument('--count', type=int)
    cmd.add_argument('--mode', help='bit_level or template_level')
    cmd.add_argument('--noise', type=float, help='p_same (bit_level) or sigma_t (template_level)')
    cmd.add_argument('--length', type=int, help='n (bit_level) or d (template_level)')
    cmd.add_argument('--seed', type=int)
    cmd.add_argument('--duplicate', type=int)
    cmd.add_argument('--out', required=True)

    cmd = commands.add_parser('enroll', help='enroll bit strings')
    _add_system_flags(cmd)
    _add_format_flag(cmd)
    cmd.add_argument('--store', required=True)
    cmd.add_argument('--plan', required=True)
    cmd.add_argument('--bits')
    cmd.add_argument('--id', type=int)
    cmd.add_argument('--dataset')

    cmd = commands.add_parser('auth', help='authenticate a bit string')
    _add_system_flags(cmd)
    _add_format_flag(cmd)
    cmd.add_argument('--store', required=True)
    cmd.add_argument('--plan', required=True)
    cmd.add_argument('--bits')
    cmd.add_argument('--dataset')
    cmd.add_argument('--sample-id', dest='sample_id', type=int)

    cmd = commands.add_parser('revoke', help='revoke an identity')
    cmd.add_argument('--store', required=True)
    cmd.add_argument('--id', type=int, required=True)

    cmd = commands.add_parser('bench', help='run an experiment')
    cmd.add_argument('--config', dest='experiment_config', required=True)
    cmd.add_argument('--out', required=True)
    cmd.add_argument('--experiment', default='error', choices=('error', 'timing', 'baseline', 'compare'))
    cmd.add_argument('--no-timings', dest='no_timings', action='store_true',
                     help='leave timing columns empty for reproducible output')

    cmd = commands.add_parser('entropy', help='estimate substring min-entropy')
    _add_system_flags(cmd)
    _add_format_flag(cmd)
    cmd.add_argument('--plan', required=True)
    cmd.add_argument('--dataset', required=True)
    cmd.add_argument('--out', required=True)
    cmd.add_argument('--pair-budget', dest='pair_budget', type=int, default=10 ** 6)

    cmd = commands.add_parser('serve', help='run the authentication service')
    _add_system_flags(cmd)
    cmd.add_argument('--store', required=True)
    cmd.add_argument('--plan', required=True)
    cmd.add_argument('--bind', default='127.0.0.1:7878')
    cmd.add_argument('--accept-bits', dest='accept_bits', action='store_true')
    cmd.add_argument('--capture', help='record all wire traffic to this file')
    cmd.add_argument('--save-on-exit', dest='save_on_exit', action='store_true')
    cmd.add_argument('--max-frame-size', dest='max_frame_size', type=int, default=DEFAULT_MAX_FRAME_SIZE)
    return parser


def main(argv=None, out=None):
    """
    :returns exit code: 0 success, 1 failure, 2 usage error, 3 authentication rejected
    """
    args = build_parser().parse_args(argv)

    log.configure(console_level=logging.DEBUG if args.verbose else logging.INFO, logfile_name=args.log)

    try:
        file_values = load_config_file(args.config) if args.config else {}
        flags = {name: getattr(args, name, None) for name in _SYSTEM_FLAGS + _POPULATION_FLAGS}
        config = CliConfig.resolve(file_values, flags)
        return SbauthCLI(config, out=out).run(args)
    except (SbauthError, OSError, ValueError) as err:
        print(f'error: {err}', file=sys.stderr)
        return EXIT_FAILURE
