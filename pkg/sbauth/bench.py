import csv
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np
from scipy.special import comb
from scipy.stats import binom

from sbauth import engine, utils
from sbauth.config import normalize_key, parse_bool, parse_float, parse_int, parse_list
from sbauth.crypto import KEY_SIZE, InMemoryKeyProvider
from sbauth.errors import ParameterError
from sbauth.lsh import build_bank, project_samples
from sbauth.population import PopulationConfig, PopulationMode, Session, by_session, generate_population
from sbauth.sampling import BitWeights, HashMode, SystemParams, sample_subsets, setup
from sbauth.store import DEFAULT_CAPACITY, ShardedStore

logger = logging.getLogger(__name__)

CSV_COLUMNS = ('experiment', 'N', 'k', 'm', 'tau', 'zeta', 'p_same', 'trial', 'fnr', 'fpr', 'error_rate',
               'enroll_ms', 'auth_ms', 'bytes_per_id')
TIMING_COLUMNS = ('enroll_ms', 'auth_ms')


@dataclass(frozen=True)
class ExperimentConfig:
    """
    :param sizes: numbers of enrolled identities
    :param n: LSH output length
    :param k: grid of substring lengths
    :param m: number of subsets
    :param zeta: grid of sampling exponents, zeta > 0 estimates weights on a separate training population
    :param tau: grid of thresholds
    :param p_same: grid of bit flip probabilities (bit_level) or template noise scales (template_level)
    :param mode: bit_level or template_level population
    :param dimension: template dimension d (template_level only)
    :param fn_probe_count: false negatives are measured over the first fn_probe_count enrolled identities
    :param fp_probe_count: false positives are measured over this many fresh, non-enrolled identities
    :param trials: repetitions with distinct seeds
    :param seed: base seed, trial seeds are derived from it unless seeds are given
    :param seeds: explicit seed per trial
    :param baseline_threshold: euclidean distance threshold of the insecure baseline
    :param train_count: identities of the training population used for zeta-weighting
    :param workers: trials run in parallel with this many threads
    """
    sizes: tuple = (1000,)
    n: int = 1024
    k: tuple = (64,)
    m: int = 1000
    zeta: tuple = (0.0,)
    tau: tuple = (1,)
    p_same: tuple = (0.05,)
    mode: PopulationMode = PopulationMode.BIT_LEVEL
    dimension: int = 512
    fn_probe_count: int = 1000
    fp_probe_count: int = 1000
    trials: int = 5
    seed: int = 0
    seeds: tuple = ()
    hash_mode: HashMode = HashMode.PLAIN_HASH
    domain_separation: bool = True
    shard_capacity: int = DEFAULT_CAPACITY
    baseline_threshold: float = 0.5
    train_count: int = 1000
    workers: int = 1

    def __post_init__(self):
        for name in ('sizes', 'k', 'zeta', 'tau', 'p_same', 'seeds'):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, 'mode', PopulationMode.from_arg(self.mode))
        object.__setattr__(self, 'hash_mode', HashMode.from_arg(self.hash_mode))

        if self.trials < 1:
            raise ParameterError(f'trials must be at least 1, got {self.trials}.')
        if self.seeds and len(self.seeds) != self.trials:
            raise ParameterError(f'Got {len(self.seeds)} seeds for {self.trials} trials.')
        if not self.sizes or min(self.sizes) < 1:
            raise ParameterError('sizes must list positive population sizes.')
        if not 0 <= self.fn_probe_count <= min(self.sizes):
            raise ParameterError(f'fn_probe_count={self.fn_probe_count} exceeds the smallest '
                                 f'population size {min(self.sizes)}.')
        if self.fp_probe_count < 0:
            raise ParameterError(f'fp_probe_count must be non-negative, got {self.fp_probe_count}.')
        if self.workers < 1:
            raise ParameterError(f'workers must be at least 1, got {self.workers}.')
        if self.train_count < 2 and any(z > 0 for z in self.zeta):
            raise ParameterError('zeta > 0 needs a training population of at least 2 identities.')
        for name in ('k', 'zeta', 'tau', 'p_same'):
            if not getattr(self, name):
                raise ParameterError(f'{name} grid is empty.')
        # every grid point must form valid system parameters
        for k in self.k:
            for zeta in self.zeta:
                for tau in self.tau:
                    self.system_params(k, zeta, tau)

    def system_params(self, k, zeta=0.0, tau=1):
        return SystemParams(n=self.n, k=k, m=self.m, tau=tau, zeta=zeta, hash_mode=self.hash_mode,
                            domain_separation=self.domain_separation)

    def trial_seed(self, trial):
        if self.seeds:
            return self.seeds[trial]
        return derive_seed(self.seed, 'trial', trial)

    _CASTS = {
        'sizes': lambda v: parse_list(v, parse_int), 'n': parse_int, 'k': lambda v: parse_list(v, parse_int),
        'm': parse_int, 'zeta': lambda v: parse_list(v, parse_float), 'tau': lambda v: parse_list(v, parse_int),
        'p_same': lambda v: parse_list(v, parse_float), 'mode': PopulationMode.from_arg,
        'dimension': parse_int, 'fn_probe_count': parse_int, 'fp_probe_count': parse_int,
        'trials': parse_int, 'seed': parse_int, 'seeds': lambda v: parse_list(v, parse_int),
        'hash_mode': HashMode.from_arg, 'domain_separation': parse_bool, 'shard_capacity': parse_int,
        'baseline_threshold': parse_float, 'train_count': parse_int, 'workers': parse_int,
    }

    @classmethod
    def from_mapping(cls, values):
        """
        Builds a config from key=value settings, e.g. the result of config.load_config_file.
        Giving seeds without trials runs one trial per seed.
        """
        names = {f.name for f in fields(cls)}
        converted = {}
        for key, value in values.items():
            key = normalize_key(key)
            if key not in names:
                raise ParameterError(f'Unknown experiment setting "{key}".')
            try:
                converted[key] = cls._CASTS[key](value)
            except ValueError as err:
                raise ParameterError(f'Invalid value for {key}: {err}')
        if converted.get('seeds') and 'trials' not in converted:
            converted['trials'] = len(converted['seeds'])
        return cls(**converted)


@dataclass
class BenchResult:
    """
    One CSV row: rates of one trial at one parameter point, timings per user.
    Parameters that do not apply to an experiment are None.
    """
    experiment: str
    N: int
    k: Optional[int]
    m: Optional[int]
    tau: Optional[int]
    zeta: Optional[float]
    p_same: float
    trial: int
    fnr: float
    fpr: float
    enroll_ms: float
    auth_ms: float
    bytes_per_id: int
    fn_probes: int = field(default=0, compare=False)
    fp_probes: int = field(default=0, compare=False)
    lookups_per_auth: Optional[float] = field(default=None, compare=False)

    def __post_init__(self):
        for name in ('fnr', 'fpr'):
            value = getattr(self, name)
            if not 0 <= value <= 1:
                raise ParameterError(f'{name} must lie in [0, 1], got {value}.')

    @property
    def error_rate(self):
        return (self.fnr + self.fpr) / 2

    def point(self):
        return self.experiment, self.N, self.k, self.m, self.tau, self.zeta, self.p_same


def derive_seed(seed, *labels):
    """
    Independent 63-bit seed for a labeled sub-experiment.
    """
    return int(utils.make_rng(seed, *labels).integers(0, 2 ** 63))


def _rate(failures, total):
    return failures / total if total else 0.0


class _TrialData:
    """
    Populations of one trial: enrolled identities, fresh non-enrolled probes and the training set.
    Template-level populations are kept as templates and projected on demand.
    """
    def __init__(self, cfg: ExperimentConfig, size, p_same, trial, need_training):
        seed = cfg.trial_seed(trial)
        length = cfg.n if cfg.mode == PopulationMode.BIT_LEVEL else cfg.dimension

        def population(count, label, first_id=0):
            return generate_population(PopulationConfig(
                count=count, mode=cfg.mode, noise=p_same, dimension_or_length=length,
                seed=derive_seed(seed, label, size), first_id=first_id))

        self.seed = seed
        self.enrolled = population(size, 'enrolled')
        self.outsiders = population(cfg.fp_probe_count, 'outsiders', first_id=size) if cfg.fp_probe_count else []
        self.training = population(cfg.train_count, 'training') if need_training else []
        self.bank = None
        if cfg.mode == PopulationMode.TEMPLATE_LEVEL:
            self.bank = build_bank(cfg.dimension, cfg.n, seed=derive_seed(seed, 'bank'))

    def bits(self, samples):
        if self.bank is None:
            return samples
        return project_samples(samples, self.bank)


def _authenticate_all(store, plan, probes, key):
    """
    :returns (MatchResults at the plan threshold, total seconds)
    """
    results = []
    start = time.perf_counter()
    for sample in probes:
        results.append(engine.authenticate(store, sample.payload, plan, key=key))
    return results, time.perf_counter() - start


def _secure_trial(cfg: ExperimentConfig, size, p_same, trial, experiment):
    data = _TrialData(cfg, size, p_same, trial, need_training=any(z > 0 for z in cfg.zeta))
    enrolled = data.bits(data.enrolled)
    enroll_samples = by_session(enrolled, Session.ENROLL)
    auth_samples = by_session(enrolled, Session.AUTH)
    fn_probes = [auth_samples[i] for i in sorted(auth_samples)[:cfg.fn_probe_count]]
    fp_probes = list(by_session(data.bits(data.outsiders), Session.AUTH).values())
    training = data.bits(data.training)

    key = None
    if cfg.hash_mode == HashMode.KEYED_PRF:
        key = InMemoryKeyProvider(utils.make_rng(data.seed, 'key').bytes(KEY_SIZE))

    rows = []
    for k in cfg.k:
        for zeta in cfg.zeta:
            params = cfg.system_params(k, zeta, tau=min(cfg.tau))
            plan, _ = setup(params, training if zeta > 0 else None, seed=derive_seed(data.seed, 'plan', k))

            store = ShardedStore(cfg.shard_capacity)
            try:
                start = time.perf_counter()
                for _id in sorted(enroll_samples):
                    engine.enroll(store, _id, enroll_samples[_id].payload, plan, key=key)
                enroll_seconds = time.perf_counter() - start

                store.reset_lookup_count()
                fn_results, fn_seconds = _authenticate_all(store, plan, fn_probes, key)
                fp_results, fp_seconds = _authenticate_all(store, plan, fp_probes, key)
                auths = len(fn_results) + len(fp_results)
                lookups = store.lookup_count / auths if auths else None
            finally:
                store.close()

            for tau in cfg.tau:
                fn = [engine.decide(r.counts, tau) for r in fn_results]
                fp = [engine.decide(r.counts, tau) for r in fp_results]
                fnr = _rate(sum(r.id != p.id for r, p in zip(fn, fn_probes)), len(fn_probes))
                fpr = _rate(sum(r.matched for r in fp), len(fp_probes))
                rows.append(BenchResult(
                    experiment=experiment, N=size, k=k, m=cfg.m, tau=tau, zeta=zeta, p_same=p_same,
                    trial=trial, fnr=fnr, fpr=fpr,
                    enroll_ms=1000 * enroll_seconds / size,
                    auth_ms=1000 * (fn_seconds + fp_seconds) / auths if auths else 0.0,
                    bytes_per_id=params.bytes_per_identity(),
                    fn_probes=len(fn_probes), fp_probes=len(fp_probes), lookups_per_auth=lookups,
                ))
            logger.info(f'{experiment}: N={size} k={k} zeta={zeta} p_same={p_same} trial {trial}: '
                        f'fnr {rows[-1].fnr:.4f}, fpr {rows[-1].fpr:.4f}, '
                        f'{lookups} lookups per auth')
    return rows


def _run_trials(cfg: ExperimentConfig, trial_function):
    """
    Runs trial_function(size, p_same, trial) for every point of the grid,
    in parallel if cfg.workers > 1. Rows keep grid order.
    """
    jobs = [(size, p_same, trial) for size in cfg.sizes for p_same in cfg.p_same for trial in range(cfg.trials)]
    if cfg.workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as executor:
            batches = list(executor.map(lambda job: trial_function(*job), jobs))
    else:
        batches = [trial_function(*job) for job in jobs]
    return [row for batch in batches for row in batch]


def run_error_experiment(cfg: ExperimentConfig):
    """
    Enrolls N identities per trial. False negatives: auth samples of the first fn_probe_count
    enrolled identities that do not authenticate as themselves. False positives: fresh identities
    that authenticate as anyone.
    :returns list of BenchResult, one per size, p_same, trial, k, zeta and tau
    """
    logger.info(f'Error experiment: sizes {cfg.sizes}, k {cfg.k}, zeta {cfg.zeta}, tau {cfg.tau}, '
                f'p_same {cfg.p_same}, {cfg.trials} trials.')
    return _run_trials(cfg, lambda size, p_same, trial: _secure_trial(cfg, size, p_same, trial, 'error'))


def run_timing_experiment(cfg: ExperimentConfig):
    """
    Mean enroll and auth time per user at every size and substring length, at the first
    zeta, tau and p_same of the grid. Population generation and bank construction are not timed.
    BenchResult.lookups_per_auth reports the instrumented map lookups.
    """
    cfg = replace(cfg, zeta=cfg.zeta[:1], tau=cfg.tau[:1], p_same=cfg.p_same[:1])
    logger.info(f'Timing experiment: sizes {cfg.sizes}, k {cfg.k}, m {cfg.m}.')
    rows = _run_trials(cfg, lambda size, p_same, trial: _secure_trial(cfg, size, p_same, trial, 'timing'))
    for row in rows:
        logger.info(f'N={row.N} k={row.k}: enroll {row.enroll_ms:.3f} ms, auth {row.auth_ms:.3f} ms per user, '
                    f'{row.lookups_per_auth} lookups per auth')
    return rows


def subset_survival_oracle(n, k, t_prime, weights: BitWeights = None, draws=10_000, seed=0):
    """
    Probability that a k-subset avoids t_prime flipped positions.

    Uniform subsets: C(n - t', k) / C(n, k) exactly.
    Weighted subsets: Monte-Carlo over draws subsets and uniformly placed flips.
    """
    if not 0 <= t_prime <= n or not 0 <= k <= n:
        raise ParameterError(f'Need 0 <= t\' <= n and 0 <= k <= n, got n={n}, k={k}, t\'={t_prime}.')
    if weights is None or k in (0, n):
        return float(comb(n - t_prime, k, exact=True) / comb(n, k, exact=True))

    plan = sample_subsets(SystemParams(n=n, k=k, m=draws), weights, seed=seed)
    rng = utils.make_rng(seed, 'flips')
    flipped = np.zeros((draws, n), dtype=bool)
    order = np.argsort(rng.random((draws, n)), axis=1)[:, :t_prime]
    np.put_along_axis(flipped, order, True, axis=1)
    hit = np.take_along_axis(flipped, plan.index_matrix, axis=1).any(axis=1)
    return float(1.0 - hit.mean())


def expected_fnr(n, k, m, p_same, tau=1):
    """
    False negative rate of uniform plans without the hash layer: enroll and auth sample differ
    in t' ~ Binomial(n, 2 p (1 - p)) positions, every subset survives independently with the
    probability of subset_survival_oracle, fewer than tau survivors is a rejection.
    """
    p_diff = 2 * p_same * (1 - p_same)
    t = np.arange(n + 1)
    p_t = binom.pmf(t, n, p_diff)
    relevant = p_t > 1e-15
    survive = np.array([subset_survival_oracle(n, k, int(t_prime)) for t_prime in t[relevant]])
    return float(np.sum(p_t[relevant] * binom.cdf(tau - 1, m, survive)))


def simulate_fnr(n, k, m, p_same, tau=1, probes=1000, seed=0):
    """
    Monte-Carlo counterpart of expected_fnr: resimulates flips and counts surviving subsets.
    """
    rng = utils.make_rng(seed, 'oracle')
    t_primes = rng.binomial(n, 2 * p_same * (1 - p_same), size=probes)
    survive = np.array([subset_survival_oracle(n, k, int(t)) for t in t_primes])
    survivors = rng.binomial(m, survive)
    return float(np.mean(survivors < tau))


class TemplateDatabase:
    """
    Insecure baseline: stores raw templates and scans all of them for every query.
    """
    def __init__(self, dimension, capacity=1024):
        self.dimension = dimension
        self._templates = np.empty((max(1, capacity), dimension))
        self._ids = []

    def enroll(self, _id, template):
        count = len(self._ids)
        if count == self._templates.shape[0]:
            grown = np.empty((2 * count, self.dimension))
            grown[:count] = self._templates
            self._templates = grown
        self._templates[count] = template.coords
        self._ids.append(_id)

    def authenticate(self, template, threshold):
        """
        Nearest stored template by euclidean distance.
        :returns (identity or None if the distance exceeds threshold, distance)
        """
        if not self._ids:
            return None, math.inf
        distances = np.linalg.norm(self._templates[:len(self._ids)] - template.coords, axis=1)
        best = int(np.argmin(distances))
        if distances[best] <= threshold:
            return self._ids[best], float(distances[best])
        return None, float(distances[best])

    def __len__(self):
        return len(self._ids)


def _baseline_trial(cfg: ExperimentConfig, size, p_same, trial):
    data = _TrialData(cfg, size, p_same, trial, need_training=False)
    enroll_samples = by_session(data.enrolled, Session.ENROLL)
    auth_samples = by_session(data.enrolled, Session.AUTH)
    fn_probes = [auth_samples[i] for i in sorted(auth_samples)[:cfg.fn_probe_count]]
    fp_probes = list(by_session(data.outsiders, Session.AUTH).values())

    database = TemplateDatabase(cfg.dimension, capacity=size)
    start = time.perf_counter()
    for _id in sorted(enroll_samples):
        database.enroll(_id, enroll_samples[_id].payload)
    enroll_seconds = time.perf_counter() - start

    start = time.perf_counter()
    fn = [database.authenticate(p.payload, cfg.baseline_threshold)[0] for p in fn_probes]
    fp = [database.authenticate(p.payload, cfg.baseline_threshold)[0] for p in fp_probes]
    auth_seconds = time.perf_counter() - start
    auths = len(fn_probes) + len(fp_probes)

    row = BenchResult(
        experiment='baseline', N=size, k=None, m=None, tau=None, zeta=None, p_same=p_same, trial=trial,
        fnr=_rate(sum(i != p.id for i, p in zip(fn, fn_probes)), len(fn_probes)),
        fpr=_rate(sum(i is not None for i in fp), len(fp_probes)),
        enroll_ms=1000 * enroll_seconds / size,
        auth_ms=1000 * auth_seconds / auths if auths else 0.0,
        bytes_per_id=8 * cfg.dimension, fn_probes=len(fn_probes), fp_probes=len(fp_probes),
    )
    logger.info(f'baseline: N={size} p_same={p_same} trial {trial}: fnr {row.fnr:.4f}, fpr {row.fpr:.4f}, '
                f'auth {row.auth_ms:.3f} ms')
    return [row]


def run_insecure_baseline(cfg: ExperimentConfig):
    """
    Linear scan over raw templates with a euclidean distance threshold, on the same populations
    the secure experiments use for equal seeds.
    """
    if cfg.mode != PopulationMode.TEMPLATE_LEVEL:
        raise ParameterError('The insecure baseline needs a template_level population.')
    logger.info(f'Insecure baseline: sizes {cfg.sizes}, threshold {cfg.baseline_threshold}.')
    return _run_trials(cfg, lambda size, p_same, trial: _baseline_trial(cfg, size, p_same, trial))


@dataclass(frozen=True)
class Summary:
    point: tuple
    trials: int
    fnr: float
    fpr: float
    fnr_se: float
    fpr_se: float
    enroll_ms: float
    auth_ms: float

    @property
    def error_rate(self):
        return (self.fnr + self.fpr) / 2


def summarize(results):
    """
    Averages rows over trials per parameter point.
    Standard errors are binomial over all probes of the point.
    :returns list of Summary in first-seen order
    """
    groups = {}
    for row in results:
        groups.setdefault(row.point(), []).append(row)

    summaries = []
    for point, rows in groups.items():
        fnr = float(np.mean([r.fnr for r in rows]))
        fpr = float(np.mean([r.fpr for r in rows]))
        fn_total = sum(r.fn_probes for r in rows)
        fp_total = sum(r.fp_probes for r in rows)
        summaries.append(Summary(
            point=point, trials=len(rows), fnr=fnr, fpr=fpr,
            fnr_se=math.sqrt(fnr * (1 - fnr) / fn_total) if fn_total else 0.0,
            fpr_se=math.sqrt(fpr * (1 - fpr) / fp_total) if fp_total else 0.0,
            enroll_ms=float(np.mean([r.enroll_ms for r in rows])),
            auth_ms=float(np.mean([r.auth_ms for r in rows])),
        ))
    return summaries


@dataclass(frozen=True)
class BaselineComparison:
    N: int
    p_same: float
    secure_error: float
    baseline_error: float

    @property
    def ratio(self):
        if self.baseline_error == 0:
            return 1.0 if self.secure_error == 0 else math.inf
        return self.secure_error / self.baseline_error


def compare_with_baseline(cfg: ExperimentConfig):
    """
    Error rates of the secure system and the insecure baseline on identical template-level
    populations, averaged over trials. Secure rows use the first k, zeta and tau of the grid.
    """
    cfg = replace(cfg, k=cfg.k[:1], zeta=cfg.zeta[:1], tau=cfg.tau[:1])
    secure = {s.point[1:]: s for s in summarize(run_error_experiment(cfg))}
    baseline = {(s.point[1], s.point[6]): s for s in summarize(run_insecure_baseline(cfg))}

    comparisons = []
    for (size, k, m, tau, zeta, p_same), summary in secure.items():
        comparison = BaselineComparison(size, p_same, summary.error_rate, baseline[size, p_same].error_rate)
        logger.info(f'N={size} p_same={p_same}: secure error {comparison.secure_error:.4f}, '
                    f'baseline error {comparison.baseline_error:.4f}, ratio {comparison.ratio:.2f}')
        comparisons.append(comparison)
    return comparisons


def _format(value):
    if value is None:
        return ''
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_results(results, path, include_timings=True):
    """
    Writes results as CSV, one row per BenchResult.
    :param include_timings: if False, timing columns are left empty so that reruns with the same
                            seeds produce identical files
    """
    with open(path, 'w', newline='') as file:
        writer = csv.writer(file, lineterminator='\n')
        writer.writerow(CSV_COLUMNS)
        for result in results:
            row = []
            for column in CSV_COLUMNS:
                if column in TIMING_COLUMNS and not include_timings:
                    row.append('')
                else:
                    row.append(_format(getattr(result, column)))
            writer.writerow(row)
    logger.info(f'Wrote {len(results)} results to {path}.')


def read_results(path):
    """
    :returns list of dicts, one per CSV row, values as strings
    """
    with open(path, 'r', newline='') as file:
        return list(csv.DictReader(file))
