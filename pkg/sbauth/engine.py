import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from sbauth import crypto
from sbauth.bits import BitString
from sbauth.crypto import DIGEST_SIZE, KeyProvider
from sbauth.errors import AlreadyEnrolledError, DimensionMismatchError, ParameterError
from sbauth.sampling import SubsetPlan
from sbauth.store import ShardedStore

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MatchResult:
    """
    Outcome of one authentication. id is None when the query was rejected.
    """
    id: Optional[int]
    count: int
    counts: dict = field(default_factory=dict, compare=False)
    lookups: tuple = field(default=(), compare=False)

    @property
    def matched(self):
        return self.id is not None

    def __str__(self):
        if self.matched:
            return f'MATCH {self.id} ({self.count})'
        return 'REJECT'


def derive_digests(v: BitString, plan: SubsetPlan, hash_mode=None, key: KeyProvider = None,
                   domain_separation=None):
    """
    Hashes each substring of v selected by the plan.

    :param hash_mode: defaults to the mode of the plan parameters
    :param key: key provider, required in keyed mode
    :returns list of m 32-byte digests
    """
    if len(v) != plan.n:
        raise DimensionMismatchError(f'Bit string has length {len(v)}, plan expects n={plan.n}.')
    if hash_mode is None:
        hash_mode = plan.params.hash_mode
    if domain_separation is None:
        domain_separation = plan.params.domain_separation

    hasher = crypto.make_hasher(hash_mode, key)
    packed = np.packbits(v.bits[plan.index_matrix], axis=1)
    k = plan.k
    return [hasher(crypto.encode_packed(i, k, row.tobytes(), domain_separation))
            for i, row in enumerate(packed)]


def _check_digests(digests, plan):
    if len(digests) != plan.m:
        raise DimensionMismatchError(f'Expected {plan.m} digests, got {len(digests)}.')
    for digest in digests:
        if len(digest) != DIGEST_SIZE:
            raise ParameterError(f'Digests must have {DIGEST_SIZE} bytes, got {len(digest)}.')


def enroll_digests(store: ShardedStore, _id, digests, plan: SubsetPlan):
    _check_digests(digests, plan)
    store.enroll_digests(_id, digests)


def enroll(store: ShardedStore, _id, v: BitString, plan: SubsetPlan, hash_mode=None, key: KeyProvider = None):
    """
    Derives the m digests of v and stores (digest, id) for each of them.
    Raises AlreadyEnrolledError if _id is enrolled.
    """
    if store.is_enrolled(_id):
        raise AlreadyEnrolledError(f'Identity {_id} is already enrolled.')
    enroll_digests(store, _id, derive_digests(v, plan, hash_mode, key), plan)
    logger.debug(f'Enrolled identity {_id}.')


def decide(tallies, tau, lookups=()):
    """
    Unique maximal tally of at least tau wins, anything else is rejected.
    """
    counts = dict(tallies)
    if not counts:
        return MatchResult(None, 0, counts, tuple(lookups))
    best = max(counts.values())
    winners = [i for i, c in counts.items() if c == best]
    if best >= tau and len(winners) == 1:
        return MatchResult(winners[0], best, counts, tuple(lookups))
    return MatchResult(None, best, counts, tuple(lookups))


def authenticate_digests(store: ShardedStore, digests, plan: SubsetPlan, tau=None):
    _check_digests(digests, plan)
    if tau is None:
        tau = plan.params.tau
    tallies, lookups = store.lookup(digests)
    return decide(tallies, tau, lookups)


def authenticate(store: ShardedStore, v: BitString, plan: SubsetPlan, hash_mode=None, key: KeyProvider = None,
                 tau=None) -> MatchResult:
    """
    Looks up the m digests of v in every shard and counts matches per identity.
    :param tau: threshold, defaults to the plan parameters
    """
    result = authenticate_digests(store, derive_digests(v, plan, hash_mode, key), plan, tau)
    logger.debug(f'Authentication: {result}')
    return result


def revoke(store: ShardedStore, _id):
    """
    Removes every record of _id. Raises UnknownIdentityError if _id is not enrolled.
    """
    store.revoke(_id)
    logger.info(f'Revoked identity {_id}.')
