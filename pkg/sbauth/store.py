import logging
import struct
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor

from sbauth import utils
from sbauth.crypto import DIGEST_SIZE
from sbauth.errors import AlreadyEnrolledError, ParameterError, StoreCorruptionError, UnknownIdentityError
from sbauth.population import check_identity

logger = logging.getLogger(__name__)

DEFAULT_CAPACITY = 10_000

# 256-bit digest + 32-bit identity
RECORD_SIZE = DIGEST_SIZE + 4

STORE_MAGIC = b'SBADB1\x00'
STORE_VERSION = 1
_STORE_HEADER = struct.Struct('<7sII')
_SHARD_HEADER = struct.Struct('<IIQ')
_RECORD = struct.Struct(f'<{DIGEST_SIZE}sI')


def _listed(value):
    """
    Map values are a bare identity, or a tuple of identities after a cross-user collision.
    """
    return value if isinstance(value, tuple) else (value,)


class Shard:
    """
    Digest -> identity map for at most capacity identities.
    Many concurrent readers or one writer.
    """
    def __init__(self, capacity=DEFAULT_CAPACITY):
        if capacity < 1:
            raise ParameterError(f'Shard capacity must be positive, got {capacity}.')
        self.capacity = capacity

        self._map = {}
        # concatenated digests per identity, needed for revocation
        self._digests = {}
        self._reserved = 0
        self._lock = utils.ReadWriteLock()

    def is_full(self):
        with self._lock.read_locked():
            return len(self._digests) + self._reserved >= self.capacity

    def reserve(self):
        """
        Claims a slot for an enrollment that is about to be inserted.
        Callers serialize reservations.
        """
        if self.is_full():
            raise ParameterError('Shard is full.')
        self._reserved += 1

    def insert(self, _id, digests, reserved=False):
        """
        Inserts all records of one identity at once; readers never observe a partial enrollment.
        Identical digests of one identity are stored once.
        """
        unique = list(dict.fromkeys(bytes(d) for d in digests))
        with self._lock.write_locked():
            if reserved:
                self._reserved -= 1
            if _id in self._digests:
                raise AlreadyEnrolledError(f'Identity {_id} is already enrolled.')
            if len(self._digests) >= self.capacity:
                raise ParameterError('Shard is full.')
            for digest in unique:
                current = self._map.get(digest)
                if current is None:
                    self._map[digest] = _id
                else:
                    self._map[digest] = _listed(current) + (_id,)
            self._digests[_id] = b''.join(unique)

    def remove(self, _id):
        with self._lock.write_locked():
            blob = self._digests.pop(_id, None)
            if blob is None:
                raise UnknownIdentityError(f'Identity {_id} is not enrolled in this shard.')
            for offset in range(0, len(blob), DIGEST_SIZE):
                digest = blob[offset:offset + DIGEST_SIZE]
                remaining = tuple(i for i in _listed(self._map[digest]) if i != _id)
                if not remaining:
                    del self._map[digest]
                elif len(remaining) == 1:
                    self._map[digest] = remaining[0]
                else:
                    self._map[digest] = remaining

    def lookup(self, digests):
        """
        One map lookup per digest. Every identity listed under a digest gains one vote.
        :returns (Counter of identity -> tally, number of lookups)
        """
        tallies = Counter()
        lookups = 0
        with self._lock.read_locked():
            get = self._map.get
            for digest in digests:
                lookups += 1
                value = get(digest)
                if value is None:
                    continue
                if isinstance(value, tuple):
                    tallies.update(value)
                else:
                    tallies[value] += 1
        return tallies, lookups

    @property
    def enrolled(self):
        with self._lock.read_locked():
            return set(self._digests)

    def digests_of(self, _id):
        with self._lock.read_locked():
            blob = self._digests.get(_id)
        if blob is None:
            raise UnknownIdentityError(f'Identity {_id} is not enrolled in this shard.')
        return [blob[o:o + DIGEST_SIZE] for o in range(0, len(blob), DIGEST_SIZE)]

    def records(self):
        """
        :returns (digest, identity) pairs sorted by digest bytes then identity
        """
        with self._lock.read_locked():
            pairs = [(digest, i) for digest, value in self._map.items() for i in _listed(value)]
        pairs.sort()
        return pairs

    def record_count(self):
        with self._lock.read_locked():
            return sum(len(blob) for blob in self._digests.values()) // DIGEST_SIZE

    def __len__(self):
        return len(self._digests)


class ShardedStore:
    """
    Identities are assigned to shards in enrollment order; a new shard is opened once the
    last one is full. Lookups fan out to all shards in parallel.
    """
    def __init__(self, capacity=DEFAULT_CAPACITY, max_workers=None):
        if capacity < 1:
            raise ParameterError(f'Shard capacity must be positive, got {capacity}.')
        self.capacity = capacity
        self.shards = []
        self.assignment = {}
        # assigned identities whose records are not inserted yet
        self._pending = set()

        self._structure_lock = threading.Lock()
        self._counter_lock = threading.Lock()
        self._lookup_count = 0

        self._max_workers = max_workers
        self._executor = None

    def _open_shard(self):
        self.shards.append(Shard(self.capacity))
        logger.debug(f'Opened shard {len(self.shards) - 1} (capacity {self.capacity}).')

    def enroll_digests(self, _id, digests):
        """
        Inserts (digest, id) records for one identity into its assigned shard.
        """
        _id = check_identity(_id)
        with self._structure_lock:
            if _id in self.assignment:
                raise AlreadyEnrolledError(f'Identity {_id} is already enrolled.')
            if not self.shards or self.shards[-1].is_full():
                self._open_shard()
            index = len(self.shards) - 1
            shard = self.shards[index]
            shard.reserve()
            self.assignment[_id] = index
            self._pending.add(_id)

        try:
            shard.insert(_id, digests, reserved=True)
        except Exception:
            with self._structure_lock:
                self.assignment.pop(_id, None)
                self._pending.discard(_id)
            raise
        with self._structure_lock:
            self._pending.discard(_id)
        logger.debug(f'Enrolled identity {_id} into shard {index}.')

    def revoke(self, _id):
        """
        Removes every record of _id. An enrollment still in progress is refused and left untouched.
        """
        with self._structure_lock:
            if _id in self._pending:
                raise UnknownIdentityError(f'Identity {_id} is still being enrolled.')
            index = self.assignment.get(_id)
            if index is None:
                raise UnknownIdentityError(f'Identity {_id} is not enrolled.')
            self.shards[index].remove(_id)
            del self.assignment[_id]
        logger.debug(f'Revoked identity {_id} from shard {index}.')

    def _get_executor(self):
        if self._executor is None:
            workers = self._max_workers or min(32, max(2, len(self.shards)))
            self._executor = ThreadPoolExecutor(max_workers=workers, thread_name_prefix='shard')
        return self._executor

    def lookup(self, digests):
        """
        Queries every shard with all digests and merges the tallies.
        :returns (Counter of identity -> tally, lookups per shard)
        """
        digests = [bytes(d) for d in digests]
        shards = list(self.shards)
        if len(shards) > 1:
            results = list(self._get_executor().map(lambda shard: shard.lookup(digests), shards))
        else:
            results = [shard.lookup(digests) for shard in shards]

        tallies = Counter()
        lookups = [count for _, count in results]
        for shard_tallies, _ in results:
            tallies.update(shard_tallies)
        with self._counter_lock:
            self._lookup_count += sum(lookups)
        return tallies, lookups

    @property
    def lookup_count(self):
        """
        total map lookups since creation or the last reset
        """
        with self._counter_lock:
            return self._lookup_count

    def reset_lookup_count(self):
        with self._counter_lock:
            self._lookup_count = 0

    def is_enrolled(self, _id):
        return _id in self.assignment

    def identities(self):
        return set(self.assignment)

    def enrolled_count(self):
        return len(self.assignment)

    def shard_count(self):
        return len(self.shards)

    def record_count(self):
        return sum(shard.record_count() for shard in self.shards)

    def payload_bytes(self):
        return self.record_count() * RECORD_SIZE

    def digests_of(self, _id):
        index = self.assignment.get(_id)
        if index is None:
            raise UnknownIdentityError(f'Identity {_id} is not enrolled.')
        return self.shards[index].digests_of(_id)

    def records_of(self, _id):
        """
        Scans every shard for records mapping to _id.
        """
        return [(digest, i) for shard in self.shards for digest, i in shard.records() if i == _id]

    def copy(self):
        clone = ShardedStore(self.capacity, max_workers=self._max_workers)
        for shard in self.shards:
            clone._open_shard()
            target = clone.shards[-1]
            with shard._lock.read_locked():
                target._map = dict(shard._map)
                target._digests = dict(shard._digests)
        clone.assignment = dict(self.assignment)
        return clone

    def close(self):
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def __eq__(self, other):
        if not isinstance(other, ShardedStore):
            return NotImplemented
        return self.assignment == other.assignment and len(self.shards) == len(other.shards) \
            and all(a.records() == b.records() for a, b in zip(self.shards, other.shards))

    __hash__ = None

    def __repr__(self):
        return f'ShardedStore(shards={len(self.shards)}, identities={len(self.assignment)})'


def save_store(store: ShardedStore, path):
    """
    Writes the store in canonical form: records of every shard sorted by digest then identity.
    """
    with open(path, 'wb') as file:
        file.write(_STORE_HEADER.pack(STORE_MAGIC, STORE_VERSION, store.shard_count()))
        for shard in store.shards:
            records = shard.records()
            file.write(_SHARD_HEADER.pack(shard.capacity, len(shard), len(records)))
            file.write(b''.join(_RECORD.pack(digest, _id) for digest, _id in records))
    logger.info(f'Saved store with {store.shard_count()} shards and {store.enrolled_count()} identities to {path}.')


def load_store(path, max_workers=None):
    with open(path, 'rb') as file:
        data = file.read()

    if len(data) < _STORE_HEADER.size:
        raise StoreCorruptionError(f'{path}: truncated header.')
    magic, version, shard_count = _STORE_HEADER.unpack_from(data, 0)
    if magic != STORE_MAGIC:
        raise StoreCorruptionError(f'{path}: bad magic {magic!r}.')
    if version != STORE_VERSION:
        raise StoreCorruptionError(f'{path}: unsupported version {version}.')

    store = None
    offset = _STORE_HEADER.size
    for index in range(shard_count):
        if len(data) < offset + _SHARD_HEADER.size:
            raise StoreCorruptionError(f'{path}: truncated header of shard {index}.')
        capacity, id_count, record_count = _SHARD_HEADER.unpack_from(data, offset)
        offset += _SHARD_HEADER.size
        if capacity < 1:
            raise StoreCorruptionError(f'{path}: shard {index} has capacity 0.')
        if id_count > capacity:
            raise StoreCorruptionError(f'{path}: shard {index} declares {id_count} identities, '
                                       f'capacity is {capacity}.')
        if store is None:
            store = ShardedStore(capacity, max_workers=max_workers)

        end = offset + record_count * RECORD_SIZE
        if len(data) < end:
            raise StoreCorruptionError(f'{path}: shard {index} declares {record_count} records, file is truncated.')

        per_id = {}
        for digest, _id in _RECORD.iter_unpack(data[offset:end]):
            per_id.setdefault(_id, []).append(digest)
        offset = end

        if len(per_id) != id_count:
            raise StoreCorruptionError(f'{path}: shard {index} declares {id_count} identities, '
                                       f'records name {len(per_id)}.')

        shard = Shard(capacity)
        for _id, digests in per_id.items():
            if _id in store.assignment:
                raise StoreCorruptionError(f'{path}: identity {_id} appears in two shards.')
            shard.insert(_id, digests)
            store.assignment[_id] = index
        store.shards.append(shard)

    if offset != len(data):
        raise StoreCorruptionError(f'{path}: {len(data) - offset} trailing bytes.')
    if store is None:
        store = ShardedStore(max_workers=max_workers)
    logger.info(f'Loaded store with {store.shard_count()} shards and {store.enrolled_count()} identities from {path}.')
    return store
