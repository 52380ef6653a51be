import abc
import hashlib
import logging
import secrets
import struct
import threading

from cryptography.hazmat.primitives import hashes, hmac

from sbauth.errors import KeyNotProvisionedError, ParameterError
from sbauth.sampling import HashMode

logger = logging.getLogger(__name__)

DIGEST_SIZE = 32
KEY_SIZE = 32

_U32 = struct.Struct('<I')
_INDEXED = struct.Struct('<II')


def encode_packed(subset_index, k, packed, domain_separation=True):
    """
    Preimage layout: [u32 subset index] u32 k, then the k bits packed most-significant-bit-first.
    :param packed: bytes of the packed substring
    """
    if domain_separation:
        return _INDEXED.pack(subset_index, k) + bytes(packed)
    return _U32.pack(k) + bytes(packed)


def encode_preimage(subset_index, w, domain_separation=True):
    """
    Canonical, injective byte encoding of substring w of subset subset_index.
    :param w: BitString of length k
    """
    return encode_packed(subset_index, len(w), w.pack(), domain_separation=domain_separation)


def ch_hash(preimage) -> bytes:
    """
    SHA3-256, the full 32-byte digest.
    """
    return hashlib.sha3_256(preimage).digest()


def hmac_sha3_256(key, data) -> bytes:
    mac = hmac.HMAC(bytes(key), hashes.SHA3_256())
    mac.update(bytes(data))
    return mac.finalize()


class KeyProvider(abc.ABC):
    """
    Holds a PRF key and only exposes evaluation. Stands in for a trusted execution environment.
    """
    @abc.abstractmethod
    def is_provisioned(self) -> bool:
        pass

    @abc.abstractmethod
    def evaluate(self, preimage) -> bytes:
        """
        :returns 32-byte keyed digest of preimage
        Raises KeyNotProvisionedError if no key was provisioned.
        """


class InMemoryKeyProvider(KeyProvider):
    """
    HMAC-SHA3-256 with a key kept in process memory.
    Provisioning is serialized, evaluation may run concurrently.
    """
    def __init__(self, key=None):
        self.__key = None
        self._provision_lock = threading.Lock()
        if key is not None:
            self.provision(key)

    def provision(self, key=None):
        """
        :param key: 32 bytes, a random key is generated if None
        """
        if key is None:
            key = secrets.token_bytes(KEY_SIZE)
        if len(key) != KEY_SIZE:
            raise ParameterError(f'PRF keys must have {KEY_SIZE} bytes, got {len(key)}.')
        with self._provision_lock:
            self.__key = bytes(key)
        logger.info('PRF key provisioned.')

    def is_provisioned(self):
        return self.__key is not None

    def evaluate(self, preimage):
        key = self.__key
        if key is None:
            raise KeyNotProvisionedError('PRF key has not been provisioned.')
        return hmac_sha3_256(key, preimage)

    def __repr__(self):
        return f'InMemoryKeyProvider(provisioned={self.is_provisioned()})'


def prf_eval(key: KeyProvider, preimage) -> bytes:
    if key is None:
        raise KeyNotProvisionedError('Keyed mode requires a key provider.')
    return key.evaluate(preimage)


def make_hasher(hash_mode, key: KeyProvider = None):
    """
    :returns function mapping a preimage to its 32-byte digest for the given mode
    """
    hash_mode = HashMode.from_arg(hash_mode)
    if hash_mode == HashMode.PLAIN_HASH:
        return ch_hash
    if key is None or not key.is_provisioned():
        raise KeyNotProvisionedError('Keyed mode requires a provisioned key provider.')
    return key.evaluate
