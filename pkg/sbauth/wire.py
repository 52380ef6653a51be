import enum
import logging
import struct

from crc8 import crc8

from sbauth.bits import BitString
from sbauth.crypto import DIGEST_SIZE
from sbauth.engine import MatchResult
from sbauth.errors import ParameterError, ProtocolError
from sbauth.population import check_identity

logger = logging.getLogger(__name__)

# u32 big endian body length in front of every record
LENGTH_PREFIX = struct.Struct('>I')

# 250K digests as hex fit comfortably
DEFAULT_MAX_FRAME_SIZE = 1 << 25

_SEPARATOR = '\t'
_NONE = '-'


class OpTag(enum.Enum):
    ENROLL = 'enroll'
    AUTH = 'auth'
    REVOKE = 'revoke'
    STATUS = 'status'


class PayloadKind(enum.Enum):
    NONE = '-'
    BITS = 'bits'
    DIGESTS = 'digests'


class WireStatus(enum.Enum):
    OK = 'OK'
    MATCH = 'MATCH'
    REJECT = 'REJECT'
    ERROR = 'ERROR'


def _checksum(text):
    crc = crc8()
    crc.update(text.encode('utf-8'))
    return crc.hexdigest()


def _encode_record(fields):
    text = _SEPARATOR.join(fields)
    return f'{text}{_SEPARATOR}{_checksum(text)}'.encode('utf-8')


def _decode_record(data, field_count):
    """
    Splits a record into its fields and verifies the trailing crc8.
    """
    try:
        text = bytes(data).decode('utf-8')
    except UnicodeDecodeError:
        raise ProtocolError('Record is not valid UTF-8.')
    fields = text.split(_SEPARATOR)
    if len(fields) != field_count + 1:
        raise ProtocolError(f'Expected {field_count} fields and a checksum, got {len(fields)} fields.')
    content = text[:text.rfind(_SEPARATOR)]
    if fields[-1].lower() != _checksum(content):
        raise ProtocolError('Checksum mismatch.')
    return fields[:-1]


def _encode_id(_id):
    return _NONE if _id is None else str(_id)


def _decode_id(text):
    if text == _NONE:
        return None
    if not text.isdigit():
        raise ProtocolError(f'Invalid identity "{text}".')
    try:
        return check_identity(int(text))
    except ParameterError as err:
        raise ProtocolError(str(err))


def _enum_field(enum_cls, text, what):
    try:
        return enum_cls(text)
    except ValueError:
        raise ProtocolError(f'Unknown {what} "{text}".')


class WireRequest:
    """
    Text record: op, id, payload kind, payload hex.
    Bit strings are sent packed most-significant-bit-first, digest lists as the concatenation
    of the m digests.
    """
    def __init__(self, op: OpTag, _id=None, kind=PayloadKind.NONE, payload=b''):
        self.op = op
        self.id = _id
        self.kind = kind
        self.payload = bytes(payload)

    @staticmethod
    def enroll(_id, digests=None, bits: BitString = None):
        return WireRequest(OpTag.ENROLL, _id, *WireRequest._payload(digests, bits))

    @staticmethod
    def auth(digests=None, bits: BitString = None):
        return WireRequest(OpTag.AUTH, None, *WireRequest._payload(digests, bits))

    @staticmethod
    def revoke(_id):
        return WireRequest(OpTag.REVOKE, _id)

    @staticmethod
    def status():
        return WireRequest(OpTag.STATUS)

    @staticmethod
    def _payload(digests, bits):
        if (digests is None) == (bits is None):
            raise ValueError('Exactly one of digests and bits is required.')
        if bits is not None:
            return PayloadKind.BITS, bits.pack()
        for digest in digests:
            if len(digest) != DIGEST_SIZE:
                raise ValueError(f'Digests must have {DIGEST_SIZE} bytes, got {len(digest)}.')
        return PayloadKind.DIGESTS, b''.join(digests)

    def get_digests(self):
        if self.kind != PayloadKind.DIGESTS:
            raise ProtocolError(f'Request carries {self.kind.value}, not digests.')
        if len(self.payload) % DIGEST_SIZE:
            raise ProtocolError(f'Digest payload of {len(self.payload)} bytes is not a multiple of {DIGEST_SIZE}.')
        return [self.payload[o:o + DIGEST_SIZE] for o in range(0, len(self.payload), DIGEST_SIZE)]

    def get_bits(self, length):
        if self.kind != PayloadKind.BITS:
            raise ProtocolError(f'Request carries {self.kind.value}, not bits.')
        try:
            return BitString.unpack(self.payload, length)
        except ParameterError as err:
            raise ProtocolError(str(err))

    def __bytes__(self):
        return _encode_record([self.op.value, _encode_id(self.id), self.kind.value, self.payload.hex()])

    @staticmethod
    def from_bytes(data):
        op, _id, kind, payload = _decode_record(data, 4)
        try:
            raw = bytes.fromhex(payload)
        except ValueError:
            raise ProtocolError('Payload is not valid hex.')
        request = WireRequest(_enum_field(OpTag, op, 'op'), _decode_id(_id),
                              _enum_field(PayloadKind, kind, 'payload kind'), raw)
        if request.op in (OpTag.ENROLL, OpTag.REVOKE) and request.id is None:
            raise ProtocolError(f'{request.op.value} requires an identity.')
        if request.op in (OpTag.ENROLL, OpTag.AUTH) and request.kind == PayloadKind.NONE:
            raise ProtocolError(f'{request.op.value} requires a payload.')
        return request

    def __eq__(self, other):
        if not isinstance(other, WireRequest):
            return NotImplemented
        return (self.op, self.id, self.kind, self.payload) == (other.op, other.id, other.kind, other.payload)

    def __str__(self):
        return f'{self.op.value} id={_encode_id(self.id)} {self.kind.value} ({len(self.payload)} bytes)'


class WireResponse:
    """
    Text record: status, matched id, match count, detail.
    detail holds key=value pairs for status requests and the message of errors.
    """
    def __init__(self, status: WireStatus, _id=None, count=0, detail=''):
        self.status = status
        self.id = _id
        self.count = count
        self.detail = ' '.join(str(detail).split())

    @staticmethod
    def from_match(result: MatchResult):
        if result.matched:
            return WireResponse(WireStatus.MATCH, result.id, result.count)
        return WireResponse(WireStatus.REJECT, None, result.count)

    @staticmethod
    def error(message):
        return WireResponse(WireStatus.ERROR, detail=message)

    @staticmethod
    def info(**values):
        return WireResponse(WireStatus.OK, detail=','.join(f'{key}={value}' for key, value in values.items()))

    def to_match(self) -> MatchResult:
        if self.status not in (WireStatus.MATCH, WireStatus.REJECT):
            raise ProtocolError(f'{self.status.value} response carries no match result.')
        return MatchResult(self.id if self.status == WireStatus.MATCH else None, self.count)

    def get_info(self):
        """
        :returns dict of the key=value pairs in detail
        """
        info = {}
        for item in self.detail.split(','):
            if '=' in item:
                key, value = item.split('=', 1)
                info[key] = value
        return info

    def is_error(self):
        return self.status == WireStatus.ERROR

    def __bytes__(self):
        return _encode_record([self.status.value, _encode_id(self.id), str(self.count), self.detail])

    @staticmethod
    def from_bytes(data):
        status, _id, count, detail = _decode_record(data, 4)
        if not count.isdigit():
            raise ProtocolError(f'Invalid match count "{count}".')
        return WireResponse(_enum_field(WireStatus, status, 'status'), _decode_id(_id), int(count), detail)

    def __eq__(self, other):
        if not isinstance(other, WireResponse):
            return NotImplemented
        return (self.status, self.id, self.count, self.detail) == (other.status, other.id, other.count, other.detail)

    def __str__(self):
        text = f'{self.status.value} id={_encode_id(self.id)} count={self.count}'
        if self.detail:
            text += f' {self.detail}'
        return text


def parse_record(data):
    """
    Parses a request or a response, decided by the first field.
    """
    head = bytes(data).split(_SEPARATOR.encode('utf-8'), 1)[0].decode('utf-8', errors='replace')
    if head in {status.value for status in WireStatus}:
        return WireResponse.from_bytes(data)
    return WireRequest.from_bytes(data)


def frame(body):
    return LENGTH_PREFIX.pack(len(body)) + bytes(body)
