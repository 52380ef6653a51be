import asyncio
import logging

from sbauth import engine
from sbauth.bits import BitString
from sbauth.crypto import KeyProvider
from sbauth.errors import ProtocolError
from sbauth.protocol import AuthService
from sbauth.sampling import SubsetPlan
from sbauth.transport import FrameTransport
from sbauth.wire import DEFAULT_MAX_FRAME_SIZE, WireRequest, WireResponse

logger = logging.getLogger(__name__)


def parse_bind_address(text, default_port=0):
    """
    :param text: "HOST:PORT", "HOST" or ":PORT"
    :returns (host, port)
    """
    host, sep, port = text.rpartition(':')
    if not sep:
        return text or '127.0.0.1', default_port
    if not port.isdigit() or int(port) > 0xFFFF:
        raise ValueError(f'Invalid port in bind address "{text}".')
    return host or '127.0.0.1', int(port)


async def create_auth_server(service: AuthService, host='127.0.0.1', port=0,
                             max_frame_size=DEFAULT_MAX_FRAME_SIZE, capture_file=None):
    """
    :param service: AuthService answering all connections
    :param port: 0 picks a free port, see bound_address
    :param capture_file: opened binary file recording every incoming and outgoing record
    :returns started asyncio server
    """
    async def client_connected(reader, writer):
        transport = FrameTransport(reader, writer, max_frame_size=max_frame_size, capture_file=capture_file)
        await service.serve_connection(transport)

    server = await asyncio.start_server(client_connected, host, port)
    logger.info(f'Listening on {bound_address(server)} '
                f'({"bit strings accepted" if service.accept_bits else "digest-only"}).')
    return server


def bound_address(server):
    return server.sockets[0].getsockname()[:2]


async def serve_forever(service: AuthService, host, port, max_frame_size=DEFAULT_MAX_FRAME_SIZE, capture_file=None):
    server = await create_auth_server(service, host, port, max_frame_size=max_frame_size,
                                      capture_file=capture_file)
    async with server:
        try:
            await server.serve_forever()
        except asyncio.CancelledError:
            logger.info('Server stopped.')


def client_digests(v: BitString, plan: SubsetPlan, hash_mode=None, key: KeyProvider = None):
    """
    Scanner side hashing: the m digests to send instead of the bit string.
    """
    return engine.derive_digests(v, plan, hash_mode=hash_mode, key=key)


class AuthClient:
    """
    One connection to an authentication server. Requests on a client are sent one at a time.

    :param digest_only: refuse to send bit strings
    """
    def __init__(self, transport: FrameTransport, digest_only=True):
        self._transport = transport
        self.digest_only = digest_only
        self._lock = asyncio.Lock()

    @staticmethod
    async def connect(host, port, max_frame_size=DEFAULT_MAX_FRAME_SIZE, digest_only=True):
        reader, writer = await asyncio.open_connection(host, port)
        return AuthClient(FrameTransport(reader, writer, max_frame_size=max_frame_size), digest_only=digest_only)

    async def request(self, request: WireRequest) -> WireResponse:
        async with self._lock:
            await self._transport.write(request)
            return WireResponse.from_bytes(await self._transport.read())

    def _check_bits(self, bits):
        if bits is not None and self.digest_only:
            raise ProtocolError('Client is in digest-only mode, bit strings are not sent.')

    async def enroll(self, _id, digests=None, bits: BitString = None):
        self._check_bits(bits)
        return await self.request(WireRequest.enroll(_id, digests=digests, bits=bits))

    async def auth(self, digests=None, bits: BitString = None):
        self._check_bits(bits)
        return await self.request(WireRequest.auth(digests=digests, bits=bits))

    async def revoke(self, _id):
        return await self.request(WireRequest.revoke(_id))

    async def status(self):
        """
        :returns dict with enrolled, shards, m, k, n and mode
        """
        response = await self.request(WireRequest.status())
        if response.is_error():
            raise ProtocolError(response.detail)
        return response.get_info()

    async def close(self):
        await self._transport.close()

    async def __aenter__(self):
        return self

    async def __aexit__(self, exc_type, exc_val, exc_tb):
        await self.close()
