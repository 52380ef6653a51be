import asyncio
import functools
import logging

from sbauth import engine
from sbauth.crypto import DIGEST_SIZE, KeyProvider
from sbauth.errors import PayloadTooLargeError, ProtocolError, SbauthError
from sbauth.sampling import SubsetPlan
from sbauth.store import ShardedStore
from sbauth.transport import FrameTransport, NotConnectedError
from sbauth.wire import PayloadKind, WireRequest, WireResponse, WireStatus

logger = logging.getLogger(__name__)


class AuthService:
    """
    Answers wire requests with engine calls on one store.
    Engine calls run in an executor, so concurrent connections never block the event loop.

    :param accept_bits: if False (digest-only mode) the scanner has to hash and requests
                        carrying bit strings are refused
    """
    def __init__(self, store: ShardedStore, plan: SubsetPlan, key: KeyProvider = None, accept_bits=False,
                 executor=None):
        self.store = store
        self.plan = plan
        self.key = key
        self.accept_bits = accept_bits
        self._executor = executor

    async def _run(self, function, *args):
        loop = asyncio.get_running_loop()
        return await loop.run_in_executor(self._executor, functools.partial(function, *args))

    def _check_payload(self, request: WireRequest):
        if request.kind == PayloadKind.BITS and not self.accept_bits:
            raise ProtocolError('Bit strings are refused in digest-only mode.')
        if request.kind == PayloadKind.DIGESTS and len(request.payload) != self.plan.m * DIGEST_SIZE:
            raise ProtocolError(f'Expected {self.plan.m} digests, got {len(request.payload) / DIGEST_SIZE:g}.')

    async def _command_enroll(self, request: WireRequest):
        self._check_payload(request)
        if request.kind == PayloadKind.BITS:
            v = request.get_bits(self.plan.n)
            await self._run(engine.enroll, self.store, request.id, v, self.plan, None, self.key)
        else:
            await self._run(engine.enroll_digests, self.store, request.id, request.get_digests(), self.plan)
        logger.info(f'Enrolled identity {request.id}.')
        return WireResponse(WireStatus.OK, request.id)

    async def _command_auth(self, request: WireRequest):
        self._check_payload(request)
        if request.kind == PayloadKind.BITS:
            v = request.get_bits(self.plan.n)
            result = await self._run(engine.authenticate, self.store, v, self.plan, None, self.key)
        else:
            result = await self._run(engine.authenticate_digests, self.store, request.get_digests(), self.plan)
        return WireResponse.from_match(result)

    async def _command_revoke(self, request: WireRequest):
        await self._run(engine.revoke, self.store, request.id)
        return WireResponse(WireStatus.OK, request.id)

    async def _command_status(self, request: WireRequest):
        return WireResponse.info(enrolled=self.store.enrolled_count(), shards=self.store.shard_count(),
                                 m=self.plan.m, k=self.plan.k, n=self.plan.n,
                                 mode='bits' if self.accept_bits else 'digests')

    async def handle(self, request: WireRequest) -> WireResponse:
        """
        Runs one request. Errors become error responses.
        """
        try:
            return await getattr(self, f'_command_{request.op.value}')(request)
        except SbauthError as err:
            logger.warning(f'{request.op.value} failed: {err}')
            return WireResponse.error(f'{type(err).__name__}: {err}')
        except Exception as err:
            logger.exception(err)
            return WireResponse.error('InternalError: request failed.')

    async def handle_record(self, data) -> WireResponse:
        try:
            request = WireRequest.from_bytes(data)
        except ProtocolError as err:
            logger.warning(f'Malformed request "{err}" - REJECT')
            return WireResponse.error(f'ProtocolError: {err}')
        logger.debug(f'request {request}')
        response = await self.handle(request)
        logger.debug(f'response {response}')
        return response

    async def serve_connection(self, transport: FrameTransport):
        """
        Answers requests on one connection until the peer disconnects.
        An oversized frame is answered with an error and ends the connection,
        the rest of the stream cannot be framed anymore.
        """
        peer = transport.get_extra_info('peername')
        logger.info(f'Connection from {peer}.')
        try:
            while True:
                try:
                    data = await transport.read()
                except PayloadTooLargeError as err:
                    logger.warning(f'{peer}: {err}')
                    await transport.write(WireResponse.error(f'PayloadTooLargeError: {err}'))
                    break
                await transport.write(await self.handle_record(data))
        except NotConnectedError:
            pass
        finally:
            await transport.close()
            logger.info(f'Connection from {peer} closed.')
