import asyncio
from unittest.mock import AsyncMock, MagicMock

import pytest

from sbauth import engine
from sbauth.crypto import InMemoryKeyProvider
from sbauth.errors import PayloadTooLargeError, ProtocolError
from sbauth.population import PopulationConfig, Session, by_session, generate_population
from sbauth.protocol import AuthService
from sbauth.sampling import HashMode, SystemParams, sample_subsets
from sbauth.server import AuthClient, bound_address, client_digests, create_auth_server, parse_bind_address
from sbauth.store import ShardedStore
from sbauth.transport import FrameTransport, NotConnectedError, read_capture
from sbauth.wire import LENGTH_PREFIX, WireRequest, WireResponse, WireStatus, frame

PLAN = sample_subsets(SystemParams(n=64, k=8, m=20), seed=1)


def _population(count=12, seed=2):
    samples = generate_population(PopulationConfig(count=count, noise=0.01, dimension_or_length=64, seed=seed))
    return by_session(samples, Session.ENROLL), by_session(samples, Session.AUTH)


def _digests(sample):
    return client_digests(sample.payload, PLAN)


async def _serve(service, **kwargs):
    server = await create_auth_server(service, '127.0.0.1', 0, **kwargs)
    host, port = bound_address(server)
    return server, host, port


async def _stop(server):
    server.close()
    await server.wait_closed()


class TestAuthService:
    def test_enroll_auth_revoke(self):
        enroll, auth = _population()
        service = AuthService(ShardedStore(), PLAN)

        async def run():
            response = await service.handle(WireRequest.enroll(0, digests=_digests(enroll[0])))
            assert response.status == WireStatus.OK and response.id == 0
            response = await service.handle(WireRequest.auth(digests=_digests(enroll[0])))
            assert (response.status, response.id, response.count) == (WireStatus.MATCH, 0, 20)
            assert (await service.handle(WireRequest.revoke(0))).status == WireStatus.OK
            response = await service.handle(WireRequest.auth(digests=_digests(enroll[0])))
            assert response.status == WireStatus.REJECT

        asyncio.run(run())

    def test_empty_store_rejects(self):
        enroll, _ = _population()
        service = AuthService(ShardedStore(), PLAN)
        response = asyncio.run(service.handle(WireRequest.auth(digests=_digests(enroll[0]))))
        assert response.status == WireStatus.REJECT and response.id is None

    def test_engine_errors_become_error_responses(self):
        enroll, _ = _population()
        service = AuthService(ShardedStore(), PLAN)

        async def run():
            await service.handle(WireRequest.enroll(1, digests=_digests(enroll[1])))
            duplicate = await service.handle(WireRequest.enroll(1, digests=_digests(enroll[1])))
            assert duplicate.is_error() and duplicate.detail.startswith('AlreadyEnrolledError')
            unknown = await service.handle(WireRequest.revoke(99))
            assert unknown.detail.startswith('UnknownIdentityError')

        asyncio.run(run())

    def test_wrong_digest_count(self):
        enroll, _ = _population()
        service = AuthService(ShardedStore(), PLAN)
        response = asyncio.run(service.handle(WireRequest.auth(digests=_digests(enroll[0])[:19])))
        assert response.is_error()
        assert response.detail == 'ProtocolError: Expected 20 digests, got 19.'

    def test_digest_only_mode_refuses_bits(self):
        enroll, _ = _population()
        service = AuthService(ShardedStore(), PLAN)
        response = asyncio.run(service.handle(WireRequest.enroll(1, bits=enroll[1].payload)))
        assert response.is_error() and 'digest-only' in response.detail
        assert service.store.enrolled_count() == 0

    def test_bits_are_hashed_by_the_server(self):
        enroll, auth = _population()
        key = InMemoryKeyProvider(b'\x05' * 32)
        plan = PLAN.with_params(SystemParams(n=64, k=8, m=20, hash_mode=HashMode.KEYED_PRF))
        service = AuthService(ShardedStore(), plan, key=key, accept_bits=True)

        async def run():
            await service.handle(WireRequest.enroll(4, bits=enroll[4].payload))
            return await service.handle(WireRequest.auth(bits=auth[4].payload))

        assert asyncio.run(run()).id == 4
        assert service.store.digests_of(4) == engine.derive_digests(enroll[4].payload, plan, key=key)

    def test_status(self):
        service = AuthService(ShardedStore(), PLAN)
        response = asyncio.run(service.handle(WireRequest.status()))
        assert response.get_info() == {'enrolled': '0', 'shards': '0', 'm': '20', 'k': '8', 'n': '64',
                                       'mode': 'digests'}

    def test_malformed_record(self):
        response = asyncio.run(AuthService(ShardedStore(), PLAN).handle_record(b'garbage'))
        assert response.is_error() and response.detail.startswith('ProtocolError')

    def test_unexpected_failures_are_not_leaked(self):
        store = MagicMock()
        store.lookup.side_effect = RuntimeError('secret internals')
        service = AuthService(store, PLAN)
        enroll, _ = _population()
        response = asyncio.run(service.handle(WireRequest.auth(digests=_digests(enroll[0]))))
        assert response.detail == 'InternalError: request failed.'


class TestFrameTransport:
    def _transport(self, chunks, max_frame_size=1024):
        reader = MagicMock()
        reader.readexactly = AsyncMock(side_effect=chunks)
        writer = MagicMock()
        writer.drain = AsyncMock()
        writer.wait_closed = AsyncMock()
        writer.get_extra_info.return_value = None
        return FrameTransport(reader, writer, max_frame_size=max_frame_size), writer

    def test_read(self):
        body = bytes(WireRequest.status())
        transport, _ = self._transport([LENGTH_PREFIX.pack(len(body)), body])
        assert asyncio.run(transport.read()) == body

    def test_oversized_frame(self):
        transport, _ = self._transport([LENGTH_PREFIX.pack(1025)])
        with pytest.raises(PayloadTooLargeError):
            asyncio.run(transport.read())

    def test_closed_connection(self):
        transport, _ = self._transport([asyncio.IncompleteReadError(b'', 4)])
        with pytest.raises(NotConnectedError):
            asyncio.run(transport.read())

    def test_write_prefixes_the_length(self):
        transport, writer = self._transport([])
        response = WireResponse(WireStatus.OK, 1)
        asyncio.run(transport.write(response))
        writer.write.assert_called_once_with(frame(bytes(response)))

    def test_close_once(self):
        transport, writer = self._transport([])
        asyncio.run(transport.close())
        asyncio.run(transport.close())
        assert transport.is_closing()
        writer.close.assert_called_once()


class TestServer:
    def test_remote_results_equal_local_results(self):
        enroll, auth = _population(count=15)
        store = ShardedStore(capacity=4)
        reference = ShardedStore(capacity=4)

        async def run():
            server, host, port = await _serve(AuthService(store, PLAN))
            try:
                async with await AuthClient.connect(host, port) as client:
                    for _id in sorted(enroll)[:10]:
                        assert (await client.enroll(_id, digests=_digests(enroll[_id]))).status == WireStatus.OK
                        engine.enroll(reference, _id, enroll[_id].payload, PLAN)
                    await client.revoke(3)
                    engine.revoke(reference, 3)
                    remote = [(await client.auth(digests=_digests(auth[i]))).to_match() for i in sorted(auth)]
                    status = await client.status()
            finally:
                await _stop(server)
            return remote, status

        remote, status = asyncio.run(run())
        local = [engine.authenticate(reference, auth[i].payload, PLAN) for i in sorted(auth)]
        assert remote == local
        assert status['enrolled'] == '9' and status['shards'] == '3'
        assert store == reference

    def test_concurrent_clients(self):
        enroll, _ = _population(count=20)
        store = ShardedStore(capacity=5)

        async def enroll_range(host, port, ids):
            async with await AuthClient.connect(host, port) as client:
                for _id in ids:
                    await client.enroll(_id, digests=_digests(enroll[_id]))

        async def run():
            server, host, port = await _serve(AuthService(store, PLAN))
            try:
                await asyncio.gather(*(enroll_range(host, port, range(i, 20, 4)) for i in range(4)))
            finally:
                await _stop(server)

        asyncio.run(run())
        assert store.enrolled_count() == 20
        assert store.shard_count() == 4

    def test_client_refuses_to_send_bits(self):
        enroll, _ = _population()

        async def run():
            server, host, port = await _serve(AuthService(ShardedStore(), PLAN))
            try:
                async with await AuthClient.connect(host, port) as client:
                    await client.enroll(0, bits=enroll[0].payload)
            finally:
                await _stop(server)

        with pytest.raises(ProtocolError):
            asyncio.run(run())

    def test_oversized_frame_ends_the_connection(self):
        async def run():
            server, host, port = await _serve(AuthService(ShardedStore(), PLAN), max_frame_size=128)
            try:
                reader, writer = await asyncio.open_connection(host, port)
                writer.write(LENGTH_PREFIX.pack(129))
                await writer.drain()
                size, = LENGTH_PREFIX.unpack(await reader.readexactly(LENGTH_PREFIX.size))
                response = WireResponse.from_bytes(await reader.readexactly(size))
                rest = await reader.read()
                writer.close()
            finally:
                await _stop(server)
            return response, rest

        response, rest = asyncio.run(run())
        assert response.is_error() and response.detail.startswith('PayloadTooLargeError')
        assert rest == b''

    def test_capture(self, tmp_path):
        enroll, _ = _population()
        path = tmp_path / 'capture.bin'

        async def run(capture):
            server, host, port = await _serve(AuthService(ShardedStore(), PLAN), capture_file=capture)
            try:
                async with await AuthClient.connect(host, port) as client:
                    await client.enroll(0, digests=_digests(enroll[0]))
                    await client.auth(digests=_digests(enroll[0]))
            finally:
                await _stop(server)

        with open(path, 'wb') as capture:
            asyncio.run(run(capture))

        records = [record for _, record in read_capture(path)]
        assert [type(r) for r in records] == [WireRequest, WireResponse, WireRequest, WireResponse]
        assert records[3].status == WireStatus.MATCH and records[3].id == 0

    def test_truncated_capture(self, tmp_path):
        path = tmp_path / 'capture.bin'
        path.write_bytes(b'\x00' * 5)
        with pytest.raises(ValueError):
            read_capture(path)


@pytest.mark.parametrize('text, expected', [
    ('0.0.0.0:7878', ('0.0.0.0', 7878)),
    (':9000', ('127.0.0.1', 9000)),
    ('localhost', ('localhost', 0)),
])
def test_parse_bind_address(text, expected):
    assert parse_bind_address(text) == expected


def test_parse_bind_address_rejects_bad_ports():
    with pytest.raises(ValueError):
        parse_bind_address('host:99999')
