import asyncio
import logging
import struct
import time

from sbauth import utils
from sbauth.errors import DatasetFormatError, PayloadTooLargeError
from sbauth.wire import DEFAULT_MAX_FRAME_SIZE, LENGTH_PREFIX, frame, parse_record

logger = logging.getLogger(__name__)

# capture entries: f64 time, i32 size, record
_CAPTURE_HEADER = struct.Struct('<di')


class NotConnectedError(ConnectionResetError):
    pass


class FrameTransport:
    """
    Length prefixed records over an asyncio stream.
    """
    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter,
                 max_frame_size=DEFAULT_MAX_FRAME_SIZE, capture_file=None):
        self._reader = reader
        self._writer = writer
        self._max_frame_size = max_frame_size
        self._capture_file = capture_file

        self._extra_info = {
            'peername': writer.get_extra_info('peername'),
            'sockname': writer.get_extra_info('sockname'),
        }
        self._is_closing = False

    def _capture(self, body):
        if self._capture_file is not None:
            self._capture_file.write(_CAPTURE_HEADER.pack(time.time(), len(body)) + body)

    async def read(self):
        """
        Reads one record.
        Raises NotConnectedError if the peer closed the connection and PayloadTooLargeError
        if the announced size exceeds the maximum frame size.
        :returns record bytes without length prefix
        """
        try:
            prefix = await self._reader.readexactly(LENGTH_PREFIX.size)
        except (asyncio.IncompleteReadError, ConnectionError) as err:
            raise NotConnectedError(f'Connection closed: {err}')
        size, = LENGTH_PREFIX.unpack(prefix)
        if size > self._max_frame_size:
            raise PayloadTooLargeError(f'Frame of {size} bytes exceeds the maximum of {self._max_frame_size}.')

        try:
            body = await self._reader.readexactly(size)
        except (asyncio.IncompleteReadError, ConnectionError) as err:
            raise NotConnectedError(f'Connection closed: {err}')

        self._capture(body)
        logger.debug(f'received {size} bytes from {self._extra_info["peername"]}')
        return body

    async def write(self, record):
        body = bytes(record)
        if len(body) > self._max_frame_size:
            raise PayloadTooLargeError(f'Frame of {len(body)} bytes exceeds the maximum of {self._max_frame_size}.')
        self._capture(body)
        try:
            self._writer.write(frame(body))
            await self._writer.drain()
        except ConnectionError as err:
            logger.error(err)
            raise NotConnectedError(err)

    def get_extra_info(self, name, default=None):
        return self._extra_info.get(name, default)

    def is_closing(self):
        return self._is_closing

    async def close(self):
        if not self._is_closing:
            self._is_closing = True
            self._writer.close()
            try:
                await self._writer.wait_closed()
            except ConnectionError:
                pass


def read_capture(path):
    """
    Parses a capture file written by a transport.
    :returns list of (time, WireRequest or WireResponse)
    """
    entries = []
    with open(path, 'rb') as capture:
        while True:
            header = capture.read(_CAPTURE_HEADER.size)
            if not header:
                break
            if len(header) != _CAPTURE_HEADER.size:
                raise DatasetFormatError(f'{path}: truncated capture entry.')
            _time, size = _CAPTURE_HEADER.unpack(header)
            body = utils.read_exact(capture, size, DatasetFormatError)
            entries.append((_time, parse_record(body)))
    return entries
