import threading
from contextlib import contextmanager

import numpy as np


@contextmanager
def get_output(path=None, open_flags='wb', default=None):
    """
    Context manager that opens the file if a path was given, otherwise returns default value.
    """
    if path is not None:
        file = open(path, open_flags)
        try:
            yield file
        finally:
            file.close()
    else:
        yield default


def read_exact(file, size, error_cls=EOFError):
    """
    Reads exactly size bytes from a binary file.
    Raises error_cls if the end of file is reached before.
    """
    data = file.read(size)
    if len(data) != size:
        raise error_cls(f'Unexpected end of file, expected {size} bytes, got {len(data)}.')
    return data


def make_rng(seed, *labels):
    """
    Creates a numpy generator from a 64-bit seed.
    Labels split the stream, e.g. make_rng(seed, 'trial', 3) is independent of make_rng(seed, 'trial', 4).
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for label in labels:
        if isinstance(label, str):
            entropy.append(int.from_bytes(label.encode('utf-8')[:8], 'little'))
        else:
            entropy.append(int(label) & 0xFFFFFFFFFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))


class ReadWriteLock:
    """
    Many concurrent readers or one exclusive writer.
    Writers are preferred: once a writer waits, new readers block.
    """
    def __init__(self):
        self._cond = threading.Condition(threading.Lock())
        self._readers = 0
        self._writer = False
        self._writers_waiting = 0

    def acquire_read(self):
        with self._cond:
            while self._writer or self._writers_waiting:
                self._cond.wait()
            self._readers += 1

    def release_read(self):
        with self._cond:
            self._readers -= 1
            if self._readers == 0:
                self._cond.notify_all()

    def acquire_write(self):
        with self._cond:
            self._writers_waiting += 1
            while self._writer or self._readers:
                self._cond.wait()
            self._writers_waiting -= 1
            self._writer = True

    def release_write(self):
        with self._cond:
            self._writer = False
            self._cond.notify_all()

    @contextmanager
    def read_locked(self):
        self.acquire_read()
        try:
            yield
        finally:
            self.release_read()

    @contextmanager
    def write_locked(self):
        self.acquire_write()
        try:
            yield
        finally:
            self.release_write()
