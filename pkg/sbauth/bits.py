import numpy as np

from sbauth.errors import DimensionMismatchError, ParameterError


class BitString:
    """
    Fixed-length bit vector. Bits are held as an immutable uint8 array of 0/1 values,
    packed most-significant-bit-first whenever they are turned into bytes.
    """
    __slots__ = ('_bits',)

    def __init__(self, bits):
        array = np.array(bits, dtype=np.uint8).reshape(-1)
        if array.size == 0:
            raise ParameterError('Bit strings must have a positive length.')
        if np.any(array > 1):
            raise ParameterError('Bit strings may only contain 0 and 1.')
        array.setflags(write=False)
        self._bits = array

    @classmethod
    def from_string(cls, text):
        """
        :param text: e.g. '010101'
        """
        if not text or any(c not in '01' for c in text):
            raise ParameterError(f'Invalid bit string literal "{text}".')
        return cls([int(c) for c in text])

    @classmethod
    def unpack(cls, data, length):
        """
        Inverse of pack().
        :param data: bytes, most significant bit first
        :param length: number of bits
        """
        expected = (length + 7) // 8
        if len(data) != expected:
            raise DimensionMismatchError(f'{length} bits need {expected} bytes, got {len(data)}.')
        bits = np.unpackbits(np.frombuffer(bytes(data), dtype=np.uint8), count=length)
        return cls(bits)

    @classmethod
    def from_hex(cls, text, length):
        try:
            data = bytes.fromhex(text)
        except ValueError:
            raise ParameterError('Invalid hex payload.')
        return cls.unpack(data, length)

    @property
    def bits(self):
        return self._bits

    def pack(self):
        return np.packbits(self._bits).tobytes()

    def to_hex(self):
        return self.pack().hex()

    def substring(self, indices):
        return BitString(self._bits[np.asarray(indices)])

    def complement(self):
        return BitString(1 - self._bits)

    def __len__(self):
        return int(self._bits.size)

    def __getitem__(self, item):
        return int(self._bits[item])

    def __eq__(self, other):
        if not isinstance(other, BitString):
            return NotImplemented
        return np.array_equal(self._bits, other._bits)

    def __hash__(self):
        return hash((len(self), self.pack()))

    def __str__(self):
        if len(self) <= 64:
            return ''.join(str(b) for b in self._bits)
        return f'<{len(self)} bits {self.to_hex()[:16]}...>'

    __repr__ = __str__


class Template:
    """
    Real-valued embedding of a biometric sample.
    """
    __slots__ = ('_coords',)

    def __init__(self, coords):
        array = np.array(coords, dtype=np.float64).reshape(-1)
        if array.size == 0:
            raise ParameterError('Templates must have a positive dimension.')
        if not np.all(np.isfinite(array)):
            raise ParameterError('Template entries must be finite.')
        array.setflags(write=False)
        self._coords = array

    @property
    def coords(self):
        return self._coords

    @property
    def dimension(self):
        return int(self._coords.size)

    def normalized(self):
        norm = np.linalg.norm(self._coords)
        if norm == 0:
            raise ParameterError('Cannot normalize the zero template.')
        return Template(self._coords / norm)

    def __neg__(self):
        return Template(-self._coords)

    def __len__(self):
        return self.dimension

    def __eq__(self, other):
        if not isinstance(other, Template):
            return NotImplemented
        return np.array_equal(self._coords, other._coords)

    def __hash__(self):
        return hash(self._coords.tobytes())

    def __repr__(self):
        return f'Template(d={self.dimension})'
