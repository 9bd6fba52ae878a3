"""Counter-based random streams.

Every stochastic routine in the package takes an :class:`RngStream`. A stream
is fully determined by ``(seed, stream_id)`` and its position, so any draw can
be replayed and independent replications can be fanned out across threads by
giving each task its own ``stream_id``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_U64 = 2**64
_TWO_M53 = 2.0**-53


@dataclass
class RngStream:
    """Reproducible stream of uniforms backed by the Philox4x64 generator.

    Parameters
    ----------
    seed : int
        Unsigned 64-bit seed.
    stream_id : int
        Unsigned 64-bit stream index. Streams with different ids are
        statistically independent.

    Notes
    -----
    The Philox key is ``(seed, stream_id)``; the 256-bit block counter starts
    at zero. ``counter`` reports the number of 64-bit words consumed.
    """

    seed: int
    stream_id: int = 0
    _bitgen: np.random.Philox = field(init=False, repr=False)
    _gen: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or not 0 <= int(value) < _U64:
                raise ValueError(f"{name} must be an integer in [0, 2**64), got {value!r}")
        self.seed = int(self.seed)
        self.stream_id = int(self.stream_id)
        self._bitgen = np.random.Philox(key=np.array([self.seed, self.stream_id], dtype=np.uint64))
        self._gen = np.random.Generator(self._bitgen)

    @property
    def counter(self) -> int:
        """Number of 64-bit words drawn so far."""
        st = self._bitgen.state
        c = st["state"]["counter"]
        blocks = sum(int(v) << (64 * i) for i, v in enumerate(c))
        if blocks == 0:
            return 0
        return blocks * 4 - (4 - int(st["buffer_pos"]))

    @property
    def generator(self) -> np.random.Generator:
        """numpy Generator drawing from this same stream."""
        return self._gen

    def uniform(self, n: int | None = None):
        """Draw uniforms strictly inside (0, 1).

        Each uniform consumes exactly one 64-bit word: the top 53 bits are
        mapped to the midpoint grid ``(k + 1/2) / 2**53``.
        """
        size = 1 if n is None else int(n)
        if size < 0:
            raise ValueError("n must be non-negative")
        raw = self._bitgen.random_raw(size)
        u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_M53
        return float(u[0]) if n is None else u

    def exponential(self, n: int | None = None, rate: float = 1.0):
        """Exponential draws by inversion of :meth:`uniform`."""
        return -np.log(self.uniform(n)) / rate

    def normal(self, n: int | None = None):
        """Standard normal draws."""
        return self._gen.standard_normal() if n is None else self._gen.standard_normal(int(n))

    def spawn(self, stream_id: int) -> "RngStream":
        """Fresh stream sharing the seed but with another id."""
        return RngStream(self.seed, stream_id)


def uniform(stream: RngStream, n: int) -> np.ndarray:
    """Return ``n`` uniforms in (0, 1), advancing ``stream.counter`` by ``n``."""
    return stream.uniform(int(n))
