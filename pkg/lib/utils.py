import hashlib
import itertools
import time
from typing import Iterable, Iterator, Tuple, TypeVar

T = TypeVar("T")


def get_time_ms() -> int:
    return int(round(time.time() * 1000))


def substream_seed(*parts: object) -> int:
    """
    Derive a 63-bit seed from an ordered tuple of identifiers.

    The same parts give the same seed in every process and on every platform.
    """
    key = "/".join(repr(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big") >> 1


def chunked(iterable: Iterable[T], size: int) -> Iterator[Tuple[T, ...]]:
    iterator = iter(iterable)
    while True:
        chunk = tuple(itertools.islice(iterator, size))
        if not chunk:
            return
        yield chunk
