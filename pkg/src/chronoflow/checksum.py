"""CRC-32C payload checksums (Castagnoli polynomial, reflected).

The C extension is used when built; the pure-Python path below is the
fallback and the reference for cross-checking the extension.
"""

from __future__ import annotations

_POLY = 0x82F63B78


def _build_table() -> list[int]:
    table = []
    for n in range(256):
        c = n
        for _ in range(8):
            c = (c >> 1) ^ _POLY if c & 1 else c >> 1
        table.append(c)
    return table


_TABLE = _build_table()


def crc32c_py(data: bytes, crc: int = 0) -> int:
    """Byte-at-a-time CRC-32C. Slow; kept as fallback and test reference."""
    table = _TABLE
    crc ^= 0xFFFFFFFF
    for b in data:
        crc = table[(crc ^ b) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFF


try:
    from chronoflow._crc32c import crc32c
except ImportError:  # extension not built; correctness preserved, speed lost
    crc32c = crc32c_py

__all__ = ["crc32c", "crc32c_py"]
