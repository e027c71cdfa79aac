"""Paillier additively homomorphic encryption with fixed-point vector encoding.

Uses the g = n+1 variant, so encryption is a single modular exponentiation:
Enc(m) = (1 + m*n) * r^n mod n^2. Arbitrary-precision arithmetic is backed
by gmpy2. Randomness comes from an explicitly passed `random.Random`, so
keypairs and ciphertexts are reproducible under a fixed seed.
"""

import hashlib
import math
import random
import struct
from dataclasses import dataclass

import gmpy2
import numpy as np

__all__ = [
    "PaillierPublicKey",
    "PaillierSecretKey",
    "Ciphertext",
    "FixedPointCodec",
    "keygen",
    "encrypt",
    "decrypt",
    "add_cipher",
    "add_plain",
    "mul_plain",
    "encode_vec",
    "decode_vec",
    "ciphertext_to_bytes",
    "ciphertext_from_bytes",
]

_SMALL_PRIMES = [3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67]


def _is_probable_prime(n: int, rng: random.Random, rounds: int = 40) -> bool:
    """Miller-Rabin with `rounds` random bases."""
    if n < 2:
        return False
    for p in _SMALL_PRIMES:
        if n % p == 0:
            return n == p
    d = n - 1
    r = 0
    while d % 2 == 0:
        d //= 2
        r += 1
    for _ in range(rounds):
        a = rng.randrange(2, n - 1)
        x = int(gmpy2.powmod(a, d, n))
        if x in (1, n - 1):
            continue
        for _ in range(r - 1):
            x = int(gmpy2.powmod(x, 2, n))
            if x == n - 1:
                break
        else:
            return False
    return True


def _random_prime(bits: int, rng: random.Random) -> int:
    for _ in range(100000):
        cand = rng.getrandbits(bits) | (1 << (bits - 1)) | 1
        if _is_probable_prime(cand, rng):
            return cand
    raise RuntimeError("prime search exhausted")


@dataclass(frozen=True)
class PaillierPublicKey:
    n: int
    bits: int

    @property
    def n_sq(self) -> int:
        return self.n * self.n

    @property
    def g(self) -> int:
        return self.n + 1

    @property
    def key_id(self) -> str:
        return hashlib.sha256(str(self.n).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class PaillierSecretKey:
    lam: int  # lcm(p-1, q-1)
    mu: int   # (L(g^lam mod n^2))^-1 mod n


@dataclass(frozen=True)
class Ciphertext:
    value: int
    key_id: str


def keygen(bits: int, rng: random.Random):
    """Keypair with an exactly `bits`-bit modulus n = p*q."""
    if bits < 64:
        raise ValueError("key size below 64 bits")
    while True:
        p = _random_prime(bits // 2, rng)
        q = _random_prime(bits - bits // 2, rng)
        if p == q:
            continue
        n = p * q
        if n.bit_length() == bits:
            break
    lam = math.lcm(p - 1, q - 1)
    pk = PaillierPublicKey(n, bits)
    u = int(gmpy2.powmod(pk.g, lam, pk.n_sq))
    mu = int(gmpy2.invert((u - 1) // n, n))
    return pk, PaillierSecretKey(lam, mu)


def encrypt(pk: PaillierPublicKey, m: int, rng: random.Random) -> Ciphertext:
    m = int(m)
    if not 0 <= m < pk.n:
        raise ValueError("plaintext out of range [0, n)")
    while True:
        r = rng.randrange(1, pk.n)
        if math.gcd(r, pk.n) == 1:
            break
    c = (1 + m * pk.n) * gmpy2.powmod(r, pk.n, pk.n_sq) % pk.n_sq
    return Ciphertext(int(c), pk.key_id)


def decrypt(sk: PaillierSecretKey, pk: PaillierPublicKey, c: Ciphertext) -> int:
    if c.key_id != pk.key_id:
        raise ValueError("ciphertext does not belong to this keypair")
    u = int(gmpy2.powmod(c.value, sk.lam, pk.n_sq))
    if (u - 1) % pk.n != 0:
        raise ValueError("decryption failed (corrupt ciphertext or wrong key)")
    return ((u - 1) // pk.n) * sk.mu % pk.n


def _check_key(pk, *cs):
    for c in cs:
        if c.key_id != pk.key_id:
            raise ValueError("ciphertext key mismatch")


def add_cipher(pk: PaillierPublicKey, c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    _check_key(pk, c1, c2)
    return Ciphertext(c1.value * c2.value % pk.n_sq, pk.key_id)


def add_plain(pk: PaillierPublicKey, c: Ciphertext, m: int) -> Ciphertext:
    _check_key(pk, c)
    if not 0 <= m < pk.n:
        raise ValueError("plaintext out of range [0, n)")
    return Ciphertext(c.value * (1 + m * pk.n) % pk.n_sq, pk.key_id)


def mul_plain(pk: PaillierPublicKey, c: Ciphertext, k: int) -> Ciphertext:
    _check_key(pk, c)
    if not 0 <= k < pk.n:
        raise ValueError("scalar out of range [0, n)")
    return Ciphertext(int(gmpy2.powmod(c.value, k, pk.n_sq)), pk.key_id)


@dataclass(frozen=True)
class FixedPointCodec:
    """Signed fixed-point map into Z_n; negatives live in the upper half."""

    n: int
    scale_bits: int = 32

    @property
    def scale(self) -> int:
        return 1 << self.scale_bits

    def encode(self, v: float) -> int:
        q = int(round(float(v) * self.scale))
        if abs(q) >= self.n // 4:
            raise OverflowError("value exceeds fixed-point headroom")
        return q % self.n

    def decode(self, w: int) -> float:
        w = int(w) % self.n
        if w > self.n // 2:
            w -= self.n
        return w / self.scale


def encode_vec(codec: FixedPointCodec, v) -> list:
    return [codec.encode(x) for x in np.asarray(v, dtype=np.float64).ravel()]


def decode_vec(codec: FixedPointCodec, w) -> np.ndarray:
    return np.array([codec.decode(x) for x in w], dtype=np.float64)


def ciphertext_to_bytes(c: Ciphertext) -> bytes:
    """Wire form: 32-bit big-endian byte-length + big-endian magnitude."""
    mag = c.value.to_bytes((c.value.bit_length() + 7) // 8 or 1, "big")
    return struct.pack(">I", len(mag)) + mag


def ciphertext_from_bytes(data: bytes, key_id: str, offset: int = 0):
    """Decode one ciphertext; returns (Ciphertext, next offset)."""
    if len(data) < offset + 4:
        raise ValueError("truncated ciphertext frame")
    (length,) = struct.unpack_from(">I", data, offset)
    end = offset + 4 + length
    if len(data) < end:
        raise ValueError("truncated ciphertext magnitude")
    return Ciphertext(int.from_bytes(data[offset + 4 : end], "big"), key_id), end
