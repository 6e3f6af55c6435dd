"""Byte-wise Shamir secret sharing over GF(2^8) (AES polynomial 0x11B)."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Iterable, Sequence

POLY = 0x11B

_EXP = [0] * 510
_LOG = [0] * 256
_v = 1
for _i in range(255):
    _EXP[_i] = _v
    _LOG[_v] = _i
    # multiply by the generator 0x03
    _v ^= (_v << 1) ^ (POLY if _v & 0x80 else 0)
    _v &= 0xFF
for _i in range(255, 510):
    _EXP[_i] = _EXP[_i - 255]
del _v, _i


class ShamirError(ValueError):
    pass


def _mul_row(a: int) -> bytes:
    return bytes(0 if a == 0 or b == 0 else _EXP[_LOG[a] + _LOG[b]] for b in range(256))


_MUL_ROW = [_mul_row(a) for a in range(256)]


def gf_mul(a: int, b: int) -> int:
    if a == 0 or b == 0:
        return 0
    return _EXP[_LOG[a] + _LOG[b]]


def gf_inv(a: int) -> int:
    if a == 0:
        raise ZeroDivisionError("0 has no inverse in GF(256)")
    return _EXP[255 - _LOG[a]]


def gf_div(a: int, b: int) -> int:
    return gf_mul(a, gf_inv(b))


def poly_eval(coeffs: Sequence[int], x: int) -> int:
    """Horner evaluation, coefficients lowest degree first."""
    acc = 0
    for c in reversed(coeffs):
        acc = gf_mul(acc, x) ^ c
    return acc


def lagrange_at(points: Sequence[tuple[int, int]], x0: int = 0) -> int:
    acc = 0
    for j, (xj, yj) in enumerate(points):
        num, den = 1, 1
        for m, (xm, _) in enumerate(points):
            if m != j:
                num = gf_mul(num, x0 ^ xm)
                den = gf_mul(den, xj ^ xm)
        acc ^= gf_mul(yj, gf_div(num, den))
    return acc


@dataclass(frozen=True)
class KeyShare:
    shard_id: int
    x: int
    y: bytes
    threshold: int
    epoch: int = 0


def _coeff_stream(rng_seed: bytes, n: int) -> bytes:
    return hashlib.shake_256(b"verinfer-shamir" + rng_seed).digest(n)


def split_secret(secret: bytes, t: int, n: int, rng_seed: bytes, epoch: int = 0) -> list[KeyShare]:
    """n shares at x = 1..n; any t of them reconstruct ``secret``.

    Polynomial coefficients come from SHAKE-256(rng_seed), so a given seed
    always yields the same shares (simulation needs replayable key material).
    """
    if not 1 <= t <= n <= 255:
        raise ShamirError(f"need 1 <= t <= n <= 255, got t={t}, n={n}")
    rand = _coeff_stream(rng_seed, len(secret) * (t - 1))
    ys = [bytearray(len(secret)) for _ in range(n)]
    for b, s in enumerate(secret):
        coeffs = [s, *rand[b * (t - 1) : (b + 1) * (t - 1)]]
        for i in range(n):
            ys[i][b] = poly_eval(coeffs, i + 1)
    return [KeyShare(i + 1, i + 1, bytes(ys[i]), t, epoch) for i in range(n)]


def _check(shares: Sequence[KeyShare]) -> None:
    if not shares:
        raise ShamirError("no shares")
    if len({s.x for s in shares}) != len(shares):
        raise ShamirError("duplicate share indices")
    if len({s.epoch for s in shares}) != 1:
        raise ShamirError("shares from different key epochs")
    if len({len(s.y) for s in shares}) != 1:
        raise ShamirError("shares of different lengths")
    if any(not 1 <= s.x <= 255 for s in shares):
        raise ShamirError("share index outside GF(256)*")


def lagrange_weights(xs: Sequence[int], x0: int = 0) -> list[int]:
    out = []
    for j, xj in enumerate(xs):
        num, den = 1, 1
        for m, xm in enumerate(xs):
            if m != j:
                num = gf_mul(num, x0 ^ xm)
                den = gf_mul(den, xj ^ xm)
        out.append(gf_div(num, den))
    return out


def interpolate(shares: Sequence[KeyShare]) -> bytes:
    """Raw per-byte interpolation at x=0, with no threshold check."""
    _check(shares)
    weights = lagrange_weights([s.x for s in shares])
    out = bytearray(len(shares[0].y))
    for w, s in zip(weights, shares):
        row = _MUL_ROW[w] if w else None
        if row is None:
            continue
        for b, y in enumerate(s.y):
            out[b] ^= row[y]
    return bytes(out)


def reconstruct(shares: Iterable[KeyShare]) -> bytes:
    shares = list(shares)
    _check(shares)
    t = shares[0].threshold
    if len(shares) < t:
        raise ShamirError(f"{len(shares)} shares below threshold {t}")
    return interpolate(shares[:t])


def _poly_mul_linear(poly: list[int], root: int) -> list[int]:
    """poly * (x + root); subtraction is addition in characteristic 2."""
    out = [0] * (len(poly) + 1)
    for k, c in enumerate(poly):
        out[k + 1] ^= c
        out[k] ^= gf_mul(c, root)
    return out


def consistent_polynomial(shares: Sequence[KeyShare], candidate: bytes) -> list[list[int]]:
    """Per-byte coefficients of a degree < t polynomial that passes through
    every share and through (0, candidate).

    With at most t-1 shares one exists for every candidate, which is the
    no-information property made concrete.
    """
    _check(shares)
    if len(shares) >= shares[0].threshold:
        raise ShamirError("only defined for fewer than t shares")
    out = []
    for b, c in enumerate(candidate):
        pts = [(0, c)] + [(s.x, s.y[b]) for s in shares]
        coeffs = [0] * len(pts)
        for j, (xj, yj) in enumerate(pts):
            basis, den = [1], 1
            for m, (xm, _) in enumerate(pts):
                if m != j:
                    basis = _poly_mul_linear(basis, xm)
                    den = gf_mul(den, xj ^ xm)
            scale = gf_div(yj, den)
            for k, ck in enumerate(basis):
                coeffs[k] ^= gf_mul(ck, scale)
        out.append(coeffs)
    return out
