"""ristretto255 group arithmetic in pure Python.

Follows the encode/decode/equality/one-way-map construction of RFC 9496 over
the twisted Edwards curve edwards25519 (extended coordinates, a = -1).
gmpy2.mpz is used for field arithmetic; this code is NOT constant-time and is
meant for desk-scale use only.
"""

from __future__ import annotations

from gmpy2 import mpz, powmod

# Field prime and group order.
P = mpz(2**255 - 19)
ORDER = 2**252 + 27742317777372353535851937790883648493

_ZERO = mpz(0)
_ONE = mpz(1)


def _inv(x: mpz) -> mpz:
    return powmod(x, P - 2, P)


D = (mpz(-121665) * _inv(mpz(121666))) % P
# sqrt(-1), the even (non-negative) root.
SQRT_M1 = mpz(
    19681161376707505956807079304988542015446066515923890162744021073123829784752
)
assert (SQRT_M1 * SQRT_M1) % P == P - 1

_TWO_D = (2 * D) % P


def _is_negative(x: mpz) -> bool:
    return bool(x & 1)


def _abs(x: mpz) -> mpz:
    return P - x if _is_negative(x) else x


def sqrt_ratio_m1(u: mpz, v: mpz) -> tuple[bool, mpz]:
    """Return (was_square, r) with r = sqrt(u/v) or sqrt(SQRT_M1*u/v), r non-negative."""
    v3 = (v * v % P) * v % P
    v7 = (v3 * v3 % P) * v % P
    r = (u * v3 % P) * powmod(u * v7 % P, (P - 5) // 8, P) % P
    check = v * (r * r % P) % P

    u_neg = (P - u) % P
    correct_sign = check == u % P
    flipped_sign = check == u_neg
    flipped_sign_i = check == u_neg * SQRT_M1 % P

    if flipped_sign or flipped_sign_i:
        r = r * SQRT_M1 % P
    return (correct_sign or flipped_sign), _abs(r)


def _sqrt(x: mpz) -> mpz:
    """Non-negative square root; raises if x is not a square."""
    ok, r = sqrt_ratio_m1(x % P, _ONE)
    if not ok:
        raise ValueError("not a square")
    return r


# Constants of the one-way map and encoding (derived, non-negative roots).
ONE_MINUS_D_SQ = (1 - D * D) % P
D_MINUS_ONE_SQ = (D - 1) * (D - 1) % P
SQRT_AD_MINUS_ONE = _sqrt((P - 1) * D % P - 1)
INVSQRT_A_MINUS_D = _inv(_sqrt((P - 1 - D) % P))

# Extended coordinates (X, Y, Z, T) with x = X/Z, y = Y/Z, T = XY/Z.
Point = tuple[mpz, mpz, mpz, mpz]

IDENTITY: Point = (_ZERO, _ONE, _ONE, _ZERO)


def pt_add(p: Point, q: Point) -> Point:
    X1, Y1, Z1, T1 = p
    X2, Y2, Z2, T2 = q
    A = (Y1 - X1) * (Y2 - X2) % P
    B = (Y1 + X1) * (Y2 + X2) % P
    C = T1 * _TWO_D % P * T2 % P
    Dv = 2 * Z1 * Z2 % P
    E = B - A
    F = Dv - C
    G = Dv + C
    H = B + A
    return (E * F % P, G * H % P, F * G % P, E * H % P)


def pt_double(p: Point) -> Point:
    X1, Y1, Z1, _ = p
    A = X1 * X1 % P
    B = Y1 * Y1 % P
    C = 2 * Z1 * Z1 % P
    H = A + B
    E = (H - (X1 + Y1) * (X1 + Y1)) % P
    G = A - B
    F = C + G
    return (E * F % P, G * H % P, F * G % P, E * H % P)


def pt_neg(p: Point) -> Point:
    X, Y, Z, T = p
    return ((P - X) % P, Y, Z, (P - T) % P)


def pt_mul(k: int, p: Point) -> Point:
    """Scalar multiplication, 4-bit fixed window (not constant-time)."""
    k = int(k) % ORDER
    if k == 0 or p == IDENTITY:
        return IDENTITY
    table = [IDENTITY, p]
    for _ in range(14):
        table.append(pt_add(table[-1], p))
    acc = IDENTITY
    started = False
    for shift in range(252, -4, -4):
        if started:
            acc = pt_double(pt_double(pt_double(pt_double(acc))))
        nib = (k >> shift) & 15
        if nib:
            acc = pt_add(acc, table[nib])
            started = True
    return acc


class BasePointTable:
    """Fixed-base comb: T[i][v] = v * 16^i * B, so k*B costs ~64 additions."""

    def __init__(self, base: Point):
        self.tables: list[list[Point]] = []
        cur = base
        for _ in range(64):
            row = [IDENTITY, cur]
            for _ in range(14):
                row.append(pt_add(row[-1], cur))
            self.tables.append(row)
            cur = pt_add(row[-1], cur)  # 16^(i+1) * B

    def mul(self, k: int) -> Point:
        k = int(k) % ORDER
        acc = IDENTITY
        i = 0
        while k:
            nib = k & 15
            if nib:
                acc = pt_add(acc, self.tables[i][nib])
            k >>= 4
            i += 1
        return acc


def encode(p: Point) -> bytes:
    """Canonical 32-byte encoding (RFC 9496 ENCODE)."""
    x0, y0, z0, t0 = p
    u1 = (z0 + y0) * (z0 - y0) % P
    u2 = x0 * y0 % P
    _, invsqrt = sqrt_ratio_m1(_ONE, u1 * u2 % P * u2 % P)
    den1 = invsqrt * u1 % P
    den2 = invsqrt * u2 % P
    z_inv = den1 * den2 % P * t0 % P
    if _is_negative(t0 * z_inv % P):
        x = y0 * SQRT_M1 % P
        y = x0 * SQRT_M1 % P
        den_inv = den1 * INVSQRT_A_MINUS_D % P
    else:
        x = x0
        y = y0
        den_inv = den2
    if _is_negative(x * z_inv % P):
        y = (P - y) % P
    s = _abs(den_inv * ((z0 - y) % P) % P)
    return int(s).to_bytes(32, "little")


def decode(data: bytes) -> Point:
    """Decode a canonical encoding; raises ValueError for invalid inputs."""
    if len(data) != 32:
        raise ValueError("ristretto255 encodings are 32 bytes")
    s = mpz(int.from_bytes(data, "little"))
    if s >= P or _is_negative(s):
        raise ValueError("non-canonical ristretto255 encoding")
    ss = s * s % P
    u1 = (1 - ss) % P
    u2 = (1 + ss) % P
    u2_sqr = u2 * u2 % P
    v = ((P - D) * (u1 * u1 % P) - u2_sqr) % P
    was_square, invsqrt = sqrt_ratio_m1(_ONE, v * u2_sqr % P)
    den_x = invsqrt * u2 % P
    den_y = invsqrt * den_x % P * v % P
    x = _abs(2 * s * den_x % P)
    y = u1 * den_y % P
    t = x * y % P
    if not was_square or _is_negative(t) or y == 0:
        raise ValueError("invalid ristretto255 encoding")
    return (x, y, _ONE, t)


def _map(t: mpz) -> Point:
    """RFC 9496 MAP: field element -> group element."""
    r = SQRT_M1 * (t * t % P) % P
    u = (r + 1) * ONE_MINUS_D_SQ % P
    v = (P - 1 - r * D) % P * ((r + D) % P) % P
    was_square, s = sqrt_ratio_m1(u, v)
    if not was_square:
        s = _abs(s * t % P)
        s = (P - s) % P
        c = r
    else:
        c = P - 1
    n = (c * ((r - 1) % P) % P * D_MINUS_ONE_SQ - v) % P
    w0 = 2 * s * v % P
    w1 = n * SQRT_AD_MINUS_ONE % P
    w2 = (1 - s * s) % P
    w3 = (1 + s * s) % P
    return (w0 * w3 % P, w2 * w1 % P, w1 * w3 % P, w0 * w2 % P)


def from_uniform_bytes(data: bytes) -> Point:
    """Derive a group element from 64 uniform bytes (sum of two MAP outputs)."""
    if len(data) != 64:
        raise ValueError("expected 64 bytes")
    r0 = mpz(int.from_bytes(data[:32], "little") & ((1 << 255) - 1))
    r1 = mpz(int.from_bytes(data[32:], "little") & ((1 << 255) - 1))
    return pt_add(_map(r0), _map(r1))


def _basepoint() -> Point:
    # edwards25519 base point: y = 4/5, x recovered even.
    y = 4 * _inv(mpz(5)) % P
    xx = (y * y - 1) * _inv(D * y * y % P + 1) % P
    x = _sqrt(xx)
    return (x, y, _ONE, x * y % P)


BASEPOINT: Point = _basepoint()

# Interop anchor: the canonical encoding of the group generator.
assert encode(BASEPOINT) == bytes.fromhex(
    "e2f2ae0a6abc4e71a884a961c500515f58e30b6aa582dd8db6a65945e08d2d76"
)
