"""Spherical partitioning of directions and the per-partition window.

The sphere of directions is cut into ``n_s`` equal polar bands and ``n_s``
equal azimuth sectors. Partition ``(i, j)`` covers
``theta in [i*pi/n_s, (i+1)*pi/n_s)`` and
``phi in [-pi + 2*pi*j/n_s, -pi + 2*pi*(j+1)/n_s)``; the last row/column is
closed. The azimuth seam ``phi = +-pi`` is reported as ``-pi`` so it always
falls in column 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import InvalidArgumentError, SingularDirectionError, UndefinedDirectionError
from .field import as_points

DEFAULT_NS = 32
DEFAULT_DELTA = 0.001
DEFAULT_MESSAGE_BITS = 16


class SphericalCoord(NamedTuple):
    r: float
    theta: float
    phi: float


class PartitionIndex(NamedTuple):
    i: int
    j: int


def parse_message(text: str):
    """Parse a message given as a bit string (``"0101..."``) or MSB-first hex.

    Strings made only of ``0``/``1`` are bit strings; anything else, or a
    ``0x`` prefix, is hex with four bits per digit.
    """
    s = text.strip().replace("_", "")
    if not s:
        raise InvalidArgumentError("empty message")
    if s.lower().startswith("0x"):
        return hex_to_bits(s[2:])
    if set(s) <= {"0", "1"}:
        return tuple(int(c) for c in s)
    return hex_to_bits(s)


def hex_to_bits(h: str):
    try:
        value = int(h, 16)
    except ValueError as exc:
        raise InvalidArgumentError(f"bad hex message {h!r}") from exc
    n = 4 * len(h)
    return tuple((value >> (n - 1 - k)) & 1 for k in range(n))


def bits_to_hex(bits) -> str:
    """MSB-first hex; short tails are zero-padded on the right to a whole digit."""
    bits = [int(b) for b in bits]
    bits += [0] * (-len(bits) % 4)
    value = 0
    for b in bits:
        value = (value << 1) | b
    return format(value, f"0{len(bits) // 4}x") if bits else ""


@dataclass(frozen=True)
class PartitionLayout:
    """Partition grid, embedded message and watermark strength.

    Partition ``(i, j)`` carries ``message[(i * n_s + j) % len(message)]``;
    the message repeats until every partition is used.
    """

    message: tuple
    n_s: int = DEFAULT_NS
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        msg = tuple(int(b) for b in self.message)
        if not msg or any(b not in (0, 1) for b in msg):
            raise InvalidArgumentError("message must be a non-empty bit sequence")
        if int(self.n_s) < 1:
            raise InvalidArgumentError("n_s must be >= 1")
        if not np.isfinite(self.delta) or self.delta < 0:
            raise InvalidArgumentError("delta must be finite and >= 0")
        object.__setattr__(self, "message", msg)
        object.__setattr__(self, "n_s", int(self.n_s))
        object.__setattr__(self, "delta", float(self.delta))

    @classmethod
    def random(cls, n_bits=DEFAULT_MESSAGE_BITS, seed=0, **kwargs):
        rng = np.random.default_rng(seed)
        return cls(tuple(rng.integers(0, 2, n_bits).tolist()), **kwargs)

    @property
    def n_m(self):
        return len(self.message)

    @property
    def message_hex(self):
        return bits_to_hex(self.message)

    def bit_grid(self):
        """``(n_s, n_s)`` int array of embedded bits."""
        idx = np.arange(self.n_s * self.n_s) % self.n_m
        return np.asarray(self.message, dtype=np.int8)[idx].reshape(self.n_s, self.n_s)

    def message_slot(self, i, j):
        """Index into ``message`` carried by partition ``(i, j)``."""
        return (np.asarray(i) * self.n_s + np.asarray(j)) % self.n_m

    def with_delta(self, delta):
        return PartitionLayout(self.message, self.n_s, delta)


def spherical(P):
    """Batched ``(r, theta, phi)`` of ``(n, 3)`` points; origin maps to zeros."""
    r = np.linalg.norm(P, axis=1)
    safe = np.where(r > 0, r, 1.0)
    theta = np.where(r > 0, np.arccos(np.clip(P[:, 2] / safe, -1.0, 1.0)), 0.0)
    phi = np.arctan2(P[:, 1], P[:, 0])
    phi = np.where(phi >= np.pi, -np.pi, phi)
    return r, theta, phi


def cart_to_sph(p):
    P, single = as_points(p)
    r, theta, phi = spherical(P)
    if single:
        return SphericalCoord(float(r[0]), float(theta[0]), float(phi[0]))
    return SphericalCoord(r, theta, phi)


def sph_to_cart(s):
    r, theta, phi = (np.asarray(v, dtype=np.float64) for v in s)
    st = np.sin(theta)
    out = np.stack([r * st * np.cos(phi), r * st * np.sin(phi), r * np.cos(theta)], axis=-1)
    return out


def _cells(theta, phi, n_s):
    i = np.clip(np.floor(theta * n_s / np.pi).astype(np.int64), 0, n_s - 1)
    j = np.clip(np.floor((phi + np.pi) * n_s / (2 * np.pi)).astype(np.int64), 0, n_s - 1)
    return i, j


def _require_direction(r):
    if np.any(r == 0):
        raise UndefinedDirectionError("the origin has no spherical direction")


def partition_of(p, layout: PartitionLayout):
    P, single = as_points(p)
    r, theta, phi = spherical(P)
    _require_direction(r)
    i, j = _cells(theta, phi, layout.n_s)
    if single:
        return PartitionIndex(int(i[0]), int(j[0]))
    return PartitionIndex(i, j)


def bit_of_partition(idx, layout: PartitionLayout):
    i, j = idx
    slot = layout.message_slot(i, j)
    if np.ndim(slot) == 0:
        return layout.message[int(slot)]
    return np.asarray(layout.message, dtype=np.int8)[slot]


class WindowSample(NamedTuple):
    """Per-point partition data used by the deformation."""

    i: np.ndarray
    j: np.ndarray
    bit: np.ndarray
    value: np.ndarray
    grad: np.ndarray | None
    singular: np.ndarray


def window_terms(P, layout: PartitionLayout, order=1):
    """Batched window value (and Cartesian gradient when ``order >= 1``).

    Points at the origin get ``C = 0``; points on the z-axis get the window
    value with a zero gradient. Both are flagged in ``singular`` rather than
    raised, which is what the deformation wants.
    """
    n_s = layout.n_s
    r, theta, phi = spherical(P)
    i, j = _cells(theta, phi, n_s)
    dth = np.pi / n_s
    dph = 2 * np.pi / n_s
    th0 = i * dth
    ph0 = -np.pi + j * dph
    # the cell index and the in-cell coordinate round independently; clip so
    # a point on a cell edge never sees a slightly negative window
    ut = np.clip((theta - th0) / dth, 0.0, 1.0)
    up = np.clip((phi - ph0) / dph, 0.0, 1.0)
    a = ut * (1.0 - ut)
    b = up * (1.0 - up)
    value = 16.0 * layout.delta * a * b
    origin = r == 0
    value = np.where(origin, 0.0, value)
    bits = bit_of_partition((i, j), layout)
    rho = np.hypot(P[:, 0], P[:, 1])
    singular = rho <= 1e-12 * np.maximum(r, 1e-300)
    grad = None
    if order >= 1:
        da = (1.0 - 2.0 * ut) / dth
        db = (1.0 - 2.0 * up) / dph
        dc_dtheta = 16.0 * layout.delta * da * b
        dc_dphi = 16.0 * layout.delta * a * db
        r_s = np.where(origin, 1.0, r)
        rho_s = np.where(singular, 1.0, rho)
        r2 = r_s * r_s
        grad_theta = np.stack([P[:, 0] * P[:, 2] / (r2 * rho_s),
                               P[:, 1] * P[:, 2] / (r2 * rho_s),
                               -rho / r2], axis=1)
        grad_phi = np.stack([-P[:, 1], P[:, 0], np.zeros(len(P))], axis=1) / (rho_s * rho_s)[:, None]
        grad = dc_dtheta[:, None] * grad_theta + dc_dphi[:, None] * grad_phi
        grad[singular | origin] = 0.0
    return WindowSample(i, j, bits, value, grad, singular | origin)


def window(p, layout: PartitionLayout):
    P, single = as_points(p)
    _require_direction(np.linalg.norm(P, axis=1))
    c = window_terms(P, layout, order=0).value
    return float(c[0]) if single else c


def window_gradient(p, layout: PartitionLayout):
    P, single = as_points(p)
    r = np.linalg.norm(P, axis=1)
    _require_direction(r)
    w = window_terms(P, layout, order=1)
    if np.any(w.singular):
        raise SingularDirectionError("window gradient is singular on the z-axis")
    return w.grad[0] if single else w.grad
