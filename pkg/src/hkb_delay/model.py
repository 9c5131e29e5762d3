"""Delayed HKB coupled-oscillator model.

State ordering is ``(x1, x2, v1, v2)`` throughout, with ``v = dx/dt``.  Both
couplings share the same delay ``tau``.  All vectorised functions accept
arrays whose trailing axis has length 4 (or 8 for stacked present/delayed
states) and broadcast over leading axes.
"""

from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

# Rayleigh coefficient fitted to human finger-movement data; default value.
BETA_KAY = 0.007905
# Alternative value with transposed digits, kept for comparison runs.
BETA_CAPTION = 0.007095

PARAM_KEYS = ("gamma", "alpha", "beta", "a", "b", "omega", "tau")


class ModeKind(enum.Enum):
    IN_PHASE = "in-phase"
    ANTI_PHASE = "anti-phase"

    @property
    def sign(self) -> int:
        """Sign multiplying ``a*lam*exp(-lam*tau)`` in the characteristic equation."""
        return 1 if self is ModeKind.IN_PHASE else -1

    @property
    def other(self) -> "ModeKind":
        return ModeKind.ANTI_PHASE if self is ModeKind.IN_PHASE else ModeKind.IN_PHASE


@dataclass(frozen=True)
class HkbParams:
    gamma: float = 0.641
    alpha: float = 12.457
    beta: float = BETA_KAY
    a: float = -2.0
    b: float = 1.0
    omega: float = 2.6 * math.pi
    tau: float = 0.0

    def __post_init__(self):
        for key in PARAM_KEYS:
            value = getattr(self, key)
            if not math.isfinite(value):
                raise ValueError(f"parameter {key} must be finite, got {value}")
        if self.omega <= 0:
            raise ValueError("omega must be positive")
        if self.tau < 0:
            raise ValueError("tau must be non-negative")

    def replace(self, **changes) -> "HkbParams":
        return dataclasses.replace(self, **changes)

    def as_dict(self) -> dict[str, float]:
        return {key: float(getattr(self, key)) for key in PARAM_KEYS}

    def to_config(self) -> str:
        return "".join(f"{key} = {getattr(self, key)!r}\n" for key in PARAM_KEYS)

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> "HkbParams":
        unknown = set(values) - set(PARAM_KEYS)
        if unknown:
            raise KeyError(f"unknown parameter keys: {sorted(unknown)}")
        return cls(**{key: float(val) for key, val in values.items()})

    @classmethod
    def from_config(cls, text: str) -> "HkbParams":
        """Parse ``key = value`` lines; blank lines and ``#`` comments are ignored."""
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected 'key = value'")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
        return cls.from_mapping(values)


@dataclass(frozen=True)
class LinearParts:
    A0: np.ndarray
    A1: np.ndarray


def rhs_full(now, delayed, p: HkbParams) -> np.ndarray:
    """Right-hand side of the first-order delayed HKB system."""
    now = np.asarray(now)
    delayed = np.asarray(delayed)
    x1, x2, v1, v2 = (now[..., k] for k in range(4))
    y1, y2, u1, u2 = (delayed[..., k] for k in range(4))
    w2 = p.omega * p.omega
    acc1 = ((p.gamma - p.alpha * x1 * x1 - p.beta * v1 * v1) * v1
            + (p.a + p.b * (x1 - y2) ** 2) * (v1 - u2) - w2 * x1)
    acc2 = ((p.gamma - p.alpha * x2 * x2 - p.beta * v2 * v2) * v2
            + (p.a + p.b * (x2 - y1) ** 2) * (v2 - u1) - w2 * x2)
    return np.stack([v1, v2, acc1, acc2], axis=-1)


def rhs_derivatives(now, delayed, p: HkbParams) -> tuple[np.ndarray, np.ndarray]:
    """Jacobians of :func:`rhs_full` with respect to the present and delayed state.

    Returns two arrays of shape ``(..., 4, 4)``.
    """
    now = np.asarray(now)
    delayed = np.asarray(delayed)
    x1, x2, v1, v2 = (now[..., k] for k in range(4))
    y1, y2, u1, u2 = (delayed[..., k] for k in range(4))
    shape = np.broadcast_shapes(now.shape, delayed.shape)[:-1] + (4, 4)
    jn = np.zeros(shape, dtype=np.result_type(now, delayed, float))
    jd = np.zeros_like(jn)
    w2 = p.omega * p.omega
    d1, d2 = x1 - y2, x2 - y1
    e1, e2 = v1 - u2, v2 - u1
    jn[..., 0, 2] = 1.0
    jn[..., 1, 3] = 1.0
    jn[..., 2, 0] = -2 * p.alpha * x1 * v1 + 2 * p.b * d1 * e1 - w2
    jn[..., 2, 2] = p.gamma - p.alpha * x1 * x1 - 3 * p.beta * v1 * v1 + p.a + p.b * d1 * d1
    jd[..., 2, 1] = -2 * p.b * d1 * e1
    jd[..., 2, 3] = -(p.a + p.b * d1 * d1)
    jn[..., 3, 1] = -2 * p.alpha * x2 * v2 + 2 * p.b * d2 * e2 - w2
    jn[..., 3, 3] = p.gamma - p.alpha * x2 * x2 - 3 * p.beta * v2 * v2 + p.a + p.b * d2 * d2
    jd[..., 3, 0] = -2 * p.b * d2 * e2
    jd[..., 3, 2] = -(p.a + p.b * d2 * d2)
    return jn, jd


def rhs_param_derivative(now, delayed, p: HkbParams, name: str) -> np.ndarray:
    """Partial derivative of :func:`rhs_full` with respect to an explicit parameter.

    ``tau`` does not enter the right-hand side explicitly and gives zero.
    """
    now = np.asarray(now)
    delayed = np.asarray(delayed)
    x1, x2, v1, v2 = (now[..., k] for k in range(4))
    y1, y2, u1, u2 = (delayed[..., k] for k in range(4))
    zero = np.zeros_like(x1 + y1)
    if name == "a":
        d1, d2 = v1 - u2, v2 - u1
    elif name == "b":
        d1, d2 = (x1 - y2) ** 2 * (v1 - u2), (x2 - y1) ** 2 * (v2 - u1)
    elif name == "gamma":
        d1, d2 = v1, v2
    elif name == "alpha":
        d1, d2 = -x1 * x1 * v1, -x2 * x2 * v2
    elif name == "beta":
        d1, d2 = -v1 ** 3, -v2 ** 3
    elif name == "omega":
        d1, d2 = -2 * p.omega * x1, -2 * p.omega * x2
    elif name == "tau":
        d1, d2 = zero, zero
    else:
        raise KeyError(name)
    return np.stack([zero, zero, d1 + zero, d2 + zero], axis=-1)


def rhs_normal_mode(mode: ModeKind, eta, eta_dot, eta_delayed_dot, p: HkbParams):
    """Second derivative of a normal mode of the linearised model.

    ``eta`` is ``x1 + x2`` for the in-phase mode and ``x1 - x2`` for the
    anti-phase mode.
    """
    return (p.gamma * eta_dot + p.a * (eta_dot - mode.sign * eta_delayed_dot)
            - p.omega ** 2 * eta)


def jacobians(p: HkbParams) -> LinearParts:
    """Linear parts ``A0`` (present) and ``A1`` (delayed) at the origin."""
    w2 = p.omega ** 2
    A0 = np.array([
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [-w2, 0.0, p.gamma + p.a, 0.0],
        [0.0, -w2, 0.0, p.gamma + p.a],
    ])
    A1 = np.zeros((4, 4))
    A1[2, 3] = -p.a
    A1[3, 2] = -p.a
    return LinearParts(A0, A1)


def characteristic_matrix(lam, p: HkbParams, lin: LinearParts | None = None) -> np.ndarray:
    """``Delta(lam) = lam*I - A0 - A1*exp(-lam*tau)`` of the full system."""
    lin = lin or jacobians(p)
    return lam * np.eye(4) - lin.A0 - lin.A1 * np.exp(-lam * p.tau)


def characteristic_matrix_dlam(lam, p: HkbParams, lin: LinearParts | None = None) -> np.ndarray:
    lin = lin or jacobians(p)
    return np.eye(4) + p.tau * lin.A1 * np.exp(-lam * p.tau)


def nonlinear_part(X, p: HkbParams) -> np.ndarray:
    """Nonlinear remainder ``f`` of the right-hand side on stacked 8-vectors.

    ``X[..., :4]`` is the present state and ``X[..., 4:]`` the delayed one.
    Complex inputs are evaluated with the same polynomial expression.
    """
    X = np.asarray(X)
    lin = jacobians(p)
    now, delayed = X[..., :4], X[..., 4:]
    return rhs_full(now, delayed, p) - now @ lin.A0.T - delayed @ lin.A1.T


@dataclass(frozen=True)
class MultilinearForms:
    """Symmetric Taylor coefficient tables of the nonlinear remainder.

    ``f(X) = Q(X, X) + C(X, X, X)`` with ``Q`` of shape ``(4, 8, 8)`` and ``C``
    of shape ``(4, 8, 8, 8)``.
    """

    quadratic_table: np.ndarray
    cubic_table: np.ndarray

    def quadratic(self, X, Y) -> np.ndarray:
        return np.einsum("ijk,...j,...k->...i", self.quadratic_table, X, Y)

    def cubic(self, X, Y, Z) -> np.ndarray:
        return np.einsum("ijkl,...j,...k,...l->...i", self.cubic_table, X, Y, Z)


def _polarize_cubic(f, X, Y, Z):
    # exact for homogeneous cubics with f(0) = 0
    return (f(X + Y + Z) - f(X + Y) - f(X + Z) - f(Y + Z) + f(X) + f(Y) + f(Z)) / 6.0


def multilinear_forms(p: HkbParams) -> MultilinearForms:
    # The HKB nonlinearity is a homogeneous cubic, so polarising it on unit
    # vectors yields the symmetric trilinear table exactly (up to rounding).
    f = lambda X: nonlinear_part(X, p)
    eye = np.eye(8)
    cubic = np.zeros((4, 8, 8, 8))
    for j in range(8):
        for k in range(j, 8):
            for l in range(k, 8):
                val = _polarize_cubic(f, eye[j], eye[k], eye[l])
                for (q, r, s) in {(j, k, l), (j, l, k), (k, j, l), (k, l, j), (l, j, k), (l, k, j)}:
                    cubic[:, q, r, s] = val
    return MultilinearForms(np.zeros((4, 8, 8)), cubic)


def swap(state) -> np.ndarray:
    """Apply the permutation symmetry ``(x1, x2) -> (x2, x1)``."""
    state = np.asarray(state)
    return state[..., [1, 0, 3, 2]]
