"""Parameters, neuron state containers and the pointwise Hindmarsh-Rose reaction."""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Mapping, Sequence

import numpy as np

__all__ = [
    "PARAMETER_NAMES",
    "Parameters",
    "NeuronField",
    "NetworkState",
    "ParameterError",
    "default_parameters",
    "validate_parameters",
    "reaction",
]

PARAMETER_NAMES = ("a", "b", "alpha", "beta", "q", "r", "c", "J", "d", "p")


class ParameterError(ValueError):
    """Raised when a model constant violates its sign constraint."""


@dataclass(frozen=True)
class Parameters:
    """The ten model constants shared by every neuron of the network.

    Direct construction performs no checks so that limiting cases (``a = 0``,
    ``q = 0``) can be evaluated by the constant formulas. Use
    :func:`validate_parameters` for user input.
    """

    a: float
    b: float
    alpha: float
    beta: float
    q: float
    r: float
    c: float
    J: float
    d: float
    p: float

    def as_dict(self) -> dict[str, float]:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}

    def replace(self, **changes: float) -> "Parameters":
        values = self.as_dict()
        values.update(changes)
        return Parameters(**values)


def default_parameters(**overrides: float) -> Parameters:
    """Classic bursting Hindmarsh-Rose constants in this model's notation.

    ``q = r * s`` with ``s = 4`` and resting potential ``c = -1.6``;
    ``d = 0.1`` and ``p = 10`` are the default diffusion and coupling strengths.
    """
    base = dict(a=3.0, b=1.0, alpha=1.0, beta=5.0, q=0.024, r=0.006,
                c=-1.6, J=3.0, d=0.1, p=10.0)
    base.update(overrides)
    return validate_parameters(base)


def validate_parameters(raw: Mapping[str, float] | Sequence[float]) -> Parameters:
    """Check sign constraints and return a :class:`Parameters`.

    ``raw`` is either a mapping keyed by :data:`PARAMETER_NAMES` or a sequence
    of ten numbers in that order. The first violated constraint is reported
    by name, e.g. ``"b must be > 0"``.
    """
    if isinstance(raw, Mapping):
        missing = [k for k in PARAMETER_NAMES if k not in raw]
        if missing:
            raise ParameterError(f"missing parameter {missing[0]!r}")
        unknown = [k for k in raw if k not in PARAMETER_NAMES]
        if unknown:
            raise ParameterError(f"unknown parameter {unknown[0]!r}")
        values = {k: raw[k] for k in PARAMETER_NAMES}
    else:
        seq = list(raw)
        if len(seq) != len(PARAMETER_NAMES):
            raise ParameterError(f"expected 10 parameters, got {len(seq)}")
        values = dict(zip(PARAMETER_NAMES, seq))

    for name in PARAMETER_NAMES:
        try:
            x = float(values[name])
        except (TypeError, ValueError):
            raise ParameterError(f"{name} must be a real number") from None
        if not np.isfinite(x):
            raise ParameterError(f"{name} must be finite")
        if name != "c" and not x > 0:
            raise ParameterError(f"{name} must be > 0")
        values[name] = x
    return Parameters(**values)


def reaction(u, v, w, params: Parameters):
    """Pointwise right-hand side of the uncoupled neuron equations.

    Works on scalars or numpy arrays. Returns ``(du, dv, dw)``.
    """
    P = params
    u2 = u * u
    du = P.a * u2 - P.b * u2 * u + v - w + P.J
    dv = P.alpha - v - P.beta * u2
    dw = P.q * (u - P.c) - P.r * w
    return du, dv, dw


@dataclass(frozen=True)
class NeuronField:
    """Membrane potential ``u``, spiking variable ``v`` and bursting variable
    ``w`` of one neuron, sampled on the mesh nodes."""

    u: np.ndarray
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        arrs = [np.ascontiguousarray(x, dtype=np.float64) for x in (self.u, self.v, self.w)]
        if any(a.ndim != 1 for a in arrs) or len({a.size for a in arrs}) != 1:
            raise ValueError("u, v, w must be 1-D arrays of identical length")
        for name, a in zip("uvw", arrs):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    @property
    def size(self) -> int:
        return self.u.size

    @classmethod
    def constant(cls, n: int, u: float, v: float, w: float) -> "NeuronField":
        return cls(np.full(n, float(u)), np.full(n, float(v)), np.full(n, float(w)))

    def first_nonfinite(self) -> str | None:
        for name in "uvw":
            if not np.all(np.isfinite(getattr(self, name))):
                return name
        return None


@dataclass(frozen=True)
class NetworkState:
    """Central neuron plus ``m`` neighbours at time ``t``.

    ``m = 0`` is the single-neuron network in which every coupling term vanishes.
    """

    central: NeuronField
    neighbors: tuple[NeuronField, ...] = field(default_factory=tuple)
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "neighbors", tuple(self.neighbors))
        n = self.central.size
        if any(nb.size != n for nb in self.neighbors):
            raise ValueError("all neurons must live on the same mesh")

    @property
    def m(self) -> int:
        return len(self.neighbors)

    @property
    def neurons(self) -> tuple[NeuronField, ...]:
        return (self.central,) + self.neighbors

    def stacked(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """``(U, V, W)`` arrays of shape ``(m + 1, n_nodes)``, central neuron first."""
        ns = self.neurons
        return (np.stack([g.u for g in ns]), np.stack([g.v for g in ns]),
                np.stack([g.w for g in ns]))

    @classmethod
    def from_stacked(cls, U, V, W, t: float = 0.0) -> "NetworkState":
        fields_ = [NeuronField(U[k].copy(), V[k].copy(), W[k].copy()) for k in range(len(U))]
        return cls(fields_[0], tuple(fields_[1:]), float(t))

    def first_nonfinite(self) -> str | None:
        """Name of the first field holding NaN/Inf, e.g. ``"u"`` or ``"w_2"``."""
        for k, g in enumerate(self.neurons):
            bad = g.first_nonfinite()
            if bad is not None:
                return bad if k == 0 else f"{bad}_{k}"
        return None
