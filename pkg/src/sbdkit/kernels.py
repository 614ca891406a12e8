"""Isotropic interaction kernels and the scalar constants derived from them.

Every kernel is an even, nonnegative, integrable radial function on R^d with
a hard cutoff radius.  The same objects serve as dispersal kernel ``a_plus``,
fecundity-enhancement kernel ``b_plus`` and suppression kernel ``phi``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
from scipy import integrate, optimize, stats

__all__ = [
    "KernelSpec",
    "TopHat",
    "Gaussian",
    "Exponential",
    "PowerLaw",
    "zero_kernel",
    "KernelMoments",
    "DominationConstants",
    "DivergenceError",
    "IntegrabilityError",
    "StructuralViolation",
    "evaluate",
    "l1_norm",
    "c_phi",
    "moments",
    "radial_sup_ratio",
    "domination_constants",
    "picard_constant",
    "sample_displacement",
    "ball_volume",
    "sphere_area",
]

TAIL_TOLERANCE = 1e-10
QUAD_EPSABS = 1e-10


class DivergenceError(ValueError):
    """Kernel is not integrable."""


class IntegrabilityError(ValueError):
    """The effective volume ``c_phi`` is zero or not finite."""


class StructuralViolation(ValueError):
    """A domination constant does not exist (the ratio is unbounded)."""


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def ball_volume(radius: float, d: int) -> float:
    if d == 1:
        return 2.0 * radius
    if d == 2:
        return math.pi * radius * radius
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * radius**d


@dataclass(frozen=True, kw_only=True)
class KernelSpec:
    """Base class; use one of the concrete families."""

    dim: int = 1
    cutoff: float | None = None

    family = "abstract"

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dimension must be a positive integer, got {self.dim}")
        self._validate()
        if self.cutoff is None:
            object.__setattr__(self, "cutoff", float(self._default_cutoff()))
        elif self.cutoff < 0:
            raise ValueError("cutoff must be nonnegative")
        else:
            object.__setattr__(self, "cutoff", float(self.cutoff))
            tail = self.tail_fraction()
            if tail > TAIL_TOLERANCE:
                raise ValueError(
                    f"{self.family} cutoff {self.cutoff} leaves relative tail mass "
                    f"{tail:.3g} > {TAIL_TOLERANCE:g}"
                )

    # family hooks -------------------------------------------------------
    def _validate(self):
        pass

    def _default_cutoff(self) -> float:
        raise NotImplementedError

    def profile(self, r):
        """Untruncated radial profile; ``r`` is a float or an array."""
        raise NotImplementedError

    @property
    def magnitude(self) -> float:
        raise NotImplementedError

    def scaled(self, factor: float) -> "KernelSpec":
        """Return ``factor * kernel`` in the same family."""
        raise NotImplementedError

    def tail_fraction(self) -> float:
        """Relative mass beyond the cutoff, for families where it is bounded."""
        return 0.0

    # shared behaviour --------------------------------------------------
    @property
    def is_zero(self) -> bool:
        return self.magnitude == 0.0 or self.cutoff == 0.0

    def radial(self, r):
        """Truncated radial profile."""
        r = np.asarray(r, dtype=float)
        out = np.where(r <= self.cutoff, self.profile(r), 0.0)
        return out if out.ndim else float(out)

    def radial_scalar(self, r: float) -> float:
        if r > self.cutoff:
            return 0.0
        return float(self.profile(r))

    def __call__(self, x):
        return evaluate(self, x)


@dataclass(frozen=True, kw_only=True)
class TopHat(KernelSpec):
    """``height`` on the closed ball of radius ``radius``."""

    height: float = 1.0
    radius: float = 0.5
    family = "tophat"

    def _validate(self):
        if self.height < 0 or self.radius < 0:
            raise ValueError("TopHat height and radius must be nonnegative")
        if self.cutoff is not None and self.cutoff != self.radius:
            raise ValueError("TopHat cutoff is its radius")

    def _default_cutoff(self):
        return self.radius

    def profile(self, r):
        r = np.asarray(r, dtype=float)
        out = np.where(r <= self.radius, self.height, 0.0)
        return out if out.ndim else float(out)

    def radial_scalar(self, r):
        return self.height if r <= self.radius else 0.0

    @property
    def magnitude(self):
        return self.height if self.radius > 0 else 0.0

    def scaled(self, factor):
        return replace(self, height=self.height * factor)


@dataclass(frozen=True, kw_only=True)
class Gaussian(KernelSpec):
    """Isotropic normal density with total mass ``mass``."""

    mass: float = 1.0
    sigma: float = 1.0
    family = "gaussian"

    def _validate(self):
        if self.mass < 0 or self.sigma <= 0:
            raise ValueError("Gaussian needs mass >= 0 and sigma > 0")

    def _default_cutoff(self):
        return float(stats.chi.isf(TAIL_TOLERANCE / 10, self.dim)) * self.sigma

    def tail_fraction(self):
        return float(stats.chi.sf(self.cutoff / self.sigma, self.dim))

    def profile(self, r):
        norm = (2.0 * math.pi * self.sigma**2) ** (-self.dim / 2)
        return self.mass * norm * np.exp(-0.5 * (np.asarray(r, dtype=float) / self.sigma) ** 2)

    def radial_scalar(self, r):
        if r > self.cutoff:
            return 0.0
        norm = (2.0 * math.pi * self.sigma**2) ** (-self.dim / 2)
        return self.mass * norm * math.exp(-0.5 * (r / self.sigma) ** 2)

    @property
    def magnitude(self):
        return self.mass

    def scaled(self, factor):
        return replace(self, mass=self.mass * factor)


@dataclass(frozen=True, kw_only=True)
class Exponential(KernelSpec):
    """Radial density proportional to ``exp(-|x|/scale)`` with total mass ``mass``."""

    mass: float = 1.0
    scale: float = 1.0
    family = "exponential"

    def _validate(self):
        if self.mass < 0 or self.scale <= 0:
            raise ValueError("Exponential needs mass >= 0 and scale > 0")

    def _default_cutoff(self):
        return float(stats.gamma.isf(TAIL_TOLERANCE / 10, self.dim)) * self.scale

    def tail_fraction(self):
        return float(stats.gamma.sf(self.cutoff / self.scale, self.dim))

    @property
    def _norm(self):
        return 1.0 / (sphere_area(self.dim) * self.scale**self.dim * math.gamma(self.dim))

    def profile(self, r):
        return self.mass * self._norm * np.exp(-np.asarray(r, dtype=float) / self.scale)

    def radial_scalar(self, r):
        if r > self.cutoff:
            return 0.0
        return self.mass * self._norm * math.exp(-r / self.scale)

    @property
    def magnitude(self):
        return self.mass

    def scaled(self, factor):
        return replace(self, mass=self.mass * factor)


@dataclass(frozen=True, kw_only=True)
class PowerLaw(KernelSpec):
    """``amplitude * (1 + |x|)**(-exponent)``; integrable only for exponent > dim."""

    amplitude: float = 1.0
    exponent: float = 2.0
    family = "powerlaw"

    def _validate(self):
        if self.amplitude < 0:
            raise ValueError("PowerLaw amplitude must be nonnegative")
        if self.exponent <= self.dim:
            raise DivergenceError(
                f"PowerLaw exponent {self.exponent} must exceed dimension {self.dim}"
            )

    def _default_cutoff(self):
        return math.inf

    def profile(self, r):
        return self.amplitude * (1.0 + np.asarray(r, dtype=float)) ** (-self.exponent)

    def radial_scalar(self, r):
        if r > self.cutoff:
            return 0.0
        return self.amplitude * (1.0 + r) ** (-self.exponent)

    @property
    def magnitude(self):
        return self.amplitude

    def scaled(self, factor):
        return replace(self, amplitude=self.amplitude * factor)


def zero_kernel(dim: int = 1) -> TopHat:
    """The kernel that is identically zero."""
    return TopHat(dim=dim, height=0.0, radius=0.0)


# ---------------------------------------------------------------------------
# evaluation and moments


def _as_points(x, d):
    x = np.asarray(x, dtype=float)
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        return x[..., None]
    if x.shape[-1] != d:
        raise ValueError(f"expected points of dimension {d}, got shape {x.shape}")
    return x


def evaluate(kernel: KernelSpec, x):
    """Kernel value at displacement(s) ``x``.

    For ``d == 1`` a scalar or a 1-d array of displacements is accepted;
    otherwise the last axis holds coordinates.
    """
    pts = _as_points(x, kernel.dim)
    r = np.sqrt(np.sum(pts * pts, axis=-1))
    return kernel.radial(r)


def _radial_quad(func: Callable[[float], float], upper: float, breakpoints=()) -> float:
    """Integrate ``func(r) * |S^{d-1}| r^{d-1}`` style integrands on [0, upper]."""
    pts = sorted(p for p in breakpoints if 0 < p < upper)
    if math.isinf(upper):
        edges = [0.0, *pts, 1.0 if not pts else max(pts) + 1.0]
        total = 0.0
        for lo, hi in zip(edges[:-1], edges[1:]):
            total += integrate.quad(func, lo, hi, epsabs=QUAD_EPSABS, epsrel=1e-12, limit=200)[0]
        total += integrate.quad(func, edges[-1], math.inf, epsabs=QUAD_EPSABS, epsrel=1e-12, limit=200)[0]
        return total
    edges = [0.0, *pts, upper]
    return sum(
        integrate.quad(func, lo, hi, epsabs=QUAD_EPSABS, epsrel=1e-12, limit=200)[0]
        for lo, hi in zip(edges[:-1], edges[1:])
        if hi > lo
    )


def l1_norm(kernel: KernelSpec) -> float:
    """Total mass of the kernel."""
    if isinstance(kernel, TopHat):
        return kernel.height * ball_volume(kernel.radius, kernel.dim)
    if isinstance(kernel, (Gaussian, Exponential)):
        return kernel.mass
    if isinstance(kernel, PowerLaw):
        d = kernel.dim
        s = sphere_area(d)
        return _radial_quad(lambda r: s * r ** (d - 1) * kernel.radial_scalar(r), kernel.cutoff)
    raise TypeError(f"unknown kernel family {type(kernel).__name__}")


def c_phi(phi: KernelSpec) -> float:
    """Effective volume ``int (1 - exp(-phi))``.

    Raises IntegrabilityError when the value is not finite.  Zero is
    returned for the zero kernel; use :func:`moments` for the flag.
    """
    if phi.is_zero:
        return 0.0
    d = phi.dim
    if isinstance(phi, TopHat):
        value = ball_volume(phi.radius, d) * -math.expm1(-phi.height)
    else:
        s = sphere_area(d)
        value = _radial_quad(
            lambda r: s * r ** (d - 1) * -math.expm1(-phi.radial_scalar(r)), phi.cutoff
        )
    if not math.isfinite(value):
        raise IntegrabilityError(f"c_phi is not finite for {phi!r}")
    return value


@dataclass(frozen=True)
class KernelMoments:
    l1_norm: float
    c_phi: float
    degenerate: bool = False
    notes: tuple[str, ...] = field(default_factory=tuple)


def moments(kernel: KernelSpec) -> KernelMoments:
    mass = l1_norm(kernel)
    cp = c_phi(kernel)
    notes = ()
    degenerate = cp == 0.0
    if degenerate:
        notes = ("c_phi == 0: zero suppression kernel, excluded from condition checks",)
    return KernelMoments(l1_norm=mass, c_phi=cp, degenerate=degenerate, notes=notes)


# ---------------------------------------------------------------------------
# domination constants


@dataclass(frozen=True)
class DominationConstants:
    A1: float
    A2: float
    route: str = "radial"
    margin: float = 0.0


def _breakpoints(*kernels):
    return [k.cutoff for k in kernels if math.isfinite(k.cutoff) and k.cutoff > 0]


def radial_sup_ratio(num: Callable[[np.ndarray], np.ndarray],
                     den: Callable[[np.ndarray], np.ndarray],
                     r_max: float, breakpoints=(), n_grid: int = 4001) -> float:
    """Supremum of ``num(r) / den(r)`` over ``0 <= r <= r_max``.

    Grid search followed by bounded refinement around the best cell.
    Raises StructuralViolation where ``num > 0`` but ``den == 0``.
    """
    if math.isinf(r_max):
        r_max = 1e4
    grid = np.linspace(0.0, r_max, n_grid)
    extra = []
    for p in breakpoints:
        if 0 <= p <= r_max:
            extra.extend([p, np.nextafter(p, 0.0), np.nextafter(p, np.inf)])
    grid = np.unique(np.clip(np.concatenate([grid, extra]), 0.0, r_max))
    n = np.asarray(num(grid), dtype=float)
    dd = np.asarray(den(grid), dtype=float)
    bad = (n > 0) & (dd <= 0)
    if np.any(bad):
        raise StructuralViolation(
            f"condition structurally violated: ratio unbounded near r={grid[bad][0]:.6g}"
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(n > 0, n / np.where(dd > 0, dd, 1.0), 0.0)
    if not np.all(np.isfinite(ratio)):
        raise StructuralViolation("condition structurally violated: non-finite ratio")
    i = int(np.argmax(ratio))
    best = float(ratio[i])
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    if hi > lo:

        def neg(r):
            dv = float(den(np.array(r)))
            nv = float(num(np.array(r)))
            return -(nv / dv) if dv > 0 and nv > 0 else 0.0

        res = optimize.minimize_scalar(neg, bounds=(lo, hi), method="bounded",
                                       options={"xatol": 1e-12})
        best = max(best, -float(res.fun))
    return best


def _ratio_a1(a_plus: KernelSpec, phi: KernelSpec, mechanism: str) -> float:
    if a_plus.is_zero:
        return 0.0
    if mechanism == "fecundity":
        den = lambda r: phi.radial(r) * np.exp(-phi.radial(r))
    else:
        den = phi.radial
    return radial_sup_ratio(a_plus.radial, den, a_plus.cutoff, _breakpoints(a_plus, phi))


def _a2_lemma(a_plus: PowerLaw, b_plus: PowerLaw, phi: KernelSpec) -> float:
    """Route through a PowerLaw majorant for a_plus and b_plus."""
    e1 = max(a_plus.amplitude, b_plus.amplitude)
    delta = min(b_plus.exponent, a_plus.exponent / 2.0)
    if delta <= a_plus.dim:
        raise StructuralViolation("power-law majorant needs exponent > dimension")
    majorant = lambda r: e1 * (1.0 + np.asarray(r, dtype=float)) ** (-delta)
    e2 = radial_sup_ratio(majorant, phi.radial, 1e4, _breakpoints(phi))
    return e2 * e2


def _a2_sampled(a_plus, b_plus, phi, n_grid=None):
    """sup a(u) b(v) / (phi(u) phi(u + v)) over a grid of (|u|, |v|, angle)."""
    d = a_plus.dim
    ra = a_plus.cutoff if math.isfinite(a_plus.cutoff) else 50.0
    rb = b_plus.cutoff if math.isfinite(b_plus.cutoff) else 50.0

    def ratio(ru, rv, cos_t):
        w = np.sqrt(np.maximum(ru * ru + rv * rv + 2.0 * ru * rv * cos_t, 0.0))
        num = a_plus.radial(ru) * b_plus.radial(rv)
        den = phi.radial(ru) * phi.radial(w)
        if np.any((num > 0) & (den <= 0)):
            raise StructuralViolation(
                "condition structurally violated: a+(u) b+(v) > 0 where phi(u) phi(u+v) = 0"
            )
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(num > 0, num / np.where(den > 0, den, 1.0), 0.0)

    if d == 1:
        n = n_grid or 801
        u = np.linspace(0.0, ra, n)
        v = np.linspace(0.0, rb, n)
        U, V = np.meshgrid(u, v, indexing="ij")
        # u >= 0 by symmetry; v carries the sign
        vals = np.maximum(ratio(U, V, 1.0), ratio(U, V, -1.0))
        i, j = np.unravel_index(np.argmax(vals), vals.shape)
        grid_best = float(vals[i, j])
        cos_best = 1.0 if ratio(u[i], v[j], 1.0) >= ratio(u[i], v[j], -1.0) else -1.0
        x0 = np.array([u[i], v[j]])
        fun = lambda z: -float(ratio(np.clip(z[0], 0, ra), np.clip(z[1], 0, rb), cos_best))
    else:
        n = n_grid or 121
        u = np.linspace(0.0, ra, n)
        v = np.linspace(0.0, rb, n)
        c = np.cos(np.linspace(0.0, math.pi, 61))
        U, V, Cc = np.meshgrid(u, v, c, indexing="ij")
        vals = ratio(U, V, Cc)
        i, j, k = np.unravel_index(np.argmax(vals), vals.shape)
        grid_best = float(vals[i, j, k])
        cos_best = c[k]
        x0 = np.array([u[i], v[j]])
        fun = lambda z: -float(ratio(np.clip(z[0], 0, ra), np.clip(z[1], 0, rb), cos_best))
    res = optimize.minimize(fun, x0, method="Nelder-Mead",
                            options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 2000})
    best = max(grid_best, -float(res.fun))
    margin = (best - grid_best) / best if best > 0 else 0.0
    return best, margin


def domination_constants(a_plus: KernelSpec, b_plus: KernelSpec, phi: KernelSpec,
                         mechanism: str = "establishment") -> DominationConstants:
    """Smallest admissible ``A1``, ``A2`` for the given mechanism.

    Establishment: ``a+ <= A1 phi`` and ``a+(x-y) b+(y-y') <= A2 phi(x-y) phi(x-y')``.
    Fecundity: ``a+ <= A1 phi e^{-phi}`` and ``b+ <= A2 phi``.
    """
    if len({a_plus.dim, b_plus.dim, phi.dim}) != 1:
        raise ValueError("kernels must share a dimension")
    if phi.is_zero and not (a_plus.is_zero and b_plus.is_zero):
        raise StructuralViolation("condition structurally violated: phi is identically zero")
    a1 = _ratio_a1(a_plus, phi, mechanism)
    if b_plus.is_zero:
        return DominationConstants(a1, 0.0, route="radial")
    if mechanism == "fecundity":
        a2 = radial_sup_ratio(b_plus.radial, phi.radial, b_plus.cutoff, _breakpoints(b_plus, phi))
        return DominationConstants(a1, a2, route="radial")
    if a_plus.is_zero:
        return DominationConstants(a1, 0.0, route="radial")
    if isinstance(a_plus, PowerLaw) and isinstance(b_plus, PowerLaw):
        try:
            return DominationConstants(a1, _a2_lemma(a_plus, b_plus, phi), route="lemma")
        except StructuralViolation:
            pass
    a2, margin = _a2_sampled(a_plus, b_plus, phi)
    return DominationConstants(a1, a2, route="sampled", margin=margin)


def picard_constant(a_plus: KernelSpec, b_plus: KernelSpec, phi: KernelSpec) -> float:
    """Smallest ``A`` with ``max(a+, b+) <= A phi``."""
    a = _ratio_a1(a_plus, phi, "establishment")
    if b_plus.is_zero:
        return a
    b = radial_sup_ratio(b_plus.radial, phi.radial, b_plus.cutoff, _breakpoints(b_plus, phi))
    return max(a, b)


# ---------------------------------------------------------------------------
# sampling


def _directions(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    if d == 1:
        return rng.choice([-1.0, 1.0], size=(n, 1))
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _sample_radii(kernel: KernelSpec, rng: np.random.Generator, n: int) -> np.ndarray:
    d = kernel.dim
    R = kernel.cutoff
    if isinstance(kernel, TopHat):
        return R * rng.random(n) ** (1.0 / d)
    out = np.empty(0)
    while out.size < n:
        m = max(2 * (n - out.size), 16)
        if isinstance(kernel, Gaussian):
            r = kernel.sigma * np.sqrt(rng.chisquare(d, m))
        elif isinstance(kernel, Exponential):
            r = rng.gamma(d, kernel.scale, m)
        elif isinstance(kernel, PowerLaw):
            # Pareto envelope for (1 + r): density ~ (1+r)^(d-1-exponent)
            alpha = kernel.exponent - d
            one_plus = rng.random(m) ** (-1.0 / alpha)
            r = one_plus - 1.0
            if d > 1:
                keep = rng.random(m) < (r / one_plus) ** (d - 1)
                r = r[keep]
        else:
            raise TypeError(f"cannot sample from {type(kernel).__name__}")
        out = np.concatenate([out, r[r <= R]])
    return out[:n]


def sample_displacement(kernel: KernelSpec, rng: np.random.Generator, size: int = 1) -> np.ndarray:
    """Draw displacements from the normalized kernel; returns shape (size, d)."""
    if kernel.is_zero:
        raise ValueError("cannot sample from the zero kernel")
    r = _sample_radii(kernel, rng, size)
    return r[:, None] * _directions(rng, size, kernel.dim)
