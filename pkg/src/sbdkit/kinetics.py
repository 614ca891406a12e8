"""Vlasov-type kinetic equations on a periodic grid.

Two routes to the density ``rho_t``: explicit time stepping of the
right-hand side (RK4 or exponential Euler), and iteration of the integral
fixed-point map

    (Phi v)_t = exp(-m t) rho_0 + int_0^t exp(-m (t - s)) Birth(v_s) ds

on the recorded time nodes.  Convolutions are periodic and spectral.
"""
from __future__ import annotations

import enum
import functools
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .kernels import KernelSpec, l1_norm
from .model import Mechanism, ModelParams

log = logging.getLogger(__name__)

BLOWUP_FACTOR = 1e3
NEGATIVITY_TOL = 1e-8


class CutoffError(ValueError):
    """Kernel support does not fit in half the periodic box."""


class BlowUpError(RuntimeError):
    pass


class ConvergenceError(RuntimeError):
    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class PicardInvariantError(RuntimeError):
    """An iterate left the nonnegative ball the contraction argument needs."""


class NegativityWarning(RuntimeWarning):
    pass


class StabilityWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid of ``n**dim`` cells on ``[0, length)**dim``."""

    n: int
    length: float
    dim: int = 1

    @property
    def spacing(self) -> float:
        return self.length / self.n

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def axes(self) -> tuple[int, ...]:
        return tuple(range(-self.dim, 0))

    def centers(self) -> np.ndarray:
        """Cell centres, shape ``shape + (dim,)``."""
        c = (np.arange(self.n) + 0.5) * self.spacing
        mesh = np.meshgrid(*([c] * self.dim), indexing="ij")
        return np.stack(mesh, axis=-1)

    def offsets(self) -> np.ndarray:
        """Centre-to-centre displacements in FFT order, shape ``shape + (dim,)``."""
        j = np.fft.fftfreq(self.n, d=1.0 / self.n) * self.spacing
        mesh = np.meshgrid(*([j] * self.dim), indexing="ij")
        return np.stack(mesh, axis=-1)


@dataclass
class DensityField:
    values: np.ndarray
    grid: Grid

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != self.grid.shape:
            raise ValueError(f"values shape {self.values.shape} != grid {self.grid.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("density values must be finite")

    @classmethod
    def constant(cls, grid: Grid, u: float) -> "DensityField":
        return cls(np.full(grid.shape, float(u)), grid)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    @property
    def min(self) -> float:
        return float(np.min(self.values))

    @property
    def mass(self) -> float:
        return float(np.sum(self.values) * self.grid.cell_volume)

    def shifted(self, cells: int, axis: int = 0) -> "DensityField":
        return DensityField(np.roll(self.values, cells, axis=axis), self.grid)

    def with_values(self, values) -> "DensityField":
        return DensityField(values, self.grid)


# ---------------------------------------------------------------------------
# convolution


@functools.lru_cache(maxsize=64)
def sample_kernel(kernel: KernelSpec, grid: Grid) -> np.ndarray:
    """Kernel weights at centre-to-centre offsets (FFT order), times the cell volume.

    The weights are rescaled so their sum equals the kernel's total mass.
    """
    if kernel.dim != grid.dim:
        raise ValueError("kernel and grid dimensions differ")
    if kernel.is_zero:
        return np.zeros(grid.shape)
    if not kernel.cutoff < grid.length / 2:
        raise CutoffError(
            f"kernel cutoff {kernel.cutoff} must be below half the box length {grid.length / 2}"
        )
    off = grid.offsets()
    w = kernel.radial(np.sqrt(np.sum(off * off, axis=-1))) * grid.cell_volume
    total = w.sum()
    if total > 0:
        w *= l1_norm(kernel) / total
    w.flags.writeable = False
    return w


@functools.lru_cache(maxsize=64)
def _kernel_hat(kernel: KernelSpec, grid: Grid) -> np.ndarray:
    return np.fft.rfftn(sample_kernel(kernel, grid), axes=grid.axes)


def _convolve_hat(values: np.ndarray, khat: np.ndarray, grid: Grid) -> np.ndarray:
    vhat = np.fft.rfftn(values, axes=grid.axes)
    return np.fft.irfftn(vhat * khat, s=grid.shape, axes=grid.axes)


def convolve(field: DensityField, kernel) -> DensityField:
    """Periodic convolution of a grid field with a kernel.

    ``kernel`` is either a :class:`KernelSpec` or an array of weights in
    FFT order (already multiplied by the cell volume).
    """
    grid = field.grid
    if isinstance(kernel, KernelSpec):
        khat = _kernel_hat(kernel, grid)
    else:
        khat = np.fft.rfftn(np.asarray(kernel, dtype=float), axes=grid.axes)
    return DensityField(_convolve_hat(field.values, khat, grid), grid)


def convolve_direct(field: DensityField, weights: np.ndarray) -> DensityField:
    """Reference O(N^2) periodic convolution by explicit summation."""
    grid = field.grid
    v = field.values
    w = np.asarray(weights, dtype=float)
    out = np.zeros_like(v)
    for idx in np.ndindex(*grid.shape):
        # out[i] = sum_j w[i - j] v[j]
        shifted = w
        for ax, k in enumerate(idx):
            shifted = np.roll(shifted, -k, axis=ax)
        rev = shifted
        for ax in range(grid.dim):
            rev = np.flip(rev, axis=ax)
            rev = np.roll(rev, 1, axis=ax)
        out[idx] = np.sum(rev * v)
    return DensityField(out, grid)


# ---------------------------------------------------------------------------
# right-hand sides


class KineticOperator:
    """Precomputed spectral kernels for one model on one grid."""

    def __init__(self, params: ModelParams, grid: Grid):
        self.params = params
        self.grid = grid
        self.a_hat = _kernel_hat(params.a_plus, grid)
        self.phi_hat = _kernel_hat(params.phi, grid)
        b = params.b_eff
        self.b_hat = None if b.is_zero else _kernel_hat(b, grid)

    def _conv(self, values, khat):
        return _convolve_hat(values, khat, self.grid)

    def birth(self, values: np.ndarray, mechanism=None) -> np.ndarray:
        """Nonlinear birth part of the right-hand side (everything except ``-m rho``).

        ``values`` may carry leading batch axes (e.g. time).
        """
        mech = Mechanism(mechanism or self.params.mechanism)
        kappa = self.params.kappa
        supp = np.exp(-self._conv(values, self.phi_hat))
        if mech is Mechanism.ESTABLISHMENT:
            out = kappa * self._conv(values, self.a_hat)
            if self.b_hat is not None:
                out = out + self._conv(self._conv(values, self.b_hat) * values, self.a_hat)
            return out * supp
        weighted = values * supp
        src = kappa * weighted
        if self.b_hat is not None:
            src = src + self._conv(values, self.b_hat) * weighted
        return self._conv(src, self.a_hat)

    def rhs(self, values: np.ndarray, mechanism=None) -> np.ndarray:
        return -self.params.m * values + self.birth(values, mechanism)


@functools.lru_cache(maxsize=16)
def kinetic_operator(params: ModelParams, grid: Grid) -> KineticOperator:
    return KineticOperator(params, grid)


def rhs_establishment(rho: DensityField, params: ModelParams) -> DensityField:
    """Right-hand side with suppression applied at the landing site."""
    op = kinetic_operator(params, rho.grid)
    return rho.with_values(op.rhs(rho.values, Mechanism.ESTABLISHMENT))


def rhs_fecundity(rho: DensityField, params: ModelParams) -> DensityField:
    """Right-hand side with suppression applied at the parent, inside the dispersal convolution."""
    op = kinetic_operator(params, rho.grid)
    return rho.with_values(op.rhs(rho.values, Mechanism.FECUNDITY))


def rhs(rho: DensityField, params: ModelParams, mechanism=None) -> DensityField:
    op = kinetic_operator(params, rho.grid)
    return rho.with_values(op.rhs(rho.values, mechanism))


# ---------------------------------------------------------------------------
# time stepping


class Scheme(str, enum.Enum):
    RK4 = "rk4"
    EXPONENTIAL_EULER = "exp-euler"


@dataclass(frozen=True)
class SolverConfig:
    scheme: Scheme = Scheme.RK4
    dt: float = 0.01
    t_end: float = 1.0
    record_every: int = 1
    picard_max_iters: int = 200
    picard_tol: float = 1e-10
    ball_radius: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "scheme", Scheme(self.scheme))
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.t_end < 0:
            raise ValueError("t_end must be nonnegative")
        if self.record_every < 1:
            raise ValueError("record_every must be >= 1")

    @property
    def n_steps(self) -> int:
        n = int(round(self.t_end / self.dt))
        if abs(n * self.dt - self.t_end) > 1e-9 * max(1.0, self.t_end):
            raise ValueError("t_end must be an integer multiple of dt")
        return n


@dataclass
class KineticSolution:
    times: np.ndarray
    values: np.ndarray  # (records, *grid.shape)
    grid: Grid
    min_values: np.ndarray
    sup_norms: np.ndarray
    scheme: str
    dt: float
    warnings: list[str] = field(default_factory=list)

    def field(self, k: int = -1) -> DensityField:
        return DensityField(self.values[k], self.grid)

    @property
    def final(self) -> DensityField:
        return self.field(-1)


def stability_number(params: ModelParams, dt: float, c: float) -> float:
    """``dt * (m + kappa + c <b+>)``; explicit steps want this <= 0.5."""
    return dt * (params.m + params.kappa + c * l1_norm(params.b_eff))


def integrate(rho0: DensityField, params: ModelParams, cfg: SolverConfig,
              mechanism=None) -> KineticSolution:
    """Explicit time integration of the kinetic equation."""
    grid = rho0.grid
    op = kinetic_operator(params, grid)
    mech = Mechanism(mechanism or params.mechanism)
    m = params.m
    dt = cfg.dt
    n_steps = cfg.n_steps
    sup0 = rho0.sup_norm
    notes = []
    c = max(sup0, cfg.ball_radius or 0.0)
    if stability_number(params, dt, c) > 0.5:
        msg = f"dt={dt} violates dt*(m + kappa + c<b+>) <= 0.5"
        warnings.warn(msg, StabilityWarning, stacklevel=2)
        notes.append(msg)

    decay = math.exp(-m * dt)
    phi1 = -math.expm1(-m * dt) / m

    def step(u):
        if cfg.scheme is Scheme.EXPONENTIAL_EULER:
            return decay * u + phi1 * op.birth(u, mech)
        k1 = op.rhs(u, mech)
        k2 = op.rhs(u + 0.5 * dt * k1, mech)
        k3 = op.rhs(u + 0.5 * dt * k2, mech)
        k4 = op.rhs(u + dt * k3, mech)
        return u + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    u = rho0.values.copy()
    times, recs = [0.0], [u.copy()]
    mins, sups = [float(u.min())], [sup0]
    negative_reported = False
    for k in range(1, n_steps + 1):
        u = step(u)
        lo, hi = float(u.min()), float(np.max(np.abs(u)))
        if not np.all(np.isfinite(u)) or (sup0 > 0 and hi > BLOWUP_FACTOR * sup0):
            raise BlowUpError(f"sup norm {hi:.3g} exceeded {BLOWUP_FACTOR:g} x initial at t={k * dt:.6g}")
        if lo < -NEGATIVITY_TOL and not negative_reported:
            msg = f"negative density {lo:.3g} at t={k * dt:.6g}"
            warnings.warn(msg, NegativityWarning, stacklevel=2)
            notes.append(msg)
            negative_reported = True
        if k % cfg.record_every == 0 or k == n_steps:
            times.append(k * dt)
            recs.append(u.copy())
            mins.append(lo)
            sups.append(hi)
    return KineticSolution(np.array(times), np.array(recs), grid, np.array(mins),
                           np.array(sups), cfg.scheme.value, dt, notes)


# ---------------------------------------------------------------------------
# fixed-point iteration


@dataclass
class PicardResult:
    times: np.ndarray
    values: np.ndarray  # (nodes, *grid.shape)
    grid: Grid
    iterations: int
    deltas: list[float]
    ratios: list[float]
    iterate_sup: list[float]
    iterate_min: list[float]
    converged: bool

    def field(self, k: int = -1) -> DensityField:
        return DensityField(self.values[k], self.grid)

    @property
    def final(self) -> DensityField:
        return self.field(-1)

    @property
    def max_ratio(self) -> float:
        return max(self.ratios) if self.ratios else 0.0


def picard_map(v: np.ndarray, rho0: np.ndarray, op: KineticOperator, m: float, dt: float,
               mechanism) -> np.ndarray:
    """Apply the fixed-point map to a trajectory ``v`` of shape (nodes, *grid)."""
    births = op.birth(v, mechanism)
    decay = math.exp(-m * dt)
    out = np.empty_like(v)
    integral = np.zeros_like(rho0)
    out[0] = rho0
    for k in range(1, len(v)):
        integral = decay * integral + 0.5 * dt * (decay * births[k - 1] + births[k])
        out[k] = math.exp(-m * k * dt) * rho0 + integral
    return out


def picard_solve(rho0: DensityField, params: ModelParams, cfg: SolverConfig,
                 mechanism=None) -> PicardResult:
    """Iterate the fixed-point map from the constant-in-time trajectory ``rho0``.

    Iteration stops when the node-max difference of successive iterates drops
    below ``cfg.picard_tol``.  With ``cfg.ball_radius`` set, every iterate must
    stay nonnegative with node-max norm at most that radius.
    """
    grid = rho0.grid
    op = kinetic_operator(params, grid)
    mech = Mechanism(mechanism or params.mechanism)
    n_nodes = cfg.n_steps + 1
    times = np.arange(n_nodes) * cfg.dt
    v = np.broadcast_to(rho0.values, (n_nodes, *grid.shape)).copy()
    deltas, ratios, sups, mins = [], [], [float(np.max(np.abs(v)))], [float(v.min())]
    streak = 0
    c = cfg.ball_radius

    def check_ball(w, n):
        if c is None:
            return
        lo, hi = float(w.min()), float(np.max(np.abs(w)))
        if lo < -1e-12 or hi > c * (1 + 1e-12) + 1e-12:
            raise PicardInvariantError(
                f"iterate {n} left the ball: min={lo:.3g}, norm={hi:.6g}, radius={c:g}"
            )

    check_ball(v, 0)
    for n in range(cfg.picard_max_iters):
        w = picard_map(v, rho0.values, op, params.m, cfg.dt, mech)
        delta = float(np.max(np.abs(w - v)))
        sups.append(float(np.max(np.abs(w))))
        mins.append(float(w.min()))
        check_ball(w, n + 1)
        if deltas:
            prev = deltas[-1]
            ratios.append(delta / prev if prev > 0 else 0.0)
            streak = streak + 1 if ratios[-1] >= 1 else 0
        deltas.append(delta)
        v = w
        if delta < cfg.picard_tol:
            return PicardResult(times, v, grid, n, deltas, ratios, sups, mins, True)
        if streak >= 3:
            raise ConvergenceError(
                f"fixed-point iteration not contracting (ratio >= 1 for {streak} iterations)",
                {"deltas": deltas, "ratios": ratios},
            )
    raise ConvergenceError(
        f"no convergence to tol={cfg.picard_tol:g} in {cfg.picard_max_iters} iterations",
        {"deltas": deltas, "ratios": ratios},
    )


# ---------------------------------------------------------------------------
# homogeneous reduction


def homogeneous_rate(u, params: ModelParams):
    """Per-capita growth rate of a constant density ``u``."""
    p = l1_norm(params.phi)
    B = l1_norm(params.b_eff)
    u = np.asarray(u, dtype=float)
    return -params.m + (params.kappa + B * u) * np.exp(-u * p)


def homogeneous_rhs(u, params: ModelParams):
    """Right-hand side of the kinetic equation restricted to constant fields."""
    return np.asarray(u, dtype=float) * homogeneous_rate(u, params)


@dataclass(frozen=True)
class Equilibrium:
    u: float
    derivative: float

    @property
    def stability(self) -> str:
        if self.derivative < 0:
            return "stable"
        if self.derivative > 0:
            return "unstable"
        return "neutral"


def homogeneous_equilibria(params: ModelParams, n_grid: int = 4000) -> list[Equilibrium]:
    """Constant steady states: zero plus every bracketed positive root."""
    p = l1_norm(params.phi)
    if not p > 0:
        raise ValueError("equilibria need a suppression kernel with positive mass")
    B = l1_norm(params.b_eff)
    m, kappa = params.m, params.kappa
    g = lambda u: float(homogeneous_rate(u, params))

    def dg(u):
        return math.exp(-u * p) * (B - p * (kappa + B * u))

    out = [Equilibrium(0.0, kappa - m)]
    # past u_max the rate is below -m/2 and decreasing
    u_max = 1.0 / p
    while (kappa + B * u_max) * math.exp(-u_max * p) > 0.5 * m or dg(u_max) > 0:
        u_max *= 2.0
    grid = np.linspace(0.0, u_max, n_grid + 1)[1:]
    vals = homogeneous_rate(grid, params)
    for i in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]:
        root = optimize.brentq(g, grid[i], grid[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps,
                               maxiter=500)
        out.append(Equilibrium(root, root * dg(root)))
    for i in np.nonzero(vals == 0.0)[0]:
        out.append(Equilibrium(float(grid[i]), float(grid[i]) * dg(float(grid[i]))))
    return out


# ---------------------------------------------------------------------------
# initial data


def initial_density(grid: Grid, kind: str = "constant", level: float = 1.0,
                    amplitude: float = 1.0, width: float = 1.0, path=None) -> DensityField:
    """Initial fields: ``constant``, ``gaussian-bump`` (centred), ``two-bump``
    (bumps at a quarter and three quarters of the box, the second at half
    height) or ``from-file`` (whitespace/comma separated values, row-major)."""
    if kind == "constant":
        return DensityField.constant(grid, level)
    if kind == "from-file":
        vals = np.loadtxt(path, delimiter=_sniff_delim(path), ndmin=1, comments="#")
        vals = np.asarray(vals, dtype=float).ravel()
        if vals.size != grid.n**grid.dim:
            raise ValueError(f"{path}: expected {grid.n**grid.dim} values, found {vals.size}")
        return DensityField(vals.reshape(grid.shape), grid)
    x = grid.centers()
    L = grid.length

    def bump(center, height):
        dv = x - center
        dv = dv - L * np.round(dv / L)
        return height * np.exp(-0.5 * np.sum(dv * dv, axis=-1) / width**2)

    if kind == "gaussian-bump":
        return DensityField(level + bump(np.full(grid.dim, L / 2), amplitude), grid)
    if kind == "two-bump":
        v = level + bump(np.full(grid.dim, L / 4), amplitude) + bump(np.full(grid.dim, 3 * L / 4),
                                                                     0.5 * amplitude)
        return DensityField(v, grid)
    raise ValueError(f"unknown initial density kind {kind!r}")


def _sniff_delim(path):
    with open(path) as fh:
        head = fh.read(4096)
    return "," if "," in head else None
