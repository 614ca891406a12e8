"""Exact combinatorics on finite configurations.

Energies and birth rates, the K-transform and its inverse by subset
enumeration, the closed-form expansions of ``K0^{-1} b(x, xi u .)`` for both
regulation mechanisms (plain, eps-scaled and the eps -> 0 limit), generator
images on quasi-observables, and Monte Carlo integration against the
Lebesgue-Poisson measure.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .kernels import KernelSpec
from .model import Mechanism, ModelParams

MAX_SUBSET_CARDINALITY = 12


class CardinalityError(ValueError):
    pass


class OverlapError(ValueError):
    pass


class Configuration:
    """Finite set of distinct points, either in R^d or on the torus [0, L)^d."""

    __slots__ = ("points", "box_length")

    def __init__(self, points=(), box_length: float | None = None, dim: int | None = None):
        pts = np.asarray(points, dtype=float)
        if pts.size == 0:
            pts = np.zeros((0, dim or 1))
        elif pts.ndim == 1:
            pts = pts[:, None] if (dim or 1) == 1 else pts[None, :]
        if box_length is not None:
            pts = np.mod(pts, box_length)
        if len({tuple(p) for p in pts}) != len(pts):
            raise ValueError("configuration points must be distinct")
        self.points = pts
        self.box_length = box_length

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return iter(self.points)

    def __repr__(self):
        return f"Configuration({self.points.tolist()!r}, box_length={self.box_length})"

    def subset(self, index) -> "Configuration":
        return Configuration(self.points[list(index)], self.box_length, self.dim)

    def without(self, *index) -> "Configuration":
        keep = [i for i in range(len(self)) if i not in index]
        return self.subset(keep)

    def union(self, other: "Configuration") -> "Configuration":
        return Configuration(np.vstack([self.points, other.points]), self.box_length, self.dim)

    def add(self, x) -> "Configuration":
        return Configuration(np.vstack([self.points, np.reshape(x, (1, self.dim))]),
                             self.box_length, self.dim)

    def contains(self, x) -> bool:
        x = np.reshape(np.asarray(x, dtype=float), (self.dim,))
        return bool(np.any(np.all(self.points == x, axis=1)))

    def disjoint(self, other: "Configuration") -> bool:
        a = {tuple(p) for p in self.points}
        return not any(tuple(p) in a for p in other.points)

    def subsets(self):
        """All subconfigurations, as index tuples."""
        n = len(self)
        for k in range(n + 1):
            yield from itertools.combinations(range(n), k)


def displacement(x, y, box_length: float | None = None) -> np.ndarray:
    """``x - y``, using the minimal image on the torus."""
    dv = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    if box_length is not None:
        dv = dv - box_length * np.round(dv / box_length)
    return dv


def _kval(kernel: KernelSpec, x, y, L) -> float:
    dv = displacement(x, y, L)
    return kernel.radial_scalar(math.sqrt(float(np.dot(dv, dv))))


@dataclass(frozen=True)
class RatePackage:
    """Model parameters together with the scaling parameter ``epsilon``."""

    params: ModelParams
    epsilon: float = 1.0

    def __post_init__(self):
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")

    @property
    def kappa(self):
        return self.params.kappa

    @property
    def a_plus(self):
        return self.params.a_plus

    @property
    def b_plus(self):
        return self.params.b_eff

    @property
    def phi(self):
        return self.params.phi


# ---------------------------------------------------------------------------
# energies and rates


def energy(x, gamma: Configuration, phi: KernelSpec) -> float:
    """Sum of ``phi(x - y)`` over ``y`` in ``gamma`` other than ``x`` itself."""
    x = np.reshape(np.asarray(x, dtype=float), (gamma.dim,))
    total = 0.0
    for y in gamma.points:
        if np.array_equal(y, x):
            continue
        total += _kval(phi, x, y, gamma.box_length)
    return total


def _dispersal_weight(y, others, pkg: RatePackage, L, scale=1.0) -> float:
    """``kappa + scale * sum_{y'} b+(y - y')``."""
    w = pkg.kappa
    b = pkg.b_plus
    if not b.is_zero:
        w += scale * sum(_kval(b, y, yp, L) for yp in others)
    return w


def birth_rate_establishment(x, gamma: Configuration, pkg: RatePackage) -> float:
    """Establishment birth density at ``x``, kernels scaled by ``pkg.epsilon``."""
    eps = pkg.epsilon
    L = gamma.box_length
    pts = gamma.points
    total = 0.0
    for i, y in enumerate(pts):
        a = _kval(pkg.a_plus, x, y, L)
        if a == 0.0:
            continue
        others = [pts[j] for j in range(len(pts)) if j != i]
        total += eps * a * _dispersal_weight(y, others, pkg, L, eps)
    if total == 0.0:
        return 0.0
    return math.exp(-eps * energy(x, gamma, pkg.phi)) * total


def birth_rate_fecundity(x, gamma: Configuration, pkg: RatePackage) -> float:
    """Fecundity birth density at ``x``; suppression evaluated at each parent."""
    eps = pkg.epsilon
    L = gamma.box_length
    pts = gamma.points
    total = 0.0
    for i, y in enumerate(pts):
        a = _kval(pkg.a_plus, x, y, L)
        if a == 0.0:
            continue
        others = [pts[j] for j in range(len(pts)) if j != i]
        s = sum(_kval(pkg.phi, y, yp, L) for yp in others)
        total += math.exp(-eps * s) * eps * a * _dispersal_weight(y, others, pkg, L, eps)
    return total


def birth_rate(x, gamma: Configuration, pkg: RatePackage, mechanism=None) -> float:
    mech = Mechanism(mechanism or pkg.params.mechanism)
    if mech is Mechanism.ESTABLISHMENT:
        return birth_rate_establishment(x, gamma, pkg)
    return birth_rate_fecundity(x, gamma, pkg)


def coherent_state(f: Callable, eta: Configuration) -> float:
    """``prod_{x in eta} f(x)``; equals 1 on the empty configuration."""
    out = 1.0
    for p in eta.points:
        out *= f(p)
    return out


# ---------------------------------------------------------------------------
# K-transform


def _check_size(n: int):
    if n > MAX_SUBSET_CARDINALITY:
        raise CardinalityError(
            f"subset enumeration limited to {MAX_SUBSET_CARDINALITY} points, got {n}"
        )


def k_transform(G: Callable[[Configuration], float], gamma: Configuration) -> float:
    """``(K G)(gamma)``: sum of ``G`` over all subconfigurations."""
    _check_size(len(gamma))
    return math.fsum(G(gamma.subset(idx)) for idx in gamma.subsets())


def kinv_inclusion_exclusion(F: Callable[[Configuration], float], eta: Configuration) -> float:
    """``(K^{-1} F)(eta)`` by the alternating sum over subconfigurations."""
    n = len(eta)
    _check_size(n)
    terms = []
    for idx in eta.subsets():
        sign = -1.0 if (n - len(idx)) % 2 else 1.0
        terms.append(sign * F(eta.subset(idx)))
    return math.fsum(terms)


def kinv_sum_form(H: Callable, eta: Configuration) -> float:
    """``K^{-1}`` of ``F(gamma) = sum_{x in gamma} H(x, gamma minus x)`` evaluated at ``eta``.

    ``H(x, zeta)`` receives a point and a Configuration.
    """
    _check_size(len(eta))
    return math.fsum(
        kinv_inclusion_exclusion(lambda zeta, x=x: H(x, zeta), eta.without(i))
        for i, x in enumerate(eta.points)
    )


# ---------------------------------------------------------------------------
# closed-form expansions of K0^{-1} b(x, xi u .)


class _Tables:
    """Kernel values needed by the expansions, with minimal-image distances."""

    def __init__(self, x, xi: Configuration, eta: Configuration, pkg: RatePackage):
        if not xi.disjoint(eta):
            raise OverlapError("xi and eta must be disjoint")
        _check_size(len(eta))
        L = xi.box_length if xi.box_length is not None else eta.box_length
        self.x = np.reshape(np.asarray(x, dtype=float), (xi.dim,))
        self.L = L
        self.xi = xi.points
        self.eta = eta.points
        self.pkg = pkg
        a, b, phi = pkg.a_plus, pkg.b_plus, pkg.phi
        k = lambda ker, p, q: _kval(ker, p, q, L)
        X, E = self.xi, self.eta
        self.a_x_xi = np.array([k(a, self.x, y) for y in X])
        self.a_x_eta = np.array([k(a, self.x, y) for y in E])
        self.phi_x_xi = np.array([k(phi, self.x, y) for y in X])
        self.phi_x_eta = np.array([k(phi, self.x, y) for y in E])
        self.b_xi_xi = np.array([[k(b, p, q) for q in X] for p in X]).reshape(len(X), len(X))
        self.b_xi_eta = np.array([[k(b, p, q) for q in E] for p in X]).reshape(len(X), len(E))
        self.b_eta_eta = np.array([[k(b, p, q) for q in E] for p in E]).reshape(len(E), len(E))
        self.phi_xi_xi = np.array([[k(phi, p, q) for q in X] for p in X]).reshape(len(X), len(X))
        self.phi_xi_eta = np.array([[k(phi, p, q) for q in E] for p in X]).reshape(len(X), len(E))
        self.phi_eta_eta = np.array([[k(phi, p, q) for q in E] for p in E]).reshape(len(E), len(E))
        np.fill_diagonal(self.b_xi_xi, 0.0)
        np.fill_diagonal(self.b_eta_eta, 0.0)
        np.fill_diagonal(self.phi_xi_xi, 0.0)
        np.fill_diagonal(self.phi_eta_eta, 0.0)


def _prod_except(values: np.ndarray, *skip: int) -> float:
    out = 1.0
    for i, v in enumerate(values):
        if i not in skip:
            out *= v
    return out


def _establishment_expansion(t: _Tables, eps: float, limit: bool = False) -> float:
    """Four-term establishment expansion of ``eps^{-|eta|} K0^{-1} b_eps``.

    With ``eps == 1`` this is the unscaled expansion; ``limit`` drops the
    vanishing terms and evaluates the eps -> 0 kernel.
    """
    kappa = t.pkg.kappa
    n_xi, n_eta = len(t.xi), len(t.eta)
    if limit:
        coh = -t.phi_x_eta
        supp = np.ones(n_eta)
        pref = 1.0
        eps = 0.0
    else:
        supp = np.exp(-eps * t.phi_x_eta)
        coh = np.expm1(-eps * t.phi_x_eta) / eps
        pref = math.exp(-eps * float(np.sum(t.phi_x_xi)))

    terms = []
    if not limit:
        # parents and partners inside xi
        inner = sum(
            t.a_x_xi[i] * (kappa + eps * float(np.sum(t.b_xi_xi[i])))
            for i in range(n_xi)
        )
        terms.append(eps * _prod_except(coh) * pref * inner)
        # parent in xi, partner in eta
        for j in range(n_eta):
            s = sum(t.a_x_xi[i] * t.b_xi_eta[i, j] for i in range(n_xi))
            terms.append(eps * pref * s * supp[j] * _prod_except(coh, j))
    # parent in eta
    for j in range(n_eta):
        w = kappa + eps * float(np.sum(t.b_xi_eta[:, j])) if n_xi else kappa
        terms.append(pref * _prod_except(coh, j) * t.a_x_eta[j] * supp[j] * w)
    # parent and partner in eta
    for j in range(n_eta):
        for k in range(n_eta):
            if k == j:
                continue
            terms.append(
                pref * t.a_x_eta[j] * t.b_eta_eta[j, k] * supp[j] * supp[k]
                * _prod_except(coh, j, k)
            )
    return math.fsum(terms)


def _fecundity_expansion(t: _Tables, eps: float, limit: bool = False) -> float:
    """Four-term fecundity expansion; see :func:`_establishment_expansion`."""
    kappa = t.pkg.kappa
    n_xi, n_eta = len(t.xi), len(t.eta)
    if limit:
        coh_eta = -t.phi_eta_eta
        supp_eta = np.ones_like(t.phi_eta_eta)
        eps = 0.0
    else:
        coh_eta = np.expm1(-eps * t.phi_eta_eta) / eps
        supp_eta = np.exp(-eps * t.phi_eta_eta)
    terms = []
    for j in range(n_eta):
        e_xi = 1.0 if limit else math.exp(-eps * float(np.sum(t.phi_xi_eta[:, j])))
        w = kappa + eps * float(np.sum(t.b_xi_eta[:, j])) if n_xi else kappa
        # parent in eta
        terms.append(e_xi * _prod_except(coh_eta[j], j) * t.a_x_eta[j] * w)
        # parent and partner in eta
        for k in range(n_eta):
            if k == j:
                continue
            terms.append(
                e_xi * t.a_x_eta[j] * t.b_eta_eta[j, k] * supp_eta[j, k]
                * _prod_except(coh_eta[j], j, k)
            )
    if not limit:
        coh_xi = np.expm1(-eps * t.phi_xi_eta) / eps
        supp_xi = np.exp(-eps * t.phi_xi_eta)
        for i in range(n_xi):
            e_own = math.exp(-eps * float(np.sum(t.phi_xi_xi[i])))
            # parent in xi, partners in xi
            w = kappa + eps * float(np.sum(t.b_xi_xi[i]))
            terms.append(eps * _prod_except(coh_xi[i]) * e_own * t.a_x_xi[i] * w)
            # parent in xi, partner in eta
            for j in range(n_eta):
                terms.append(
                    eps * _prod_except(coh_xi[i], j) * supp_xi[i, j] * e_own
                    * t.a_x_xi[i] * t.b_xi_eta[i, j]
                )
    return math.fsum(terms)


def kinv_birth_closed_form(x, xi: Configuration, eta: Configuration, pkg: RatePackage,
                           mechanism=None) -> float:
    """Closed form of ``(K0^{-1} b(x, xi u .))(eta)`` for the unscaled rate."""
    mech = Mechanism(mechanism or pkg.params.mechanism)
    t = _Tables(x, xi, eta, RatePackage(pkg.params, 1.0))
    if mech is Mechanism.ESTABLISHMENT:
        return _establishment_expansion(t, 1.0)
    return _fecundity_expansion(t, 1.0)


def kinv_birth_scaled(x, xi: Configuration, eta: Configuration, pkg: RatePackage,
                      mechanism=None) -> float:
    """``eps^{-|eta|} (K0^{-1} b_eps(x, xi u .))(eta)`` via the scaled expansion,
    ``b_eps`` being the rate built from ``eps*a+``, ``eps*b+``, ``eps*phi``."""
    mech = Mechanism(mechanism or pkg.params.mechanism)
    t = _Tables(x, xi, eta, pkg)
    if mech is Mechanism.ESTABLISHMENT:
        return _establishment_expansion(t, pkg.epsilon)
    return _fecundity_expansion(t, pkg.epsilon)


def vlasov_kernel(x, eta: Configuration, pkg: RatePackage, mechanism=None,
                  xi: Configuration | None = None) -> float:
    """Pointwise eps -> 0 limit of :func:`kinv_birth_scaled`.

    The limit does not involve ``xi``; the argument is accepted so callers
    can confirm that.
    """
    mech = Mechanism(mechanism or pkg.params.mechanism)
    xi = xi if xi is not None else Configuration((), eta.box_length, eta.dim)
    t = _Tables(x, xi, eta, pkg)
    if mech is Mechanism.ESTABLISHMENT:
        return _establishment_expansion(t, 0.0, limit=True)
    return _fecundity_expansion(t, 0.0, limit=True)


def psi_eps(phi_values, eps: float):
    """``(exp(-eps*phi) - 1) / eps``."""
    return np.expm1(-eps * np.asarray(phi_values, dtype=float)) / eps


# ---------------------------------------------------------------------------
# generator images on quasi-observables (finite-configuration evaluators)


def generator_image(G: Callable[[Configuration], float], eta: Configuration, pkg: RatePackage,
                    nodes: np.ndarray, weights: np.ndarray, mechanism=None) -> float:
    """``-m|eta| G(eta) + sum_{xi in eta} int G(xi u x) (K0^{-1} b(x, . u xi))(eta - xi) dx``.

    The ``dx`` integral uses the supplied quadrature ``nodes`` (shape (q, d))
    and ``weights``.
    """
    m = pkg.params.m
    total = -m * len(eta) * G(eta)
    nodes = np.reshape(nodes, (len(weights), eta.dim))
    for idx in eta.subsets():
        xi = eta.subset(idx)
        rest = eta.without(*idx)
        acc = 0.0
        for x, w in zip(nodes, weights):
            if xi.contains(x):
                continue
            acc += w * G(xi.add(x)) * kinv_birth_closed_form(x, xi, rest, pkg, mechanism)
        total += acc
    return total


def vlasov_generator_image(G: Callable[[Configuration], float], eta: Configuration,
                           pkg: RatePackage, nodes: np.ndarray, weights: np.ndarray,
                           mechanism=None) -> float:
    """Same as :func:`generator_image` with the limit kernel in place of ``K0^{-1} b``."""
    m = pkg.params.m
    total = -m * len(eta) * G(eta)
    nodes = np.reshape(nodes, (len(weights), eta.dim))
    for idx in eta.subsets():
        xi = eta.subset(idx)
        rest = eta.without(*idx)
        for x, w in zip(nodes, weights):
            if xi.contains(x):
                continue
            total += w * G(xi.add(x)) * vlasov_kernel(x, rest, pkg, mechanism)
    return total


def markov_generator(F: Callable[[Configuration], float], gamma: Configuration, pkg: RatePackage,
                     nodes: np.ndarray, weights: np.ndarray, mechanism=None) -> float:
    """Birth-death generator applied to an observable ``F`` at a finite ``gamma``."""
    m = pkg.params.m
    Fg = F(gamma)
    total = m * math.fsum(F(gamma.without(i)) - Fg for i in range(len(gamma)))
    nodes = np.reshape(nodes, (len(weights), gamma.dim))
    for x, w in zip(nodes, weights):
        if gamma.contains(x):
            continue
        total += w * birth_rate(x, gamma, pkg, mechanism) * (F(gamma.add(x)) - Fg)
    return total


# ---------------------------------------------------------------------------
# Lebesgue-Poisson integration


@dataclass(frozen=True)
class LPEstimate:
    value: float
    stderr: float
    truncation_bound: float | None = None
    n_max: int = 0


def _box(box, d):
    lo, hi = box
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (d,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (d,))
    return lo, hi, float(np.prod(hi - lo))


def _batch_eval(G, pts: np.ndarray, batch: bool) -> np.ndarray:
    if batch:
        return np.asarray(G(pts), dtype=float)
    return np.array([G(Configuration(p)) for p in pts])


def lp_integral(G: Callable, C: float = 1.0, n_max: int = 10, mc_samples: int = 100_000,
                box=((-1.0,), (1.0,)), dim: int = 1, rng: np.random.Generator | None = None,
                batch: bool = False, majorant_mass: float | None = None) -> LPEstimate:
    """Monte Carlo estimate of ``int G(eta) C^|eta| dlambda(eta)``.

    Strata ``|eta| = n`` for ``n <= n_max`` share ``mc_samples`` equally;
    each stratum samples ``n`` uniform points in ``box``.  With ``batch``
    set, ``G`` receives an array of shape (samples, n, dim) and returns
    one value per sample.  ``majorant_mass`` (``int |f|`` for a coherent
    majorant ``|G| <= e(|f|)``) enables the truncation bound.
    """
    rng = rng or np.random.default_rng()
    lo, hi, vol = _box(box, dim)
    empty = np.zeros((1, 0, dim)) if batch else Configuration((), dim=dim)
    value = float(_batch_eval(G, empty, True)[0]) if batch else float(G(empty))
    var = 0.0
    per = max(mc_samples // max(n_max, 1), 2)
    for n in range(1, n_max + 1):
        pts = lo + (hi - lo) * rng.random((per, n, dim))
        vals = _batch_eval(G, pts, batch)
        w = C**n * vol**n / math.factorial(n)
        value += w * vals.mean()
        var += w * w * vals.var(ddof=1) / per
    bound = None
    if majorant_mass is not None:
        cm = C * majorant_mass
        bound = max(math.exp(cm) - sum(cm**n / math.factorial(n) for n in range(n_max + 1)), 0.0)
    return LPEstimate(value, math.sqrt(var), bound, n_max)


def minlos_sides(H: Callable, C: float = 1.0, n_max: int = 8, mc_samples: int = 100_000,
                 box=((-1.0,), (1.0,)), dim: int = 1, rng: np.random.Generator | None = None
                 ) -> tuple[LPEstimate, LPEstimate]:
    """Estimate both sides of the Minlos-type identity

    ``int sum_{xi in eta} H(xi, eta - xi, eta) dl(eta) = int int H(xi, eta, eta u xi) dl dl``.

    ``H(pts, mask)`` is evaluated in batch: ``pts`` has shape (samples, n, dim)
    and the boolean ``mask`` of length ``n`` marks the points of the first
    argument; the unmarked points form the second argument and all of
    them the third.
    """
    rng = rng or np.random.default_rng()
    lo, hi, vol = _box(box, dim)

    # left side: strata in |eta|
    lhs_val, lhs_var = 0.0, 0.0
    per = max(mc_samples // (n_max + 1), 2)
    for n in range(0, n_max + 1):
        pts = lo + (hi - lo) * rng.random((per, n, dim))
        acc = np.zeros(per)
        for k in range(n + 1):
            for idx in itertools.combinations(range(n), k):
                mask = np.zeros(n, dtype=bool)
                mask[list(idx)] = True
                acc += H(pts, mask)
        w = C**n * vol**n / math.factorial(n)
        lhs_val += w * acc.mean()
        lhs_var += w * w * acc.var(ddof=1) / per

    # right side: strata in (|xi|, |eta|)
    strata = [(i, j) for i in range(n_max + 1) for j in range(n_max + 1 - i)]
    per = max(mc_samples // len(strata), 2)
    rhs_val, rhs_var = 0.0, 0.0
    for i, j in strata:
        n = i + j
        pts = lo + (hi - lo) * rng.random((per, n, dim))
        mask = np.zeros(n, dtype=bool)
        mask[:i] = True
        vals = H(pts, mask)
        w = C**n * vol**n / (math.factorial(i) * math.factorial(j))
        rhs_val += w * vals.mean()
        rhs_var += w * w * vals.var(ddof=1) / per
    return (LPEstimate(lhs_val, math.sqrt(lhs_var), None, n_max),
            LPEstimate(rhs_val, math.sqrt(rhs_var), None, n_max))


def coherent_batch(f: Callable[[np.ndarray], np.ndarray]) -> Callable[[np.ndarray], np.ndarray]:
    """Batched coherent state: maps (samples, n, d) points to ``prod f``."""

    def G(pts):
        if pts.shape[1] == 0:
            return np.ones(pts.shape[0])
        return np.prod(f(pts), axis=1)

    return G
