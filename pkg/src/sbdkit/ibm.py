"""Exact stochastic simulation of the spatial birth-death process on a torus.

Events are generated by the Gillespie construction.  Under establishment the
birth part runs as a dominating proposal process (parent weight
``kappa + F(y)``) thinned by ``exp(-E(x, gamma))`` at the landing site, and a
rejected proposal advances the clock without changing the state.  Under
fecundity parents are drawn with their exact weight ``exp(-S(y)) (kappa + F(y))``.

Per-particle sums ``S(y) = sum phi(y - y')`` and ``F(y) = sum b+(y - y')``
are maintained incrementally through a cell list.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .kernels import KernelSpec, sample_displacement
from .model import Mechanism, ModelParams

AUDIT_EVERY = 10_000
AUDIT_TOL = 1e-9
MIN_BOX_CUTOFFS = 10.0


class CacheAuditError(AssertionError):
    pass


class DomainError(ValueError):
    pass


def _min_image(dv: np.ndarray, L: float) -> np.ndarray:
    return dv - L * np.round(dv / L)


def _interaction_range(params: ModelParams) -> float:
    r = 0.0
    for k in (params.phi, params.b_eff):
        if not k.is_zero:
            r = max(r, k.cutoff)
    return r


def seed_for(seed: int, replica: int) -> np.random.SeedSequence:
    """Independent stream for one replica; the replica index is mixed into the seed."""
    return np.random.SeedSequence([int(seed), int(replica)])


@dataclass(frozen=True)
class Event:
    t: float
    kind: str  # birth | death | rejected
    particle: int  # persistent id of the newborn, the deceased or the would-be parent
    position: tuple


@dataclass
class Trajectory:
    times: np.ndarray
    counts: np.ndarray
    births: np.ndarray
    deaths: np.ndarray
    rejections: np.ndarray
    snapshots: list = field(default_factory=list)  # (t, ids, points)
    extinct: bool = False
    extinction_time: float | None = None
    initial_count: int = 0
    seed: object = None
    events: list | None = None

    def snapshot_at(self, t: float):
        for ts, ids, pts in self.snapshots:
            if abs(ts - t) <= 1e-12 * max(1.0, abs(t)):
                return pts
        raise KeyError(f"no snapshot at t={t}")


class Simulator:
    """Single-writer simulation state: configuration, caches and clock."""

    def __init__(self, params: ModelParams, box_length: float, points=None, *,
                 mechanism=None, rng=None, audit_every: int = AUDIT_EVERY,
                 audit_tol: float = AUDIT_TOL, record_events: bool = False):
        self.params = params
        self.mechanism = Mechanism(mechanism or params.mechanism)
        self.L = float(box_length)
        self.d = params.dim
        if params.a_plus.is_zero:
            raise DomainError("dispersal kernel must be nonzero")
        largest = max(k.cutoff for k in (params.a_plus, params.phi, params.b_eff) if not k.is_zero)
        if not math.isfinite(largest):
            raise DomainError("kernels need a finite cutoff for torus simulation")
        r_int = _interaction_range(params)
        if self.L < MIN_BOX_CUTOFFS * r_int:
            raise DomainError(
                f"box length {self.L} must be at least {MIN_BOX_CUTOFFS:g} x interaction cutoff {r_int}"
            )
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.phi = params.phi
        self.b = params.b_eff
        self.kappa = params.kappa
        self.m = params.m
        self.interacting = r_int > 0
        self.audit_every = audit_every
        self.audit_tol = audit_tol
        self.events = [] if record_events else None
        self.max_audit_error = 0.0
        self.audits = 0

        # cell list
        self.nc = max(3, int(self.L // r_int)) if self.interacting else 1
        self.cell_size = self.L / self.nc
        n_cells = self.nc**self.d
        self.cells = [set() for _ in range(n_cells)]
        offs = np.array(np.meshgrid(*([[-1, 0, 1]] * self.d), indexing="ij")).reshape(self.d, -1).T
        self.neighbor_cells = []
        for c in range(n_cells):
            base = np.array(np.unravel_index(c, (self.nc,) * self.d))
            nb = {int(np.ravel_multi_index(tuple((base + o) % self.nc), (self.nc,) * self.d))
                  for o in offs}
            self.neighbor_cells.append(tuple(sorted(nb)))

        cap = 64
        self.pos = np.zeros((cap, self.d))
        self.ids = np.zeros(cap, dtype=np.int64)
        self.S = np.zeros(cap)
        self.F = np.zeros(cap)
        self.cell_of = np.zeros(cap, dtype=np.int64)
        self.n = 0
        self.next_id = 0
        self.t = 0.0
        self.births = self.deaths = self.rejections = 0
        self.n_events = 0
        pts = np.zeros((0, self.d)) if points is None else np.asarray(points, dtype=float)
        pts = np.mod(pts.reshape(-1, self.d), self.L)
        for x in pts:
            self._insert(x)
        self.initial_count = self.n

    # -- storage ---------------------------------------------------------

    def _cell(self, x) -> int:
        if self.nc == 1:
            return 0
        idx = np.minimum((x // self.cell_size).astype(np.int64), self.nc - 1)
        return int(np.ravel_multi_index(tuple(idx), (self.nc,) * self.d))

    def _grow(self):
        cap = 2 * len(self.pos)
        for name in ("pos", "ids", "S", "F", "cell_of"):
            old = getattr(self, name)
            new = np.zeros((cap,) + old.shape[1:], dtype=old.dtype)
            new[: self.n] = old[: self.n]
            setattr(self, name, new)

    def _neighbors(self, x):
        """Slots in the 3^d cells around ``x`` with kernel values of phi and b+."""
        c = self._cell(x)
        idx = []
        for k in self.neighbor_cells[c]:
            idx.extend(self.cells[k])
        idx = np.fromiter(idx, dtype=np.int64, count=len(idx))
        if idx.size == 0:
            return idx, idx.astype(float), idx.astype(float)
        dv = _min_image(self.pos[idx] - x, self.L)
        r = np.sqrt(np.einsum("ij,ij->i", dv, dv))
        phi_v = self.phi.radial(r) if not self.phi.is_zero else np.zeros(r.size)
        b_v = self.b.radial(r) if not self.b.is_zero else np.zeros(r.size)
        return idx, phi_v, b_v

    def energy(self, x) -> float:
        """``E(x, gamma)`` for a site not occupied by the configuration."""
        if not self.interacting or self.phi.is_zero:
            return 0.0
        _, phi_v, _ = self._neighbors(np.asarray(x, dtype=float))
        return float(phi_v.sum())

    def _insert(self, x) -> int:
        if self.n == len(self.pos):
            self._grow()
        i = self.n
        s = f = 0.0
        if self.interacting:
            idx, phi_v, b_v = self._neighbors(x)
            if idx.size:
                self.S[idx] += phi_v
                self.F[idx] += b_v
                s, f = float(phi_v.sum()), float(b_v.sum())
        self.pos[i] = x
        self.ids[i] = self.next_id
        self.next_id += 1
        self.S[i], self.F[i] = s, f
        c = self._cell(x)
        self.cell_of[i] = c
        self.cells[c].add(i)
        self.n += 1
        return int(self.ids[i])

    def _remove(self, i: int) -> int:
        pid = int(self.ids[i])
        x = self.pos[i].copy()
        self.cells[self.cell_of[i]].discard(i)
        if self.interacting:
            idx, phi_v, b_v = self._neighbors(x)
            if idx.size:
                self.S[idx] -= phi_v
                self.F[idx] -= b_v
        last = self.n - 1
        if i != last:
            self.cells[self.cell_of[last]].discard(last)
            for name in ("pos", "ids", "S", "F", "cell_of"):
                arr = getattr(self, name)
                arr[i] = arr[last]
            self.cells[self.cell_of[i]].add(i)
        self.n -= 1
        return pid

    # -- rates -------------------------------------------------------------

    @property
    def points(self) -> np.ndarray:
        return self.pos[: self.n].copy()

    @property
    def particle_ids(self) -> np.ndarray:
        return self.ids[: self.n].copy()

    def total_death_rate(self) -> float:
        return self.m * self.n

    def parent_weights(self) -> np.ndarray:
        """Per-parent birth intensity (proposal intensity under establishment)."""
        w = self.kappa + self.F[: self.n]
        if self.mechanism is Mechanism.FECUNDITY and self.interacting:
            w = w * np.exp(-self.S[: self.n])
        return w

    def total_birth_rate(self) -> float:
        """Exact total birth intensity (fecundity) or its dominating proposal
        intensity (establishment)."""
        return float(self.parent_weights().sum()) if self.n else 0.0

    def total_rate(self) -> float:
        return self.total_death_rate() + self.total_birth_rate()

    def acceptance_probability(self, x) -> float:
        if self.mechanism is Mechanism.FECUNDITY:
            return 1.0
        return math.exp(-self.energy(x))

    # -- proposals ---------------------------------------------------------

    def propose_birth(self, weights=None):
        """Parent slot and landing site of a birth proposal; the state is untouched."""
        w = self.parent_weights() if weights is None else weights
        cw = np.cumsum(w)
        u = self.rng.random() * cw[-1]
        parent = min(int(np.searchsorted(cw, u, side="right")), self.n - 1)
        disp = sample_displacement(self.params.a_plus, self.rng, 1)[0]
        x = np.mod(self.pos[parent] + disp, self.L)
        return parent, x

    def sample_waiting_time(self) -> float:
        R = self.total_rate()
        return self.rng.exponential(1.0 / R) if R > 0 else math.inf

    # -- dynamics ----------------------------------------------------------

    def step(self, horizon: float = math.inf, on_time=None):
        """Perform one event.

        Returns the :class:`Event`, ``None`` on extinction (zero total rate),
        or ``"horizon"`` when the next event would fall after ``horizon``; in
        that case the clock is set to ``horizon`` and the state is unchanged.
        ``on_time(t_next)`` is called before the state changes.
        """
        w = self.parent_weights() if self.n else np.zeros(0)
        birth_total = float(w.sum()) if self.n else 0.0
        death_total = self.m * self.n
        R = birth_total + death_total
        if R <= 0:
            return None
        t_next = self.t + self.rng.exponential(1.0 / R)
        if t_next > horizon:
            self.t = horizon
            return "horizon"
        if on_time is not None:
            on_time(t_next)
        self.t = t_next
        self.n_events += 1
        if self.rng.random() * R < death_total:
            i = int(self.rng.integers(self.n))
            x = tuple(self.pos[i])
            pid = self._remove(i)
            self.deaths += 1
            ev = Event(self.t, "death", pid, x)
        else:
            parent, x = self.propose_birth(w)
            ppid = int(self.ids[parent])
            accept = True
            if self.mechanism is Mechanism.ESTABLISHMENT and self.interacting:
                accept = self.rng.random() < math.exp(-self.energy(x))
            if accept:
                pid = self._insert(x)
                self.births += 1
                ev = Event(self.t, "birth", pid, tuple(x))
            else:
                self.rejections += 1
                ev = Event(self.t, "rejected", ppid, tuple(x))
        if self.events is not None:
            self.events.append(ev)
        if self.audit_every and self.n_events % self.audit_every == 0:
            self.audit()
        return ev

    def direct_sums(self):
        """Recompute S and F from scratch by pairwise summation."""
        n = self.n
        S = np.zeros(n)
        F = np.zeros(n)
        if n < 2 or not self.interacting:
            return S, F
        pts = self.pos[:n]
        for lo in range(0, n, 512):
            dv = _min_image(pts[lo:lo + 512, None, :] - pts[None, :, :], self.L)
            r = np.sqrt(np.sum(dv * dv, axis=-1))
            for j in range(min(512, n - lo)):
                r[j, lo + j] = np.inf
            if not self.phi.is_zero:
                S[lo:lo + 512] = self.phi.radial(r).sum(axis=1)
            if not self.b.is_zero:
                F[lo:lo + 512] = self.b.radial(r).sum(axis=1)
        return S, F

    def audit(self) -> float:
        S, F = self.direct_sums()
        err = 0.0
        if self.n:
            err = max(float(np.max(np.abs(S - self.S[: self.n]))),
                      float(np.max(np.abs(F - self.F[: self.n]))))
        self.audits += 1
        self.max_audit_error = max(self.max_audit_error, err)
        if err > self.audit_tol:
            raise CacheAuditError(f"cached sums drifted by {err:.3g} after {self.n_events} events")
        for c, members in enumerate(self.cells):
            for i in members:
                if i >= self.n or self.cell_of[i] != c:
                    raise CacheAuditError("cell registry inconsistent")
        if sum(len(c) for c in self.cells) != self.n:
            raise CacheAuditError("cell registry inconsistent")
        return err

    def run(self, t_end: float, sample_dt: float | None = None, snapshot_times=(),
            max_events: int | None = None) -> Trajectory:
        """Advance to ``t_end``; counts on a regular grid, snapshots at the given times.

        The recorded state at time ``s`` is the one holding on the event
        interval containing ``s``.
        """
        t0 = self.t
        if sample_dt is None or sample_dt <= 0:
            sample_dt = t_end - t0 if t_end > t0 else 1.0
        n_samples = int(math.floor((t_end - t0) / sample_dt + 1e-9)) if t_end > t0 else 0
        sample_t = [t0 + k * sample_dt for k in range(n_samples + 1)]
        snap_t = sorted(float(s) for s in set(snapshot_times) if t0 <= s <= t_end)
        rec = {"t": [], "n": [], "b": [], "d": [], "r": []}
        snaps = []
        cursor = [0, 0]

        def record_before(limit, inclusive=False):
            while cursor[0] < len(sample_t) and (sample_t[cursor[0]] < limit or
                                                 (inclusive and sample_t[cursor[0]] <= limit)):
                rec["t"].append(sample_t[cursor[0]]); rec["n"].append(self.n)
                rec["b"].append(self.births); rec["d"].append(self.deaths)
                rec["r"].append(self.rejections)
                cursor[0] += 1
            while cursor[1] < len(snap_t) and (snap_t[cursor[1]] < limit or
                                               (inclusive and snap_t[cursor[1]] <= limit)):
                snaps.append((snap_t[cursor[1]], self.particle_ids, self.points))
                cursor[1] += 1

        extinct, t_ext = False, None
        events = 0
        while True:
            ev = self.step(t_end, on_time=record_before)
            if ev is None:
                extinct, t_ext = True, self.t
                break
            if ev == "horizon":
                break
            events += 1
            if max_events is not None and events >= max_events:
                break
        record_before(t_end, inclusive=True)
        return Trajectory(np.array(rec["t"]), np.array(rec["n"], dtype=np.int64),
                          np.array(rec["b"], dtype=np.int64), np.array(rec["d"], dtype=np.int64),
                          np.array(rec["r"], dtype=np.int64), snaps, extinct, t_ext,
                          self.initial_count, None, self.events)


# ---------------------------------------------------------------------------
# replicas and scaling


def simulate(params: ModelParams, box_length: float, points, t_end: float, *, seed=0,
             replica: int = 0, sample_dt=None, snapshot_times=(), mechanism=None,
             record_events=False, audit_every=AUDIT_EVERY) -> Trajectory:
    ss = seed_for(seed, replica)
    sim = Simulator(params, box_length, points, mechanism=mechanism, rng=np.random.default_rng(ss),
                    record_events=record_events, audit_every=audit_every)
    traj = sim.run(t_end, sample_dt, snapshot_times)
    traj.seed = (int(seed), int(replica))
    return traj


def run_replicas(params: ModelParams, box_length: float, initial, t_end: float, n_replicas: int,
                 *, seed=0, sample_dt=None, snapshot_times=(), mechanism=None) -> list[Trajectory]:
    """Independent replicas; ``initial(rng)`` draws the starting configuration
    from the replica's own stream (or pass a fixed point array)."""
    out = []
    for k in range(n_replicas):
        rng = np.random.default_rng(seed_for(seed, k))
        pts = initial(rng) if callable(initial) else initial
        sim = Simulator(params, box_length, pts, mechanism=mechanism, rng=rng)
        traj = sim.run(t_end, sample_dt, snapshot_times)
        traj.seed = (int(seed), k)
        out.append(traj)
    return out


def apply_vlasov_scaling(params: ModelParams, eps: float) -> tuple[ModelParams, float]:
    """Effective parameters of the scaled process and the initial-density multiplier ``1/eps``.

    The scaled birth rate ``eps^-1 b(eps a+, eps b+, eps phi)`` equals the
    unscaled rate with ``b+`` and ``phi`` multiplied by ``eps``.
    """
    return params.scaled(eps), 1.0 / eps


def poisson_configuration(rho0, box_length: float, dim: int, rng, multiplier: float = 1.0):
    """Poisson points with intensity ``multiplier * rho0``.

    ``rho0`` is a nonnegative constant or a :class:`~sbdkit.kinetics.DensityField`
    (piecewise constant on its cells).
    """
    L = float(box_length)
    if np.isscalar(rho0):
        if rho0 < 0:
            raise ValueError("initial density must be nonnegative")
        n = rng.poisson(multiplier * rho0 * L**dim)
        return rng.random((n, dim)) * L
    vals = np.asarray(rho0.values, dtype=float)
    if np.any(vals < 0):
        raise ValueError("initial density must be nonnegative")
    g = rho0.grid
    counts = rng.poisson(multiplier * vals * g.cell_volume)
    cells = np.repeat(np.arange(vals.size), counts.ravel())
    corner = np.stack(np.unravel_index(cells, g.shape), axis=-1) * g.spacing
    return corner + rng.random((cells.size, dim)) * g.spacing


# ---------------------------------------------------------------------------
# estimators


@dataclass
class DensityEstimate:
    values: np.ndarray
    stderr: np.ndarray
    grid: object
    n_snapshots: int
    empty: bool

    def field(self):
        from .kinetics import DensityField
        return DensityField(self.values, self.grid)


def _points_of(snap):
    return snap[2] if isinstance(snap, tuple) else np.asarray(snap, dtype=float)


def estimate_density(snapshots, grid, scale: float = 1.0) -> DensityEstimate:
    """Histogram density on ``grid`` averaged over snapshots (one per replica).

    Each snapshot is a point array or a ``(t, ids, points)`` tuple.  Values are
    multiplied by ``scale`` (``eps`` for scaled runs).
    """
    if len(snapshots) == 0:
        raise ValueError("need at least one snapshot")
    edges = [np.linspace(0.0, grid.length, grid.n + 1)] * grid.dim
    dens = []
    total = 0
    for s in snapshots:
        pts = _points_of(s).reshape(-1, grid.dim)
        total += len(pts)
        h, _ = np.histogramdd(pts, bins=edges)
        dens.append(h * (scale / grid.cell_volume))
    dens = np.array(dens)
    mean = dens.mean(axis=0)
    se = dens.std(axis=0, ddof=1) / math.sqrt(len(dens)) if len(dens) > 1 else np.zeros_like(mean)
    return DensityEstimate(mean, se, grid, len(dens), total == 0)


@dataclass
class PairCorrelation:
    r: np.ndarray
    g: np.ndarray
    stderr: np.ndarray
    n_snapshots: int
    insufficient: bool


def estimate_pair_correlation(snapshots, r_bins, box_length: float, dim: int,
                              min_snapshots: int = 10) -> PairCorrelation:
    """Torus pair-correlation estimator.

    For each snapshot, ordered pair counts per shell are divided by
    ``N (N - 1) / V`` times the shell volume; periodic distances make the
    edge correction exact.  Standard errors come from the spread over snapshots.
    """
    from .kernels import ball_volume

    edges = np.asarray(r_bins, dtype=float)
    L = float(box_length)
    if edges[-1] > L / 2:
        raise ValueError("largest radius must not exceed half the box length")
    V = L**dim
    shell = np.diff([ball_volume(r, dim) for r in edges])
    gs = []
    for s in snapshots:
        pts = np.mod(_points_of(s).reshape(-1, dim), L)
        n = len(pts)
        if n < 2:
            continue
        tree = cKDTree(pts, boxsize=L)
        cum = tree.count_neighbors(tree, edges).astype(float) - n  # drop self pairs
        counts = np.diff(cum)
        gs.append(counts / (n * (n - 1) / V * shell))
    mid = 0.5 * (edges[1:] + edges[:-1])
    if not gs:
        nan = np.full(mid.shape, np.nan)
        return PairCorrelation(mid, nan, nan, 0, True)
    gs = np.array(gs)
    se = gs.std(axis=0, ddof=1) / math.sqrt(len(gs)) if len(gs) > 1 else np.full(mid.shape, np.nan)
    return PairCorrelation(mid, gs.mean(axis=0), se, len(gs), len(gs) < min_snapshots)


def growth_slope(trajectories, t_end: float) -> tuple[float, float]:
    """``log(mean N(t_end) / N(0)) / t_end`` with a delta-method standard error."""
    n0 = np.array([tr.counts[0] for tr in trajectories], dtype=float)
    nt = np.array([tr.counts[-1] for tr in trajectories], dtype=float)
    ratio = nt / n0
    mean = ratio.mean()
    se = ratio.std(ddof=1) / math.sqrt(len(ratio))
    return math.log(mean) / t_end, se / mean / t_end
