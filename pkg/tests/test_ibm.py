import math

import numpy as np
import pytest
from scipy import integrate, stats

from sbdkit import ibm
from sbdkit.kernels import Gaussian, TopHat, zero_kernel
from sbdkit.kinetics import DensityField, Grid
from sbdkit.model import Dispersal, ModelParams

L = 20.0


def params(mech="establishment", **kw):
    base = dict(m=1.0, kappa=1.5, a_plus=TopHat(height=0.5, radius=1.0),
                phi=TopHat(height=0.3, radius=0.8), b_plus=TopHat(height=0.2, radius=0.6),
                dispersal=Dispersal.DEPENDENT, mechanism=mech)
    base.update(kw)
    return ModelParams(**base)


def frozen(rng, n=60):
    # clustered points so that interactions matter
    return np.mod(rng.normal(10.0, 2.0, size=(n, 1)), L)


def brute_energy(kernel, x, pts, exclude=None):
    total = 0.0
    for j, y in enumerate(pts):
        if j == exclude:
            continue
        d = abs(x - y[0]) % L
        total += float(kernel.radial(np.array([min(d, L - d)]))[0])
    return total


class TestRates:
    def test_death_rate(self, rng):
        sim = ibm.Simulator(params(), L, frozen(rng), rng=rng)
        assert sim.total_death_rate() == pytest.approx(sim.m * 60)

    def test_energy_matches_pairwise(self, rng):
        pts = frozen(rng)
        sim = ibm.Simulator(params(), L, pts, rng=rng)
        for x in rng.uniform(0, L, 25):
            assert sim.energy([x]) == pytest.approx(brute_energy(params().phi, x, pts), abs=1e-12)

    def test_fecundity_birth_rate(self, rng):
        p = params("fecundity")
        pts = frozen(rng)
        sim = ibm.Simulator(p, L, pts, rng=rng)
        expect = sum((p.kappa + brute_energy(p.b_plus, y[0], pts, i)) *
                     math.exp(-brute_energy(p.phi, y[0], pts, i)) for i, y in enumerate(pts))
        assert sim.total_birth_rate() == pytest.approx(expect, rel=1e-12)

    def test_establishment_effective_rate_by_quadrature(self, rng):
        """Thinning frequency over 1e5 proposals against the integral
        sum_x (kappa + F(x)) int a(y - x) exp(-E(y)) dy / proposal total."""
        p = params()
        pts = frozen(rng, 30)
        sim = ibm.Simulator(p, L, pts, rng=rng)
        w = sim.parent_weights()
        a = p.a_plus
        oracle = 0.0
        for wi, x in zip(w, sim.points[:, 0]):
            f = lambda z: float(a.radial(np.array([abs(z)]))[0]) * math.exp(-brute_energy(p.phi, x + z, pts))
            bps = sorted({float(y[0] - x) for y in pts if abs(y[0] - x) < 1.9})
            bps = [b + s for b in bps for s in (-0.8, 0.8) if -1 < b + s < 1]
            oracle += wi * integrate.quad(f, -1.0, 1.0, points=bps or None, limit=200)[0]
        oracle /= w.sum()
        n = 100_000
        acc = 0
        for _ in range(n):
            _, y = sim.propose_birth(w)
            acc += rng.random() < sim.acceptance_probability(y)
        freq = acc / n
        se = math.sqrt(oracle * (1 - oracle) / n)
        assert abs(freq - oracle) < 4 * se

    def test_waiting_times_exponential(self, rng):
        sim = ibm.Simulator(params("fecundity"), L, frozen(rng), rng=rng)
        R = sim.total_rate()
        samples = [sim.sample_waiting_time() for _ in range(2000)]
        assert stats.kstest(samples, "expon", args=(0, 1 / R)).pvalue > 1e-3

    def test_proposal_does_not_mutate(self, rng):
        sim = ibm.Simulator(params(), L, frozen(rng), rng=rng)
        before = sim.points
        sim.propose_birth()
        assert np.array_equal(before, sim.points)


class TestDynamics:
    @pytest.mark.parametrize("mech", ["establishment", "fecundity"])
    def test_cache_audit_and_bookkeeping(self, mech, rng):
        sim = ibm.Simulator(params(mech), L, frozen(rng, 40), rng=rng, audit_every=20)
        tr = sim.run(3.0, sample_dt=0.5)
        assert sim.audits > 0 and sim.max_audit_error < 1e-9
        assert tr.births[-1] + tr.initial_count - tr.deaths[-1] == tr.counts[-1]
        assert np.all(tr.counts >= 0)
        assert sim.audit() < 1e-9

    def test_audit_detects_corruption(self, rng):
        sim = ibm.Simulator(params(), L, frozen(rng), rng=rng)
        sim.S[3] += 1e-3
        with pytest.raises(ibm.CacheAuditError):
            sim.audit()

    def test_determinism(self):
        pts = frozen(np.random.default_rng(0), 30)
        a = ibm.simulate(params(), L, pts, 2.0, seed=7, record_events=True)
        b = ibm.simulate(params(), L, pts, 2.0, seed=7, record_events=True)
        assert a.events == b.events and np.array_equal(a.counts, b.counts)
        c = ibm.simulate(params(), L, pts, 2.0, seed=8, record_events=True)
        assert a.events != c.events

    def test_extinction_for_large_mortality(self):
        p = params(m=5.0, kappa=0.5)
        trs = ibm.run_replicas(p, L, np.full((10, 1), 10.0), 10.0, 100, seed=3)
        assert all(t.extinct for t in trs)
        assert all(t.counts[-1] == 0 and t.extinction_time <= 10.0 for t in trs)

    def test_rejections_only_under_establishment(self, rng):
        tr = ibm.simulate(params("fecundity"), L, frozen(rng, 40), 2.0, seed=1)
        assert tr.rejections[-1] == 0
        tr = ibm.simulate(params(), L, frozen(rng, 40), 2.0, seed=1)
        assert tr.rejections[-1] > 0

    def test_snapshots_and_samples(self, rng):
        tr = ibm.simulate(params(), L, frozen(rng, 40), 2.0, seed=2, sample_dt=0.5,
                          snapshot_times=[0.0, 1.0, 2.0])
        assert np.allclose(tr.times, [0, 0.5, 1, 1.5, 2])
        assert [s[0] for s in tr.snapshots] == [0.0, 1.0, 2.0]
        assert len(tr.snapshots[0][2]) == 40 == tr.counts[0]

    def test_contact_model_growth(self):
        p = ModelParams(m=1.0, kappa=2.0, a_plus=TopHat(height=0.5, radius=1.0), phi=zero_kernel(1))
        trs = ibm.run_replicas(p, L, lambda r: r.uniform(0, L, (20, 1)), 2.0, 60, seed=5)
        slope, se = ibm.growth_slope(trs, 2.0)
        assert abs(slope - 1.0) < 4 * se + 0.02


class TestDomain:
    def test_box_too_small(self):
        with pytest.raises(ibm.DomainError):
            ibm.Simulator(params(), 5.0)

    def test_infinite_cutoff(self):
        p = params(phi=Gaussian(mass=0.5, sigma=0.3, cutoff=math.inf))
        with pytest.raises(ibm.DomainError):
            ibm.Simulator(p, L)

    def test_periodic_wrap(self, rng):
        sim = ibm.Simulator(params(), L, np.array([[19.9], [0.1]]), rng=rng)
        assert sim.energy([0.0]) == pytest.approx(0.6)


class TestScalingAndEstimators:
    def test_eps_one_identity(self):
        p = params()
        q, mult = ibm.apply_vlasov_scaling(p, 1.0)
        assert q == p and mult == 1.0

    def test_scaled_kernels(self):
        q, mult = ibm.apply_vlasov_scaling(params(), 0.25)
        assert mult == 4.0
        assert q.phi.radial(np.array([0.1]))[0] == pytest.approx(0.075)

    def test_poisson_mean(self, rng):
        counts = [len(ibm.poisson_configuration(0.5, L, 1, rng, multiplier=10.0)) for _ in range(400)]
        assert abs(np.mean(counts) - 100) < 4 * math.sqrt(100 / 400)

    def test_poisson_field(self, rng):
        g = Grid(20, L)
        field = DensityField(np.where(g.centers()[..., 0] < 10, 2.0, 0.0), g)
        pts = ibm.poisson_configuration(field, L, 1, rng)
        assert np.all(pts < 10)

    def test_density_estimator_unbiased(self, rng):
        g = Grid(10, L)
        snaps = [ibm.poisson_configuration(2.0, L, 1, rng) for _ in range(200)]
        est = ibm.estimate_density(snaps, g)
        assert np.all(np.abs(est.values - 2.0) < 4 * est.stderr + 1e-12)
        scaled = ibm.estimate_density(snaps, g, scale=0.5)
        assert np.allclose(scaled.values, est.values / 2)

    def test_pair_correlation_poisson(self, rng):
        snaps = [ibm.poisson_configuration(5.0, L, 1, rng) for _ in range(50)]
        pc = ibm.estimate_pair_correlation(snaps, np.linspace(0, 2, 9), L, 1)
        assert not pc.insufficient
        assert np.all(np.abs(pc.g - 1) < 4 * pc.stderr + 0.02)

    def test_pair_correlation_contact_clusters(self):
        p = ModelParams(m=1.0, kappa=1.0, a_plus=TopHat(height=0.5, radius=1.0), phi=zero_kernel(1))
        trs = ibm.run_replicas(p, L, lambda r: r.uniform(0, L, (40, 1)), 3.0, 30, seed=2, snapshot_times=[3.0])
        pc = ibm.estimate_pair_correlation([t.snapshots[-1] for t in trs], np.linspace(0, 1, 5), L, 1)
        assert pc.g[0] > 1.2

    def test_pair_correlation_inhibition(self):
        p = ModelParams(m=1.0, kappa=4.0, a_plus=TopHat(height=0.5, radius=1.0),
                        phi=TopHat(height=3.0, radius=0.5))
        trs = ibm.run_replicas(p, L, lambda r: r.uniform(0, L, (30, 1)), 3.0, 30, seed=2, snapshot_times=[3.0])
        pc = ibm.estimate_pair_correlation([t.snapshots[-1] for t in trs], np.linspace(0, 0.4, 3), L, 1)
        assert pc.g[0] < 0.8

    def test_pair_correlation_flags_few_snapshots(self, rng):
        snaps = [ibm.poisson_configuration(5.0, L, 1, rng) for _ in range(3)]
        assert ibm.estimate_pair_correlation(snaps, np.linspace(0, 2, 5), L, 1).insufficient
