"""Sufficient conditions for the existence of the dynamics.

Every check returns a :class:`ConditionReport` exposing the two sides of the
inequality and every intermediate constant.  Checks accept either
:class:`~sbdkit.model.ModelParams` (constants are computed from the kernels)
or a ready-made :class:`ConditionInputs`.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

from . import kernels as K
from .model import Mechanism, ModelParams

E = math.e
TIE_TOLERANCE = 1e-12
DEFAULT_C = 1.0 + 1e-6


class TheoremId(str, enum.Enum):
    ESTABLISHMENT = "EstablishmentThm"
    FECUNDITY = "FecundityThm"
    VLASOV = "VlasovScalingLemma"
    PICARD = "PicardExistence"


@dataclass(frozen=True)
class ConditionInputs:
    """Scalar constants consumed by the inequalities.

    ``A1``/``A2`` are the domination constants of the mechanism at hand,
    ``A`` the single constant with ``max(a+, b+) <= A phi``.
    """

    m: float
    kappa: float
    B: float = 0.0
    phi_mass: float = 1.0
    c_phi: float = 1.0
    A1: float | None = 0.0
    A2: float | None = 0.0
    A: float | None = None
    mechanism: Mechanism = Mechanism.ESTABLISHMENT
    structural: str | None = None
    notes: tuple[str, ...] = ()


@dataclass(frozen=True)
class ConditionReport:
    theorem_id: TheoremId
    lhs: float
    rhs: float
    satisfied: bool
    verdict: str
    constants: dict = field(default_factory=dict)
    notes: tuple[str, ...] = ()

    def rows(self):
        """Flat key/value rows for tabular output."""
        yield "theorem", self.theorem_id.value
        yield "verdict", self.verdict
        yield "satisfied", str(self.satisfied).lower()
        yield "lhs", repr(self.lhs)
        yield "rhs", repr(self.rhs)
        for k, v in self.constants.items():
            yield k, repr(v) if isinstance(v, float) else str(v)
        for n in self.notes:
            yield "note", n


def _verdict(lhs: float, rhs: float, strict: bool = True) -> tuple[bool, str]:
    if not (math.isfinite(lhs) and math.isfinite(rhs)):
        return False, "violated"
    if abs(lhs - rhs) < TIE_TOLERANCE:
        return False, "boundary"
    ok = lhs < rhs if strict else lhs <= rhs
    return ok, "satisfied" if ok else "violated"


def condition_inputs(params: ModelParams, mechanism=None) -> ConditionInputs:
    """Compute every kernel constant the checks need."""
    mech = Mechanism(mechanism or params.mechanism)
    b = params.b_eff
    phi_m = K.moments(params.phi)
    notes = list(phi_m.notes)
    structural = None
    A1 = A2 = A = None
    try:
        dc = K.domination_constants(params.a_plus, b, params.phi, mech.value)
        A1, A2 = dc.A1, dc.A2
        if dc.route != "radial":
            notes.append(f"A2 via {dc.route} route (refinement margin {dc.margin:.2e})")
    except K.StructuralViolation as exc:
        structural = str(exc).removeprefix("condition structurally violated: ")
    try:
        A = K.picard_constant(params.a_plus, b, params.phi)
    except K.StructuralViolation as exc:
        notes.append(f"Picard constant: {exc}")
    return ConditionInputs(
        m=params.m, kappa=params.kappa, B=K.l1_norm(b), phi_mass=phi_m.l1_norm,
        c_phi=phi_m.c_phi, A1=A1, A2=A2, A=A, mechanism=mech, structural=structural,
        notes=tuple(notes),
    )


def _inputs(params, mechanism=None) -> ConditionInputs:
    if isinstance(params, ConditionInputs):
        if mechanism is not None and Mechanism(mechanism) is not params.mechanism:
            return replace(params, mechanism=Mechanism(mechanism))
        return params
    return condition_inputs(params, mechanism)


def _structural_report(tid, ci: ConditionInputs, reason: str) -> ConditionReport:
    return ConditionReport(tid, math.nan, math.nan, False, "structural",
                           {"m": ci.m, "kappa": ci.kappa},
                           (f"condition structurally violated: {reason}", *ci.notes))


def _degenerate(tid, ci: ConditionInputs, volume: float) -> ConditionReport | None:
    if volume <= 0 or not math.isfinite(volume):
        return _structural_report(tid, ci, "suppression kernel has zero effective volume")
    return None


def establishment_lhs(ci: ConditionInputs, C: float) -> float:
    A1, A2, B, kap = ci.A1, ci.A2, ci.B, ci.kappa
    return (A1 * kap / (E * C) + 4.0 * A2 / (E * E * C) + A1 * B / E + kap
            + A2 * ci.phi_mass / E + C * B)


def fecundity_lhs(ci: ConditionInputs, C: float) -> float:
    A1, A2, B, kap = ci.A1, ci.A2, ci.B, ci.kappa
    return (kap + A2 / E + C * B + (kap / C + B) * A1 / E + 4.0 * A1 * A2 * C / (E * E))


def _semigroup_check(tid: TheoremId, ci: ConditionInputs, C: float, volume: float,
                     volume_name: str) -> ConditionReport:
    if C < 1:
        raise ValueError("C must exceed 1")
    if ci.structural or ci.A1 is None or ci.A2 is None:
        return _structural_report(tid, ci, ci.structural or "domination constants unavailable")
    bad = _degenerate(tid, ci, volume)
    if bad:
        return bad
    if ci.mechanism is Mechanism.ESTABLISHMENT:
        lhs = establishment_lhs(ci, C)
    else:
        lhs = fecundity_lhs(ci, C)
    rhs = 0.5 * ci.m * math.exp(-volume * C)
    ok, verdict = _verdict(lhs, rhs)
    kappa_c = math.exp(volume * C)
    D = kappa_c * C * lhs
    a = D / ci.m
    consts = {
        "m": ci.m, "kappa": ci.kappa, "C": C, volume_name: volume,
        "phi_mass": ci.phi_mass, "c_phi": ci.c_phi,
        "A1": ci.A1, "A2": ci.A2, "B": ci.B, "D": D, "a": a,
        "a_below_C_over_2": a < C / 2,
    }
    notes = list(ci.notes)
    if C == 1:
        notes.append("C = 1 lies on the edge of the admissible range C > 1")
    if ci.A2 == 0 and ci.B == 0:
        notes.append("density-independent reduction")
    return ConditionReport(tid, lhs, rhs, ok, verdict, consts, tuple(notes))


def check_establishment(params, C: float = DEFAULT_C) -> ConditionReport:
    """Semigroup condition for the establishment model."""
    ci = _inputs(params, Mechanism.ESTABLISHMENT)
    return _semigroup_check(TheoremId.ESTABLISHMENT, ci, C, ci.c_phi, "c_phi_used")


def check_fecundity(params, C: float = DEFAULT_C) -> ConditionReport:
    """Semigroup condition for the fecundity model."""
    ci = _inputs(params, Mechanism.FECUNDITY)
    return _semigroup_check(TheoremId.FECUNDITY, ci, C, ci.c_phi, "c_phi_used")


def check_vlasov_scaling(params, C: float = DEFAULT_C, mechanism=None) -> ConditionReport:
    """The mechanism's condition with ``<phi>`` in place of ``c_phi``.

    Because ``<phi> >= c_phi`` the right side never exceeds the plain one;
    this is recorded in the report constants.
    """
    ci = _inputs(params, mechanism)
    rep = _semigroup_check(TheoremId.VLASOV, ci, C, ci.phi_mass, "c_phi_used")
    if rep.verdict == "structural":
        return rep
    rhs_plain = 0.5 * ci.m * math.exp(-ci.c_phi * C)
    consts = dict(rep.constants, mechanism=ci.mechanism.value, rhs_plain=rhs_plain,
                  rhs_not_above_plain=rep.rhs <= rhs_plain)
    return replace(rep, constants=consts)


def check_picard(params, c: float) -> ConditionReport:
    """Contraction and ball-invariance conditions for the kinetic fixed-point map."""
    if c <= 0:
        raise ValueError("ball radius c must be positive")
    ci = _inputs(params)
    tid = TheoremId.PICARD
    if ci.A is None:
        return _structural_report(tid, ci, "no A with max(a+, b+) <= A phi")
    A, kap, B, pm, m = ci.A, ci.kappa, ci.B, ci.phi_mass, ci.m
    lhs = kap * (1.0 + A / E * pm) + c * B * (2.0 + A / E * pm)
    q = lhs / m
    ball_lhs = A / E * (kap + B)
    ok_main, verdict = _verdict(lhs, m)
    ball_ok, ball_verdict = _verdict(ball_lhs, m, strict=False)
    if verdict == "satisfied" and not ball_ok:
        verdict = "boundary" if ball_verdict == "boundary" else "violated"
    ok = ok_main and ball_ok
    # bound obtained when the kappa term is not rescaled by c
    ball_exact = A / E * (kap / c + B)
    consts = {
        "m": m, "kappa": kap, "A": A, "phi_mass": pm, "B": B, "c": c, "q": q,
        "ball_lhs": ball_lhs, "ball_ok": ball_ok,
        "ball_lhs_unscaled_kappa": ball_exact,
        "ball_ok_unscaled_kappa": ball_exact <= m,
    }
    return ConditionReport(tid, lhs, m, ok, verdict, consts, ci.notes)


def check_mechanism(params, C: float = DEFAULT_C, mechanism=None) -> ConditionReport:
    mech = Mechanism(mechanism or (params.mechanism))
    if mech is Mechanism.ESTABLISHMENT:
        return check_establishment(params, C)
    return check_fecundity(params, C)


def scan_C(check, params, C_grid, mechanism=None) -> tuple[ConditionReport, list[ConditionReport]]:
    """Run ``check`` over ``C_grid``; return the report with the largest
    ``rhs - lhs`` margin and all reports.

    Kernel constants are computed once, for ``mechanism``.
    """
    ci = _inputs(params, mechanism)
    reports = [check(ci, float(C)) for C in C_grid]
    finite = [r for r in reports if math.isfinite(r.lhs)]
    if not finite:
        return reports[0], reports
    best = max(finite, key=lambda r: r.rhs - r.lhs)
    return best, reports


def mortality_threshold(check, params, C: float, mechanism=None, m_lo: float = 1e-9,
                        m_hi: float = 1e9, rtol: float = 1e-12) -> float:
    """Bisect the smallest mortality for which ``check`` is satisfied."""
    ci = _inputs(params, mechanism)
    ok = lambda m: check(replace(ci, m=m), C).satisfied
    if not ok(m_hi):
        return math.inf
    if ok(m_lo):
        return m_lo
    lo, hi = m_lo, m_hi
    while hi - lo > rtol * hi:
        mid = math.sqrt(lo * hi) if hi / lo > 4 else 0.5 * (lo + hi)
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi
