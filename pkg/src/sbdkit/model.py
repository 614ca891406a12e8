"""Model parameters shared by every layer of the toolkit."""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

from .kernels import KernelSpec, l1_norm, zero_kernel


class Mechanism(str, enum.Enum):
    ESTABLISHMENT = "establishment"
    FECUNDITY = "fecundity"


class Dispersal(str, enum.Enum):
    INDEPENDENT = "independent"
    DEPENDENT = "dependent"


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    """Mortality, baseline birth rate, the three kernels and the model tags.

    With ``dispersal == "independent"`` the enhancement kernel is ignored
    everywhere (see :attr:`b_eff`).
    """

    m: float
    kappa: float
    a_plus: KernelSpec
    phi: KernelSpec
    b_plus: KernelSpec | None = None
    mechanism: Mechanism = Mechanism.ESTABLISHMENT
    dispersal: Dispersal = Dispersal.INDEPENDENT
    check_normalization: bool = field(default=True, compare=False)

    def __post_init__(self):
        if not (self.m > 0 and math.isfinite(self.m)):
            raise ParameterError("mortality must be strictly positive")
        if not (self.kappa >= 0 and math.isfinite(self.kappa)):
            raise ParameterError("baseline birth rate kappa must be nonnegative")
        object.__setattr__(self, "mechanism", Mechanism(self.mechanism))
        object.__setattr__(self, "dispersal", Dispersal(self.dispersal))
        if self.b_plus is None:
            object.__setattr__(self, "b_plus", zero_kernel(self.a_plus.dim))
        dims = {self.a_plus.dim, self.phi.dim, self.b_plus.dim}
        if len(dims) != 1:
            raise ParameterError(f"kernels disagree on dimension: {sorted(dims)}")
        if self.check_normalization and abs(l1_norm(self.a_plus) - 1.0) > 1e-6:
            raise ParameterError(
                f"dispersal kernel must have unit mass, got {l1_norm(self.a_plus):.8g}"
            )

    @property
    def dim(self) -> int:
        return self.a_plus.dim

    @property
    def b_eff(self) -> KernelSpec:
        """Enhancement kernel actually used by the dynamics."""
        if self.dispersal is Dispersal.INDEPENDENT:
            return zero_kernel(self.dim)
        return self.b_plus

    @property
    def density_dependent(self) -> bool:
        return not self.b_eff.is_zero

    def with_mechanism(self, mechanism) -> "ModelParams":
        return replace(self, mechanism=Mechanism(mechanism))

    def scaled(self, eps: float) -> "ModelParams":
        """Kernels ``eps*b_plus`` and ``eps*phi``; dispersal and rates unchanged.

        This is the effective rate of the scaled generator once its
        ``1/eps`` birth prefactor is absorbed into ``eps*a_plus``.
        """
        if not 0 < eps <= 1:
            raise ParameterError("eps must lie in (0, 1]")
        if eps == 1:
            return self
        return replace(self, b_plus=self.b_plus.scaled(eps), phi=self.phi.scaled(eps))
