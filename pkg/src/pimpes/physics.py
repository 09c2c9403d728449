"""Constitutive relations for two immiscible incompressible phases.

Brooks-Corey power-law relative permeabilities and the logarithmic capillary
pressure ``p_c = -(B_c / sqrt(K)) ln(S_eff)``. All inputs are SI.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FluidPair:
    rho_w: float
    rho_n: float
    mu_w: float
    mu_n: float
    g: float = 9.81
    grad_z: tuple = (0.0, 1.0)

    def __post_init__(self):
        for name in ("rho_w", "rho_n", "mu_w", "mu_n"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.g < 0:
            raise ValueError(f"g must be nonnegative, got {self.g}")

    def swapped(self) -> "FluidPair":
        return FluidPair(self.rho_n, self.rho_w, self.mu_n, self.mu_w, self.g, self.grad_z)


@dataclass(frozen=True)
class RockModel:
    """Rock-fluid parameters shared by all cells.

    ``perm`` and ``porosity`` are per-cell arrays (or scalars). ``mirrored``
    relabels the phases: the functions then act on the former non-wetting
    saturation, which is how the phase-swap check is run.
    """

    perm: np.ndarray
    porosity: np.ndarray | float = 0.2
    beta: int = 2
    b_c: float = 0.0
    s_rw: float = 1e-6
    s_rn: float = 1e-6
    eps_s: float = 1e-3
    mirrored: bool = False

    def __post_init__(self):
        perm = np.atleast_1d(np.asarray(self.perm, dtype=float))
        object.__setattr__(self, "perm", perm)
        phi = np.asarray(self.porosity, dtype=float)
        if np.any(perm <= 0) or not np.all(np.isfinite(perm)):
            raise ValueError("permeability must be positive in every cell")
        if np.any(phi <= 0) or np.any(phi > 1):
            raise ValueError("porosity must lie in (0, 1]")
        if int(self.beta) != self.beta or self.beta < 1:
            raise ValueError(f"beta must be an integer >= 1, got {self.beta}")
        if not 0 <= self.s_rw + self.s_rn < 1 or self.s_rw < 0 or self.s_rn < 0:
            raise ValueError("residual saturations must satisfy 0 <= s_rw + s_rn < 1")
        if not 0 < self.eps_s < 0.5:
            raise ValueError("eps_s must lie in (0, 0.5)")
        if self.b_c < 0:
            raise ValueError("b_c must be nonnegative")

    def swapped(self) -> "RockModel":
        return RockModel(self.perm, self.porosity, self.beta, self.b_c, self.s_rw,
                         self.s_rn, self.eps_s, not self.mirrored)


def effective_saturation(s_w, rock: RockModel, clamp: bool = False):
    s = (np.asarray(s_w, dtype=float) - rock.s_rw) / (1.0 - rock.s_rn - rock.s_rw)
    if clamp:
        s = np.clip(s, rock.eps_s, 1.0)
    return s


def _rel_perms(s_w, rock: RockModel):
    s = np.clip(effective_saturation(s_w, rock), 0.0, 1.0)
    return s ** rock.beta, (1.0 - s) ** rock.beta


def relative_permeabilities(s_w, rock: RockModel):
    if rock.mirrored:
        k_n, k_w = _rel_perms(1.0 - np.asarray(s_w, dtype=float), rock)
        return k_w, k_n
    return _rel_perms(s_w, rock)


def mobilities(s_w, fluids: FluidPair, rock: RockModel):
    """Phase mobilities ``k_ra / mu_a``; effective saturation is clipped to [0, 1]."""
    k_w, k_n = relative_permeabilities(s_w, rock)
    return k_w / fluids.mu_w, k_n / fluids.mu_n


def total_mobility(s_w, fluids: FluidPair, rock: RockModel):
    lw, ln = mobilities(s_w, fluids, rock)
    return lw + ln


def fractional_flow(s_w, fluids: FluidPair, rock: RockModel):
    lw, ln = mobilities(s_w, fluids, rock)
    f_w = lw / (lw + ln)
    return f_w, 1.0 - f_w


def _pc(s_w, perm, rock: RockModel):
    s = effective_saturation(s_w, rock, clamp=True)
    return -(rock.b_c / np.sqrt(perm)) * np.log(s)


def capillary_pressure(s_w, rock: RockModel, perm=None):
    """``p_n - p_w`` in Pa, per cell; ``perm`` defaults to ``rock.perm``."""
    perm = rock.perm if perm is None else perm
    if rock.mirrored:
        return -_pc(1.0 - np.asarray(s_w, dtype=float), perm, rock)
    return _pc(s_w, perm, rock)


def _dpc(s_w, perm, rock: RockModel):
    width = 1.0 - rock.s_rn - rock.s_rw
    raw = effective_saturation(s_w, rock)
    inside = (raw >= rock.eps_s) & (raw <= 1.0)
    safe = np.where(inside, raw, 1.0)
    return np.where(inside, -(rock.b_c / np.sqrt(perm)) / (safe * width), 0.0)


def capillary_pressure_derivative(s_w, rock: RockModel, perm=None):
    """``dp_c/dS_w``; zero where the effective saturation is clamped."""
    perm = rock.perm if perm is None else perm
    if rock.mirrored:
        # d/ds [-p_c(1 - s)] = p_c'(1 - s)
        return _dpc(1.0 - np.asarray(s_w, dtype=float), perm, rock)
    return _dpc(s_w, perm, rock)
