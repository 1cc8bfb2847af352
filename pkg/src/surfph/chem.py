"""Carbonate and buffer reaction network.

Six species take part, indexed in this order everywhere in the package:

    0  CO2     dissolved carbon dioxide
    1  H2CO3   carbonic acid
    2  HCO3-   bicarbonate
    3  H+      free protons (pH = 3 - log10([H+]/mM))
    4  HA      protonated buffer
    5  A-      deprotonated buffer

connected by three reversible reactions,

    CO2 + H2O  <->  H2CO3          (slow; accelerated by carbonic anhydrase)
    H2CO3      <->  HCO3- + H+     (fast protonation)
    HA         <->  A-    + H+     (fast buffer exchange)

Mass-action fluxes for the six directed reactions are

    phi1 = a k1 [CO2]      phi2 = a k_m1 [H2CO3]
    phi3 = k2 [H2CO3]      phi4 = k_m2 [HCO3-][H+]
    phi5 = k3 [HA]         phi6 = k_m3 [A-][H+]

where ``a`` is the local carbonic anhydrase acceleration factor.  The
protonation speeds are parametrized by scales eps and eps_prime together
with the equilibrium constants K2 = k2/k_m2 and K_HA = k3/k_m3, so that
changing the speed never moves the equilibrium.  Columns of the
stoichiometric matrix STOICH give the species increments of each flux;
[CO2]+[H2CO3]+[HCO3-] and [HA]+[A-] are conserved exactly by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import Chemistry
from .errors import ConfigurationError

#: species increments per unit of each directed flux (6 species x 6 fluxes)
STOICH = np.array([
    [-1,  1,  0,  0,  0,  0],   # CO2
    [ 1, -1, -1,  1,  0,  0],   # H2CO3
    [ 0,  0,  1, -1,  0,  0],   # HCO3-
    [ 0,  0,  1, -1,  1, -1],   # H+
    [ 0,  0,  0,  0, -1,  1],   # HA
    [ 0,  0,  0,  0,  1, -1],   # A-
], dtype=float)


@dataclass(frozen=True)
class RateTable:
    """Directed rate constants for one domain (the buffer differs by side)."""

    k1: float
    k_m1: float
    k2: float
    k_m2: float
    k3: float
    k_m3: float

    @property
    def K1(self) -> float:
        """CO2 hydration equilibrium constant k1/k_m1 (dimensionless)."""
        return self.k1 / self.k_m1

    @property
    def K2(self) -> float:
        """Carbonic acid dissociation constant k2/k_m2 (mM)."""
        return self.k2 / self.k_m2

    @property
    def K_HA(self) -> float:
        """Buffer dissociation constant k3/k_m3 (mM)."""
        return self.k3 / self.k_m3

    @classmethod
    def from_config(cls, chem: Chemistry, side: str) -> "RateTable":
        """Build the table for side 'in' (cytosol) or 'out' (medium)."""
        if side == "in":
            K_HA = chem.K_HA_in
        elif side == "out":
            K_HA = chem.K_HA_out
        else:
            raise ConfigurationError(f"side must be 'in' or 'out', got {side!r}")
        return cls(k1=chem.k1, k_m1=chem.k_m1,
                   k2=chem.eps, k_m2=chem.eps / chem.K2,
                   k3=chem.eps_prime, k_m3=chem.eps_prime / K_HA)


def mass_action_fluxes(u, rates: RateTable, ca=1.0):
    """Directed reaction fluxes for states ``u`` of shape (..., 6).

    ``ca`` is the carbonic anhydrase factor; it may be scalar or an array
    broadcastable against ``u[..., 0]``.
    """
    u = np.asarray(u, dtype=float)
    phi = np.empty_like(u)
    phi[..., 0] = ca * rates.k1 * u[..., 0]
    phi[..., 1] = ca * rates.k_m1 * u[..., 1]
    phi[..., 2] = rates.k2 * u[..., 1]
    phi[..., 3] = rates.k_m2 * u[..., 2] * u[..., 3]
    phi[..., 4] = rates.k3 * u[..., 4]
    phi[..., 5] = rates.k_m3 * u[..., 5] * u[..., 3]
    return phi


def net_rates(u, rates: RateTable, ca=1.0):
    """Net species production S @ phi, same shape as ``u``."""
    return mass_action_fluxes(u, rates, ca) @ STOICH.T


def flux_jacobian(u, rates: RateTable, ca=1.0):
    """Derivative d(phi)/d(u) with shape (..., 6, 6)."""
    u = np.asarray(u, dtype=float)
    J = np.zeros(u.shape + (6,))
    J[..., 0, 0] = ca * rates.k1
    J[..., 1, 1] = ca * rates.k_m1
    J[..., 2, 1] = rates.k2
    J[..., 3, 2] = rates.k_m2 * u[..., 3]
    J[..., 3, 3] = rates.k_m2 * u[..., 2]
    J[..., 4, 4] = rates.k3
    J[..., 5, 5] = rates.k_m3 * u[..., 3]
    J[..., 5, 3] = rates.k_m3 * u[..., 5]
    return J


def rate_jacobian(u, rates: RateTable, ca=1.0):
    """Derivative of the net species rates, shape (..., 6, 6)."""
    return np.einsum("ab,...bc->...ac", STOICH, flux_jacobian(u, rates, ca))


def carbonate_total(u):
    """Conserved carbonate pool [CO2] + [H2CO3] + [HCO3-]."""
    u = np.asarray(u)
    return u[..., 0] + u[..., 1] + u[..., 2]


def buffer_total(u):
    """Conserved buffer pool [HA] + [A-]."""
    u = np.asarray(u)
    return u[..., 4] + u[..., 5]


def ph_of(u4):
    """pH from a proton concentration in mM."""
    return 3.0 - np.log10(u4)


def proton_of_ph(ph):
    """Proton concentration in mM at a given pH."""
    return 10.0 ** (3.0 - np.asarray(ph, dtype=float))


def equilibrium_state(chem: Chemistry, side: str, ph: float, co2: float, ha: float):
    """Exact stationary concentration vector anchored at a target pH.

    The free proton level is fixed by ``ph``; dissolved CO2 and protonated
    buffer are held at the supplied values and the remaining species follow
    from the equilibrium relations

        [H2CO3] = K1 [CO2],  [HCO3-] = K2 [H2CO3] / [H+],  [A-] = K_HA [HA] / [H+].

    Every mass-action flux pair then cancels, so the vector is a fixed point
    of the reaction network for any carbonic anhydrase factor.
    """
    rates = RateTable.from_config(chem, side)
    u4 = float(proton_of_ph(ph))
    u1 = float(co2)
    u2 = rates.K1 * u1
    u3 = rates.K2 * u2 / u4
    u5 = float(ha)
    u6 = rates.K_HA * u5 / u4
    return np.array([u1, u2, u3, u4, u5, u6])
