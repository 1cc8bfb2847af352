"""Forward model: spherical reaction-diffusion bulk plus an electrode
micro-compartment.

A cell of radius R sits in a medium truncated at an outer radius where the
far-field concentrations are pinned.  All fields are spherically symmetric,
so each species obeys a radial diffusion-reaction equation on the two
domains (cytosol and medium), coupled across the membrane by a single
permeability lam that lets only CO2 through.  Discretization is linear
finite elements on a geometrically graded radial mesh (finest at the
membrane) with a lumped r^2-weighted mass matrix, which turns the PDE into
a banded ODE system integrated with LSODA.

A pH microelectrode pressed against the outside of the membrane encloses a
small cylindrical compartment (width w, height h).  The compartment is
modelled as well mixed: its six concentrations follow the bulk reaction
network with their own carbonic anhydrase factor A0, plus two exchange
terms driven by the bulk solution at the membrane,

    du0/dt = S phi(u0)
             - delta_{CO2} (lam/h) (u0_CO2 - u_in_CO2(R))
             + (2 gamma / P) (u_out(R) - u0)

where gamma is the quenching permeability of the compartment wall and P an
effective quenching length.  By default the compartment does not feed back
on the bulk (its footprint is a tiny fraction of the cell surface); a
two-way mode that closes the mass balance is available for sensitivity
checks.

Scaled parameters xi = (xi_lam, xi_A, xi_gamma) in [0, 1]^3 map to the
physical triple (lam, A0, gamma); dictionaries and estimates work in xi
space throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.integrate import odeint, solve_ivp
from scipy.interpolate import PchipInterpolator

from . import chem
from .config import Config
from .errors import ConfigurationError, IntegrationError

#: concentrations more negative than this fail integration instead of clamping
TOL_NEG = 1.0e-10


# ---------------------------------------------------------------------------
# parameter mapping

@dataclass(frozen=True)
class PhysicalParams:
    """Physical parameter triple: permeabilities in um/s, A0 dimensionless."""

    lam: float
    a0: float
    gamma: float


def map_params(xi, cfg: Config) -> PhysicalParams:
    """Map scaled parameters in [0, 1]^3 to physical (lam, A0, gamma).

    lam and A0 scale linearly; gamma is log-linear between the configured
    endpoints.  Components outside [0, 1] raise ConfigurationError.
    """
    xi = np.asarray(xi, dtype=float)
    if xi.shape != (3,):
        raise ConfigurationError(f"xi must have 3 components, got shape {xi.shape}")
    if np.any(xi < 0.0) or np.any(xi > 1.0) or not np.all(np.isfinite(xi)):
        raise ConfigurationError(f"xi components must lie in [0, 1], got {xi.tolist()}")
    m = cfg.mapping
    lam = m.lam_max * xi[0]
    a0 = m.a_max * xi[1]
    log10_gamma = m.gamma_log10_lo + (m.gamma_log10_hi - m.gamma_log10_lo) * xi[2]
    return PhysicalParams(lam=float(lam), a0=float(a0), gamma=float(10.0 ** log10_gamma))


# ---------------------------------------------------------------------------
# mesh

@dataclass(frozen=True)
class Mesh:
    """Radial FEM mesh for the two domains sharing the membrane radius."""

    r_int: np.ndarray     # cytosol nodes, 0 .. R
    r_ext: np.ndarray     # medium nodes, R .. R_outer
    mass: np.ndarray      # lumped r^2-weighted nodal masses, both domains

    @property
    def n_int(self) -> int:
        return len(self.r_int)

    @property
    def n_ext(self) -> int:
        return len(self.r_ext)

    @property
    def n_nodes(self) -> int:
        return self.n_int + self.n_ext

    @property
    def r_all(self) -> np.ndarray:
        return np.concatenate([self.r_int, self.r_ext])


def graded_nodes(a: float, b: float, n: int, ratio: float, fine_end: str) -> np.ndarray:
    """n nodes on [a, b] with geometrically graded element sizes.

    ``fine_end`` selects which end gets the smallest element ('left' or
    'right'); consecutive elements grow by ``ratio``.
    """
    sizes = ratio ** np.arange(n - 1, dtype=float)
    if fine_end == "right":
        sizes = sizes[::-1]
    sizes = sizes * (b - a) / sizes.sum()
    r = np.empty(n)
    r[0] = a
    r[1:] = a + np.cumsum(sizes)
    r[-1] = b
    return r


def lumped_mass(r: np.ndarray) -> np.ndarray:
    """Row sums of the r^2-weighted P1 mass matrix (exact per element)."""
    m = np.zeros(len(r))
    r0, r1 = r[:-1], r[1:]
    h = r1 - r0
    m[:-1] += h * (r0 ** 2 / 2 + r0 * h / 3 + h ** 2 / 12)
    m[1:] += h * (r0 ** 2 / 2 + 2 * r0 * h / 3 + h ** 2 / 4)
    return m


def stiffness(r: np.ndarray, kappa: float) -> sp.csr_matrix:
    """Tridiagonal r^2-weighted P1 stiffness matrix for one species."""
    r0, r1 = r[:-1], r[1:]
    h = r1 - r0
    ke = kappa * (r1 ** 3 - r0 ** 3) / (3 * h ** 2)
    n = len(r)
    main = np.zeros(n)
    main[:-1] += ke
    main[1:] += ke
    return sp.diags([-ke, main, -ke], [-1, 0, 1], format="csr")


def build_mesh(cfg: Config, n_int=None, n_ext=None) -> Mesh:
    """Graded mesh from the configuration, finest at the membrane.

    The mesh must resolve the carbonic anhydrase coated shell: at least two
    exterior nodes (beyond the membrane node itself) inside the layer,
    otherwise the shell's acceleration would act on no element and the
    simulated dynamics would silently change.
    """
    g, m = cfg.geometry, cfg.mesh
    n_int = m.n_interior if n_int is None else n_int
    n_ext = m.n_exterior if n_ext is None else n_ext
    r_int = graded_nodes(0.0, g.radius_cell, n_int, m.grading, "right")
    r_ext = graded_nodes(g.radius_cell, g.radius_outer, n_ext, m.grading, "left")
    mass = np.concatenate([lumped_mass(r_int), lumped_mass(r_ext)])
    if g.ca_layer_depth > 0:
        in_layer = np.count_nonzero(
            (r_ext > g.radius_cell) & (r_ext <= g.radius_cell + g.ca_layer_depth))
        if in_layer < 2:
            raise ConfigurationError(
                f"mesh has only {in_layer} exterior node(s) inside the "
                f"{g.ca_layer_depth} um catalysis layer; refine n_exterior or "
                "reduce grading")
    return Mesh(r_int=r_int, r_ext=r_ext, mass=mass)


# ---------------------------------------------------------------------------
# initial data

def initial_states(cfg: Config):
    """Per-domain initial concentration vectors (inside, outside).

    In 'table' mode these are the nominal values from the configuration; in
    'equilibrium' mode the exact stationary states anchored at the nominal
    pH of each domain, which differ from the table only by rounding.
    """
    ini = cfg.initial
    if ini.mode == "table":
        return np.array(ini.inside, dtype=float), np.array(ini.outside, dtype=float)
    u_in = chem.equilibrium_state(cfg.chemistry, "in", ini.ph_inside,
                                  co2=ini.inside[0], ha=ini.inside[4])
    u_out = chem.equilibrium_state(cfg.chemistry, "out", ini.ph_outside,
                                   co2=ini.outside[0], ha=ini.outside[4])
    return u_in, u_out


# ---------------------------------------------------------------------------
# bulk model

class BulkModel:
    """Semidiscrete bulk system for one membrane permeability.

    State layout is node-major: six species per node, interior nodes first.
    The linear part (diffusion, membrane exchange, Dirichlet far field) is
    assembled once as a sparse matrix; reactions are evaluated pointwise.
    The resulting Jacobian is banded with half-bandwidth 6, which LSODA
    exploits.
    """

    def __init__(self, cfg: Config, lam: float, mesh: Mesh = None):
        if lam < 0:
            raise ConfigurationError(f"membrane permeability must be >= 0, got {lam}")
        self.cfg = cfg
        self.lam = float(lam)
        self.mesh = build_mesh(cfg) if mesh is None else mesh
        mesh = self.mesh
        n_int, n_ext, nn = mesh.n_int, mesh.n_ext, mesh.n_nodes
        self.N = 6 * nn

        kappa = np.array([cfg.diffusion.co2, cfg.diffusion.h2co3, cfg.diffusion.hco3,
                          cfg.diffusion.h, cfg.diffusion.ha, cfg.diffusion.a])
        rows, cols, vals = [], [], []
        for s in range(6):
            for r, off in ((mesh.r_int, 0), (mesh.r_ext, n_int)):
                Ks = stiffness(r, kappa[s]).tocoo()
                m = mesh.mass[off:off + len(r)]
                rows.append((Ks.row + off) * 6 + s)
                cols.append((Ks.col + off) * 6 + s)
                vals.append(-Ks.data / m[Ks.row])
        # membrane exchange, CO2 only: flux lam (u_out - u_in) over area R^2
        # (per steradian), entering each rim node scaled by its lumped mass
        gi, ge = (n_int - 1) * 6, n_int * 6
        a = self.lam * cfg.geometry.radius_cell ** 2
        rows.append(np.array([gi, gi, ge, ge]))
        cols.append(np.array([ge, gi, ge, gi]))
        vals.append(np.array([a / mesh.mass[n_int - 1], -a / mesh.mass[n_int - 1],
                              -a / mesh.mass[n_int], a / mesh.mass[n_int]]))
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        # far-field Dirichlet condition: freeze the outermost node
        keep = rows < (nn - 1) * 6
        self.L = sp.csr_matrix((vals[keep], (rows[keep], cols[keep])),
                               shape=(self.N, self.N))

        # nodal reaction environment: anhydrase factor and buffer constant
        self.rates_in = chem.RateTable.from_config(cfg.chemistry, "in")
        self.rates_out = chem.RateTable.from_config(cfg.chemistry, "out")
        ca = np.full(nn, 1.0)
        ca[:n_int] = cfg.catalysis.ca_interior
        layer = mesh.r_ext <= cfg.geometry.radius_cell + cfg.geometry.ca_layer_depth
        ca[n_int:][layer] = cfg.catalysis.ca_surface
        self.ca = ca
        km3 = np.full(nn, self.rates_out.k_m3)
        km3[:n_int] = self.rates_in.k_m3
        self.km3 = km3

        u_in, u_out = initial_states(cfg)
        self.y0 = np.concatenate([np.tile(u_in, n_int), np.tile(u_out, n_ext)])

        # banded packing of the linear part, reused by the ODE Jacobian
        self.mu = self.ml = 6
        self.Lpack = np.zeros((self.ml + self.mu + 1, self.N))
        Lc = self.L.tocoo()
        self.Lpack[self.mu + Lc.row - Lc.col, Lc.col] = Lc.data

    def _fluxes(self, U):
        r = self.rates_in      # k1, k_m1, k2, k_m2 are side-independent
        phi = np.empty_like(U)
        phi[:, 0] = self.ca * r.k1 * U[:, 0]
        phi[:, 1] = self.ca * r.k_m1 * U[:, 1]
        phi[:, 2] = r.k2 * U[:, 1]
        phi[:, 3] = r.k_m2 * U[:, 2] * U[:, 3]
        phi[:, 4] = r.k3 * U[:, 4]
        phi[:, 5] = self.km3 * U[:, 5] * U[:, 3]
        return phi

    def rhs(self, y, t):
        U = y.reshape(-1, 6)
        rate = self._fluxes(U) @ chem.STOICH.T
        rate[-1, :] = 0.0       # far-field node is pinned
        return self.L @ y + rate.ravel()

    def _reaction_jac(self, U):
        r = self.rates_in
        nn = U.shape[0]
        dphi = np.zeros((nn, 6, 6))
        dphi[:, 0, 0] = self.ca * r.k1
        dphi[:, 1, 1] = self.ca * r.k_m1
        dphi[:, 2, 1] = r.k2
        dphi[:, 3, 2] = r.k_m2 * U[:, 3]
        dphi[:, 3, 3] = r.k_m2 * U[:, 2]
        dphi[:, 4, 4] = r.k3
        dphi[:, 5, 5] = self.km3 * U[:, 3]
        dphi[:, 5, 3] = self.km3 * U[:, 5]
        Jr = np.einsum("ab,nbc->nac", chem.STOICH, dphi)
        Jr[-1] = 0.0
        return Jr

    def jac_banded(self, y, t):
        Jr = self._reaction_jac(y.reshape(-1, 6))
        pack = self.Lpack.copy()
        idx = np.arange(Jr.shape[0]) * 6
        for a in range(6):
            for b in range(6):
                pack[self.mu + a - b, idx + b] += Jr[:, a, b]
        return pack

    def jac_sparse(self, y):
        Jr = self._reaction_jac(y.reshape(-1, 6))
        return self.L + sp.block_diag(Jr, format="csr")


def trace_times(cfg: Config) -> np.ndarray:
    """Output grid for bulk surface traces: log-spaced early points to pin
    down the initial transient, then uniform steps extended trace_pad
    seconds past t_end so interpolation never extrapolates."""
    s = cfg.solver
    t_log = np.geomspace(s.trace_log_start, s.trace_log_end, s.trace_log_points)
    t_lin = np.arange(0.0, s.t_end + s.trace_pad + 0.5 * s.trace_dt, s.trace_dt)
    return np.unique(np.concatenate([t_log, t_lin]))


def sample_times(cfg: Config) -> np.ndarray:
    """Measurement grid: n_samples uniform points on [0, t_end]."""
    s = cfg.solver
    return np.linspace(0.0, s.t_end, s.n_samples)


class SurfaceTraces:
    """Membrane-side bulk concentrations as smooth functions of time.

    Columns: interior CO2 at the membrane, then all six exterior species at
    the membrane.  Evaluation uses the coefficients of a monotone C1 cubic
    (PCHIP), which keeps the compartment integrator's error control happy;
    piecewise-linear interpolation has corners at every grid point.
    """

    def __init__(self, t: np.ndarray, values: np.ndarray):
        p = PchipInterpolator(t, values, axis=0)
        self.t = t
        self.values = values
        self._x = p.x
        self._c = p.c                      # (4, n_segments, n_cols)
        self._nseg = self._c.shape[1]

    def __call__(self, t: float) -> np.ndarray:
        i = np.searchsorted(self._x, t, side="right") - 1
        if i < 0:
            i = 0
        elif i >= self._nseg:
            i = self._nseg - 1
        s = t - self._x[i]
        c = self._c[:, i, :]
        return ((c[0] * s + c[1]) * s + c[2]) * s + c[3]


def _check_nonnegative(arr, what: str):
    """Clamp roundoff-level negative concentrations; fail on real ones."""
    m = float(np.min(arr))
    if m < -TOL_NEG:
        raise IntegrationError(
            f"{what} produced a concentration of {m:.3e} mM, more negative "
            f"than the {-TOL_NEG:.0e} roundoff allowance")
    if m < 0.0:
        arr = np.where(arr < 0.0, 0.0, arr)
    return arr


def solve_bulk(cfg: Config, lam: float, mesh: Mesh = None, t_out=None):
    """Integrate the bulk system; return (t, full state array).

    The state array has shape (len(t), 6 * n_nodes) in node-major layout.
    """
    model = BulkModel(cfg, lam, mesh)
    if t_out is None:
        t_out = trace_times(cfg)
    s = cfg.solver
    sol, info = odeint(model.rhs, model.y0, t_out, Dfun=model.jac_banded,
                       ml=model.ml, mu=model.mu, rtol=s.rtol, atol=s.atol,
                       mxstep=s.max_steps, full_output=True)
    if info["message"] != "Integration successful.":
        raise IntegrationError(
            f"bulk integration failed at lam={lam:g}: {info['message']} "
            f"(reached t={info['tcur'][-1]:.3f} s of {t_out[-1]:.3f} s)")
    sol = _check_nonnegative(sol, f"bulk integration (lam={lam:g})")
    return t_out, sol, model


_trace_cache: dict = {}


def clear_cache() -> None:
    """Drop all cached bulk surface traces."""
    _trace_cache.clear()


def bulk_surface_traces(cfg: Config, lam: float, cfg_key: str = None,
                        use_cache: bool = True) -> SurfaceTraces:
    """Surface traces for one permeability, cached per (config, lam).

    The bulk solution is independent of A0 and gamma under one-way
    coupling, so dictionary generation reuses it across the whole (xi_A,
    xi_gamma) plane for each xi_lam.
    """
    if use_cache:
        if cfg_key is None:
            from .config import config_hash
            cfg_key = config_hash(cfg)
        key = (cfg_key, float(lam))
        hit = _trace_cache.get(key)
        if hit is not None:
            return hit
    t_out, sol, model = solve_bulk(cfg, lam)
    ni = model.mesh.n_int
    vals = np.column_stack([sol[:, (ni - 1) * 6], sol[:, ni * 6:(ni + 1) * 6]])
    traces = SurfaceTraces(t_out, vals)
    if use_cache:
        _trace_cache[key] = traces
    return traces


# ---------------------------------------------------------------------------
# sensor compartment

class SensorCompartment:
    """Well-mixed electrode compartment driven by bulk surface traces."""

    def __init__(self, cfg: Config, params: PhysicalParams, traces: SurfaceTraces):
        self.cfg = cfg
        self.p = params
        self.traces = traces
        self.rates = chem.RateTable.from_config(cfg.chemistry, "out")
        self.h = cfg.geometry.tip_height
        self.qlen = cfg.compartment.quench_length
        _, u_out = initial_states(cfg)
        self.u0 = u_out

    def _fluxes(self, u):
        r, a0 = self.rates, self.p.a0
        return np.array([a0 * r.k1 * u[0], a0 * r.k_m1 * u[1],
                         r.k2 * u[1], r.k_m2 * u[2] * u[3],
                         r.k3 * u[4], r.k_m3 * u[5] * u[3]])

    def rhs(self, u, t):
        tr = self.traces(t)
        d = chem.STOICH @ self._fluxes(u)
        d += (2.0 * self.p.gamma / self.qlen) * (tr[1:] - u)
        d[0] -= (self.p.lam / self.h) * (u[0] - tr[0])
        return d

    def jac(self, u, t):
        r, a0 = self.rates, self.p.a0
        dphi = np.zeros((6, 6))
        dphi[0, 0] = a0 * r.k1
        dphi[1, 1] = a0 * r.k_m1
        dphi[2, 1] = r.k2
        dphi[3, 2] = r.k_m2 * u[3]
        dphi[3, 3] = r.k_m2 * u[2]
        dphi[4, 4] = r.k3
        dphi[5, 5] = r.k_m3 * u[3]
        dphi[5, 3] = r.k_m3 * u[5]
        J = chem.STOICH @ dphi
        J -= (2.0 * self.p.gamma / self.qlen) * np.eye(6)
        J[0, 0] -= self.p.lam / self.h
        return J


def solve_compartment(cfg: Config, params: PhysicalParams, traces: SurfaceTraces,
                      t_out=None):
    """Integrate the compartment ODE on the measurement grid."""
    comp = SensorCompartment(cfg, params, traces)
    if t_out is None:
        t_out = sample_times(cfg)
    s = cfg.solver
    u, info = odeint(comp.rhs, comp.u0.copy(), t_out, Dfun=comp.jac,
                     rtol=s.rtol, atol=s.atol, mxstep=s.max_steps,
                     full_output=True)
    if info["message"] != "Integration successful.":
        raise IntegrationError(
            f"compartment integration failed at lam={params.lam:g}, "
            f"A0={params.a0:g}, gamma={params.gamma:g}: {info['message']} "
            f"(reached t={info['tcur'][-1]:.3f} s)")
    u = _check_nonnegative(u, "compartment integration")
    return t_out, u


# ---------------------------------------------------------------------------
# two-way coupling (sensitivity checks)

class TwoWayModel:
    """Joint bulk + compartment system with a closed mass balance.

    The compartment covers an area fraction (w / 2R)^2 of the cell surface,
    so per mole it gains through its wall, the adjacent bulk rim nodes lose
    the matching amount scaled by compartment volume over nodal volume.
    State layout: bulk (node-major), then the six compartment values.
    """

    def __init__(self, cfg: Config, params: PhysicalParams):
        self.bulk = BulkModel(cfg, params.lam)
        self.p = params
        g = cfg.geometry
        self.comp_rates = chem.RateTable.from_config(cfg.chemistry, "out")
        self.h = g.tip_height
        self.qlen = cfg.compartment.quench_length
        # compartment volume per steradian over nodal lumped mass
        v_comp = (g.tip_width ** 2 * g.tip_height) / 16.0
        mesh = self.bulk.mesh
        self.w_int = v_comp / mesh.mass[mesh.n_int - 1]
        self.w_ext = v_comp / mesh.mass[mesh.n_int]
        self.gi = (mesh.n_int - 1) * 6
        self.ge = mesh.n_int * 6
        _, u_out = initial_states(cfg)
        self.y0 = np.concatenate([self.bulk.y0, u_out])

    def _comp_fluxes(self, u):
        r, a0 = self.comp_rates, self.p.a0
        return np.array([a0 * r.k1 * u[0], a0 * r.k_m1 * u[1],
                         r.k2 * u[1], r.k_m2 * u[2] * u[3],
                         r.k3 * u[4], r.k_m3 * u[5] * u[3]])

    def rhs(self, t, y):
        yb, u = y[:-6], y[-6:]
        db = self.bulk.rhs(yb, t)
        tr_int = yb[self.gi]
        tr_ext = yb[self.ge:self.ge + 6]
        ex_wall = (2.0 * self.p.gamma / self.qlen) * (tr_ext - u)
        ex_mem = (self.p.lam / self.h) * (u[0] - tr_int)
        du = chem.STOICH @ self._comp_fluxes(u) + ex_wall
        du[0] -= ex_mem
        # matching mass changes in the rim nodes
        db[self.ge:self.ge + 6] -= self.w_ext * ex_wall
        db[self.gi] += self.w_int * ex_mem
        return np.concatenate([db, du])

    def jac(self, t, y):
        yb, u = y[:-6], y[-6:]
        Jb = self.bulk.jac_sparse(yb).tolil()
        r, a0 = self.comp_rates, self.p.a0
        dphi = np.zeros((6, 6))
        dphi[0, 0] = a0 * r.k1
        dphi[1, 1] = a0 * r.k_m1
        dphi[2, 1] = r.k2
        dphi[3, 2] = r.k_m2 * u[3]
        dphi[3, 3] = r.k_m2 * u[2]
        dphi[4, 4] = r.k3
        dphi[5, 5] = r.k_m3 * u[3]
        dphi[5, 3] = r.k_m3 * u[5]
        Jc = chem.STOICH @ dphi
        q = 2.0 * self.p.gamma / self.qlen
        N = self.bulk.N
        J = sp.lil_matrix((N + 6, N + 6))
        J[:N, :N] = Jb
        J[N:, N:] = Jc - q * np.eye(6)
        J[N, N] -= self.p.lam / self.h
        for s in range(6):
            J[N + s, self.ge + s] += q
            J[self.ge + s, self.ge + s] -= self.w_ext * q
            J[self.ge + s, N + s] += self.w_ext * q
        J[N, self.gi] += self.p.lam / self.h
        J[self.gi, N] += self.w_int * self.p.lam / self.h
        J[self.gi, self.gi] -= self.w_int * self.p.lam / self.h
        return J.tocsc()


def solve_two_way(cfg: Config, params: PhysicalParams, t_out=None):
    """Integrate the joint system (BDF, sparse Jacobian)."""
    model = TwoWayModel(cfg, params)
    if t_out is None:
        t_out = sample_times(cfg)
    s = cfg.solver
    out = solve_ivp(model.rhs, (t_out[0], t_out[-1]), model.y0, method="BDF",
                    t_eval=t_out, jac=model.jac, rtol=s.rtol, atol=s.atol)
    if not out.success:
        raise IntegrationError(f"two-way integration failed: {out.message}")
    u = _check_nonnegative(out.y[-6:, :].T.copy(), "two-way integration")
    return t_out, u


# ---------------------------------------------------------------------------
# top-level simulation

@dataclass(frozen=True)
class SimResult:
    """One simulated experiment: compartment state and pH on the sample grid."""

    t: np.ndarray
    u: np.ndarray            # (n_samples, 6) compartment concentrations
    ph: np.ndarray           # (n_samples,)
    params: PhysicalParams
    xi: np.ndarray | None


def simulate(cfg: Config, xi=None, params: PhysicalParams = None,
             cfg_key: str = None, use_cache: bool = True) -> SimResult:
    """Run one experiment, given either scaled xi or physical parameters."""
    if (xi is None) == (params is None):
        raise ConfigurationError("provide exactly one of xi or params")
    if params is None:
        params = map_params(xi, cfg)
        xi = np.asarray(xi, dtype=float)
    if cfg.compartment.coupling == "two_way":
        t, u = solve_two_way(cfg, params)
    else:
        traces = bulk_surface_traces(cfg, params.lam, cfg_key=cfg_key,
                                     use_cache=use_cache)
        t, u = solve_compartment(cfg, params, traces)
    ph = chem.ph_of(u[:, 3])
    return SimResult(t=t, u=u, ph=ph, params=params,
                     xi=None if xi is None else np.array(xi, dtype=float))


def write_sim_csv(path, res: SimResult) -> None:
    """Write a simulation result; full double precision, reload-exact."""
    header = "t_s,ph," + ",".join(f"{s}_mM" for s in
                                  ("co2", "h2co3", "hco3", "h", "ha", "a"))
    data = np.column_stack([res.t, res.ph, res.u])
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")


def read_sim_csv(path):
    """Load (t, ph, u) from a file written by write_sim_csv."""
    data = np.loadtxt(path, delimiter=",", skiprows=1)
    return data[:, 0], data[:, 1], data[:, 2:]
