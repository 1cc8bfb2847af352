"""Three-phase parameter estimation from a quantized datum trace.

Phase 1 identifies which cluster of the dictionary the measurement lives
in: for each cluster the datum is centered by the cluster's model-error
mean and whitened by its covariance, fit nonnegatively in the compressed
basis W, and the cluster with the smallest whitened residual wins.  The
whitening is what makes residuals comparable across clusters: each
residual is measured in units of that cluster's own representation error.

Phase 2 codes the datum sparsely over the winning cluster's raw atoms
with the iterative alternating scheme, giving nonnegative weights over a
handful of grid points.

Phase 3 turns the weights into a parameter estimate: the weighted average
of the winning cluster's grid labels, normalized by the total weight.
The raw weighted sums are always reported as well, so the normalization
is transparent.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import forward, measure
from .config import Config
from .dictionary import Bundle
from .errors import InternalError
from .sparse import IasConfig, IasResult, ias, nnls_cgls, sensitivity_scales


@dataclass
class Phase1Result:
    winner: int
    residuals: np.ndarray       # squared whitened residual per cluster
    reached: np.ndarray         # discrepancy target met per cluster
    tie: bool                   # another cluster matched the winning residual


def phase1_identify(b, bundle: Bundle) -> Phase1Result:
    """Pick the cluster whose error-whitened basis explains the datum best.

    The nonnegative fit stops at the discrepancy target m (the expected
    squared norm of an m-sample standard normal residual).  Exact residual
    ties keep the lowest cluster index and are flagged.
    """
    b = np.asarray(b, dtype=float)
    m = b.shape[0]
    residuals = np.empty(bundle.k)
    reached = np.empty(bundle.k, dtype=bool)
    for c, cl in enumerate(bundle.clusters):
        bt = cl.dce.whiten(b - cl.dce.mu)
        Wt = cl.dce.whiten(cl.W)
        h, ok = nnls_cgls(Wt, bt, theta=None, target=float(m))
        r = bt - Wt @ h
        residuals[c] = float(r @ r)
        reached[c] = ok
    winner = int(np.argmin(residuals))
    tie = bool(np.any(np.delete(residuals, winner) == residuals[winner]))
    return Phase1Result(winner=winner, residuals=residuals, reached=reached,
                        tie=tie)


def phase2_code(b, bundle: Bundle, winner: int, cfg: Config,
                whiten: bool = False) -> IasResult:
    """Sparse nonnegative code of the datum over the winner's raw atoms.

    By default the code is computed in unwhitened datum units; pass
    ``whiten=True`` to solve in the cluster's error-whitened metric
    instead (the classification metric of phase 1).
    """
    e = cfg.estimate
    cl = bundle.clusters[winner]
    D = bundle.atoms[:, cl.members]
    bb = np.asarray(b, dtype=float)
    if whiten:
        D = cl.dce.whiten(D)
        bb = cl.dce.whiten(bb - cl.dce.mu)
    icfg = IasConfig(eta=e.eta,
                     theta_scales=sensitivity_scales(D, e.theta_base),
                     tol_theta=e.tol_theta, max_iter=e.max_iter,
                     inner_sigma=e.sigma_inner)
    return ias(D, bb, icfg)


def phase3_estimate(x, labels):
    """Raw and normalized label averages of a nonnegative code.

    Returns (xi_raw, xi_norm, total); xi_norm is None when the code is
    all zero and no estimate exists.
    """
    x = np.asarray(x, dtype=float)
    labels = np.asarray(labels, dtype=float)
    xi_raw = labels.T @ x
    total = float(x.sum())
    if total <= 0.0:
        return xi_raw, None, total
    return xi_raw, xi_raw / total, total


@dataclass
class EstimateResult:
    status: str                     # "ok" or "estimation_failed"
    phase1: Phase1Result
    code: IasResult
    x: np.ndarray                   # weights over the winner's members
    support: np.ndarray             # member positions with positive weight
    xi_raw: np.ndarray
    xi_norm: np.ndarray | None
    params: forward.PhysicalParams | None

    @property
    def winner(self) -> int:
        return self.phase1.winner


def estimate(b, bundle: Bundle, cfg: Config, whiten_phase2: bool = False) -> EstimateResult:
    """Run all three phases on one datum trace."""
    p1 = phase1_identify(b, bundle)
    if np.any(p1.residuals < p1.residuals[p1.winner]):
        raise InternalError("phase 1 winner does not have the smallest residual")
    code = phase2_code(b, bundle, p1.winner, cfg, whiten=whiten_phase2)
    cl = bundle.clusters[p1.winner]
    labels = bundle.labels[cl.members]
    xi_raw, xi_norm, total = phase3_estimate(code.x, labels)
    if xi_norm is None:
        return EstimateResult(status="estimation_failed", phase1=p1, code=code,
                              x=code.x, support=np.flatnonzero(code.x > 0),
                              xi_raw=xi_raw, xi_norm=None, params=None)
    params = forward.map_params(xi_norm, cfg)
    return EstimateResult(status="ok", phase1=p1, code=code, x=code.x,
                          support=np.flatnonzero(code.x > 0), xi_raw=xi_raw,
                          xi_norm=xi_norm, params=params)


# ---------------------------------------------------------------------------
# reporting

def write_report(result: EstimateResult, bundle: Bundle, cfg: Config,
                 outdir, b=None, replay: bool = True) -> None:
    """Write a human-readable report plus CSV artifacts.

    ``support.csv`` lists every positively weighted atom with its grid
    label; ``residuals.csv`` the phase-1 table.  With ``replay=True`` and
    a successful estimate, the forward model is re-run at the estimated
    parameters and written against the measured datum in ``replay.csv``.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    p1 = result.phase1

    with open(outdir / "residuals.csv", "w") as fh:
        fh.write("cluster,residual_sq,target_reached,winner\n")
        for c in range(bundle.k):
            fh.write(f"{c},{p1.residuals[c]:.17g},{int(p1.reached[c])},"
                     f"{int(c == p1.winner)}\n")

    cl = bundle.clusters[p1.winner]
    labels = bundle.labels[cl.members]
    order = result.support[np.argsort(result.x[result.support])[::-1]]
    with open(outdir / "support.csv", "w") as fh:
        fh.write("atom,xi_lam,xi_a,xi_gamma,weight\n")
        for j in order:
            fh.write(f"{cl.members[j]},{labels[j, 0]:.17g},{labels[j, 1]:.17g},"
                     f"{labels[j, 2]:.17g},{result.x[j]:.17g}\n")

    lines = [
        "parameter estimation report",
        f"status: {result.status}",
        f"winning cluster: {p1.winner} of {bundle.k}"
        + (" (tie, lowest index kept)" if p1.tie else ""),
        "whitened residuals: "
        + ", ".join(f"{c}: {r:.6g}" for c, r in enumerate(p1.residuals)),
        f"sparse code: {len(result.support)} positive weights, "
        f"{result.code.iterations} iterations, {result.code.status}",
        f"raw weighted label sums: {np.array2string(result.xi_raw, precision=6)}",
    ]
    if result.xi_norm is not None:
        p = result.params
        lines += [
            f"normalized estimate xi: {np.array2string(result.xi_norm, precision=6)}",
            f"physical parameters: lam = {p.lam:.6g} um/s, A0 = {p.a0:.6g}, "
            f"gamma = {p.gamma:.6g} um/s (log10 {np.log10(p.gamma):.4f})",
        ]
    else:
        lines.append("no estimate: the sparse code is all zero")
    (outdir / "report.txt").write_text("\n".join(lines) + "\n")

    if replay and result.xi_norm is not None and b is not None:
        res = forward.simulate(cfg, xi=result.xi_norm)
        rb = measure.make_datum(res.ph, cfg)
        fit = bundle.atoms[:, cl.members] @ result.x
        data = np.column_stack([res.t, np.asarray(b, dtype=float), fit, rb])
        np.savetxt(outdir / "replay.csv", data, delimiter=",",
                   header="t_s,datum,coded_fit,replay_datum", comments="",
                   fmt="%.17g")
