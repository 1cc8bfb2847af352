"""Dictionary of simulated datum curves over the scaled parameter box,
and everything needed to store and query it.

Workflow (mirrored by the command line tool):

1. ``generate``: run the forward model on a regular grid over the scaled
   parameter box and quantize each pH trace into a datum column.  Columns
   are cached on disk one file per grid point, so an interrupted run
   resumes where it stopped.
2. ``kmedoids`` / ``elbow_scan``: partition the columns into k clusters
   on the squared Euclidean distance matrix; the elbow scan reports the
   cost against k.
3. ``nmf``: compress each cluster with a nonnegative matrix factorization
   D_c ~ W_c H_c, alternating batched nonnegative least squares solves.
4. ``estimate_dce``: sample the discrepancy between freshly simulated
   curves at perturbed parameters and their best representation in W_c,
   giving a mean and covariance of the model error per cluster.  That
   error model whitens the classification step of the estimator.
5. ``save_bundle`` / ``load_bundle``: persist all of it with a text
   manifest plus raw little-endian float64 files, bit-exact on reload.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.linalg import cholesky, solve_triangular

from . import forward, measure
from .config import Config, config_hash
from .errors import BundleError, ConfigurationError, IntegrationError
from .sparse import nnls_cgls

BUNDLE_FORMAT = 1


# ---------------------------------------------------------------------------
# grid

@dataclass(frozen=True)
class GridSpec:
    """Regular grid over the scaled parameter box."""

    lo: tuple
    hi: tuple
    shape: tuple

    @classmethod
    def from_config(cls, cfg: Config) -> "GridSpec":
        g = cfg.grid
        return cls(lo=tuple(float(v) for v in g.lo),
                   hi=tuple(float(v) for v in g.hi),
                   shape=tuple(int(n) for n in g.shape))

    @property
    def n_atoms(self) -> int:
        return int(np.prod(self.shape))

    @property
    def spacing(self) -> np.ndarray:
        return (np.asarray(self.hi) - np.asarray(self.lo)) / \
            (np.asarray(self.shape) - 1)

    def axes(self):
        return tuple(np.linspace(self.lo[i], self.hi[i], self.shape[i])
                     for i in range(3))

    def labels(self) -> np.ndarray:
        """All grid points, shape (n_atoms, 3); the first scaled parameter
        varies slowest, the third fastest (lexicographic column order)."""
        a0, a1, a2 = self.axes()
        g0, g1, g2 = np.meshgrid(a0, a1, a2, indexing="ij")
        return np.column_stack([g0.ravel(), g1.ravel(), g2.ravel()])


# ---------------------------------------------------------------------------
# generation with a per-column disk cache

def _col_path(cols_dir: Path, idx: int) -> Path:
    return cols_dir / f"col_{idx:06d}.f8"


def datum_runner(cfg: Config, use_cache: bool = True):
    """Forward model composed with quantization, as a xi -> datum callable."""
    key = config_hash(cfg)

    def run(xi):
        res = forward.simulate(cfg, xi=xi, cfg_key=key, use_cache=use_cache)
        return measure.make_datum(res.ph, cfg)

    return run


def _generate_slab(cfg, grid, i0, workdir):
    """Generate all columns with first-axis index i0 (they share one bulk
    solve); returns the list of (idx, error message) failures."""
    cols_dir = Path(workdir) / "cols"
    cols_dir.mkdir(parents=True, exist_ok=True)
    labels = grid.labels()
    n12 = grid.shape[1] * grid.shape[2]
    run = datum_runner(cfg)
    failures = []
    m = cfg.solver.n_samples
    for idx in range(i0 * n12, (i0 + 1) * n12):
        path = _col_path(cols_dir, idx)
        if path.is_file() and path.stat().st_size == 8 * m:
            continue
        try:
            b = run(labels[idx])
        except IntegrationError as exc:
            failures.append((idx, str(exc)))
            continue
        tmp = path.with_suffix(".tmp")
        tmp.write_bytes(np.asarray(b, dtype="<f8").tobytes())
        tmp.rename(path)
    forward.clear_cache()
    return failures


def generate(cfg: Config, workdir, workers: int = 1):
    """Simulate the dictionary columns, resuming from the per-column cache.

    Returns (labels, D) with D of shape (n_samples, n_atoms).  Any forward
    failure is recorded in ``failures.txt`` in the workdir and aborts with
    IntegrationError after the sweep, so one bad corner cannot silently
    truncate the dictionary.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    grid = GridSpec.from_config(cfg)
    failures = []
    slabs = list(range(grid.shape[0]))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=workers) as ex:
            for fl in ex.map(_generate_slab, [cfg] * len(slabs),
                             [grid] * len(slabs), slabs,
                             [workdir] * len(slabs)):
                failures.extend(fl)
    else:
        for i0 in slabs:
            failures.extend(_generate_slab(cfg, grid, i0, workdir))
    if failures:
        report = workdir / "failures.txt"
        with open(report, "w") as fh:
            for idx, msg in failures:
                fh.write(f"column {idx}: {msg}\n")
        raise IntegrationError(
            f"{len(failures)} dictionary column(s) failed; see {report}")
    return grid.labels(), load_columns(cfg, workdir)


def load_columns(cfg: Config, workdir) -> np.ndarray:
    """Assemble the cached columns into the dictionary matrix."""
    grid = GridSpec.from_config(cfg)
    m = cfg.solver.n_samples
    cols_dir = Path(workdir) / "cols"
    D = np.empty((m, grid.n_atoms))
    for idx in range(grid.n_atoms):
        path = _col_path(cols_dir, idx)
        if not path.is_file():
            raise BundleError(f"missing dictionary column cache {path}")
        D[:, idx] = np.frombuffer(path.read_bytes(), dtype="<f8")
    if D.min() < 0:
        raise BundleError("dictionary columns must be nonnegative")
    return D


# ---------------------------------------------------------------------------
# clustering

def pairwise_sq_distances(D: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances between columns, via the Gram matrix
    (no p^2-by-m intermediate).

    The clustering runs on squared distances: assignments are the same as
    with plain distances, but the medoid update then minimizes the
    within-cluster sum of squares, which keeps clusters compact the way a
    centroid would and noticeably improves how well each cluster's atoms
    bracket the experiments it wins.
    """
    g = D.T @ D
    n2 = np.diag(g)
    return np.maximum(n2[:, None] + n2[None, :] - 2.0 * g, 0.0)


@dataclass
class KmedoidsResult:
    medoids: np.ndarray     # (k,) column indices
    assign: np.ndarray      # (p,) cluster index per column
    cost: float
    n_iter: int


def _kmedoids_once(d, med, max_iter):
    p = d.shape[0]
    med = np.array(med, dtype=int)
    k = len(med)
    for it in range(1, max_iter + 1):
        dist = d[:, med]
        assign = np.argmin(dist, axis=1)
        # reseed any empty cluster with the point farthest from all medoids
        for j in range(k):
            if not np.any(assign == j):
                far = np.argmax(d[:, med].min(axis=1))
                med[j] = far
                assign = np.argmin(d[:, med], axis=1)
        new_med = med.copy()
        for j in range(k):
            members = np.flatnonzero(assign == j)
            within = d[np.ix_(members, members)].sum(axis=0)
            new_med[j] = members[int(np.argmin(within))]
        if np.array_equal(new_med, med):
            break
        med = new_med
    assign = np.argmin(d[:, med], axis=1)
    cost = float(d[np.arange(p), med[assign]].sum())
    return KmedoidsResult(medoids=med, assign=assign, cost=cost, n_iter=it)


def kmedoids(d: np.ndarray, k: int, seed: int, restarts: int = 8,
             max_iter: int = 200, warm_sets=()) -> KmedoidsResult:
    """Alternating (Voronoi-style) k-medoids on a distance matrix.

    Runs ``restarts`` seeded random initializations plus any supplied warm
    medoid sets and keeps the lowest-cost result.  Empty clusters are
    reseeded with the point farthest from the current medoids.  Fully
    deterministic for a given seed; cost ties keep the earliest candidate.
    """
    p = d.shape[0]
    if not (1 <= k <= p):
        raise ConfigurationError(f"need 1 <= k <= {p} clusters, got {k}")
    best = None
    inits = [np.asarray(w, dtype=int) for w in warm_sets]
    for trial in range(restarts):
        rng = np.random.default_rng([seed, trial])
        inits.append(rng.choice(p, size=k, replace=False))
    for med0 in inits:
        if len(med0) != k or len(np.unique(med0)) != k:
            raise ConfigurationError("warm medoid sets must hold k distinct indices")
        res = _kmedoids_once(d, med0, max_iter)
        if best is None or res.cost < best.cost:
            best = res
    return best


def _extend_medoids(d, med, k):
    """Grow a medoid set to size k by repeatedly adding the farthest point."""
    med = list(med)
    while len(med) < k:
        far = int(np.argmax(d[:, med].min(axis=1)))
        if far in med:     # degenerate duplicate-point case
            far = next(i for i in range(d.shape[0]) if i not in med)
        med.append(far)
    return np.asarray(med, dtype=int)


def elbow_scan(d: np.ndarray, ks, seed: int, restarts: int = 8,
               max_iter: int = 200):
    """Clustering cost for each k, warm-starting k from the best k-1 result.

    The warm start (previous medoids plus the farthest point) guarantees
    the reported cost never increases with k.  Returns a list of
    KmedoidsResult in the order of the sorted ks.
    """
    out = []
    prev = None
    for k in sorted(ks):
        warm = []
        if prev is not None and k >= len(prev.medoids):
            warm.append(_extend_medoids(d, prev.medoids, k))
        res = kmedoids(d, k, seed, restarts, max_iter, warm_sets=warm)
        out.append(res)
        prev = res
    return out


# ---------------------------------------------------------------------------
# compression

def choose_rank(Dsub: np.ndarray, sv_ratio: float) -> int:
    """Smallest rank whose next singular value drops below sv_ratio times
    the largest one."""
    s = np.linalg.svd(Dsub, compute_uv=False)
    if s[0] <= 0:
        return 1
    return max(1, int(np.count_nonzero(s > sv_ratio * s[0])))


def _half_sweep(A, B, X):
    """Batched nonnegative refit of X (columns) in ||B - A X||, accepting
    each column only if its residual does not increase."""
    e_old = np.einsum("ij,ij->j", B - A @ X, B - A @ X)
    Xn, _ = nnls_cgls(A, B, theta=None, target=0.0, x0=X)
    e_new = np.einsum("ij,ij->j", B - A @ Xn, B - A @ Xn)
    worse = e_new > e_old
    if np.any(worse):
        Xn[:, worse] = X[:, worse]
        e_new[worse] = e_old[worse]
    return Xn, float(e_new.sum())


@dataclass
class NmfResult:
    W: np.ndarray
    H: np.ndarray
    error: float            # Frobenius norm of D - W H
    converged: bool
    sweeps: int


def nmf(Dsub: np.ndarray, rank: int, seed: int, restarts: int = 5,
        max_sweeps: int = 200, tol_rel: float = 1.0e-8) -> NmfResult:
    """Nonnegative factorization D ~ W H by alternating batched NNLS.

    Each half-sweep refits one factor with the two-pass projected CGLS
    solver and keeps the old column wherever the refit would increase its
    residual, so the Frobenius error is non-increasing by construction.
    Several seeded restarts guard against bad local minima; the best final
    error wins.  A run that stops on the sweep cap instead of the relative
    improvement threshold is flagged converged=False (best iterate kept).
    """
    m, n = Dsub.shape
    if not (1 <= rank <= min(m, n)):
        raise ConfigurationError(f"rank must be in [1, {min(m, n)}], got {rank}")
    scale = np.sqrt(max(Dsub.mean(), 1.0e-300) / rank)
    d2 = float(np.sum(Dsub * Dsub))
    best = None
    for trial in range(restarts):
        rng = np.random.default_rng([seed, trial])
        W = scale * rng.random((m, rank))
        H = scale * rng.random((rank, n))
        err2 = float(np.sum((Dsub - W @ H) ** 2))
        converged = False
        sweep = 0
        for sweep in range(1, max_sweeps + 1):
            H, e2 = _half_sweep(W, Dsub, H)
            Wt, e2 = _half_sweep(H.T, Dsub.T, W.T)
            W = Wt.T
            if err2 - e2 <= tol_rel * max(err2, 1.0e-300) \
                    or e2 <= 1.0e-28 * max(d2, 1.0e-300):
                err2 = e2
                converged = True
                break
            err2 = e2
        res = NmfResult(W=W, H=H, error=float(np.sqrt(err2)),
                        converged=converged, sweeps=sweep)
        if best is None or res.error < best.error:
            best = res
    return best


# ---------------------------------------------------------------------------
# discrepancy (model error) estimation

@dataclass
class DceModel:
    """Gaussian model of the cluster representation error.

    mode 'diagonal' stores per-sample standard deviations; mode 'full'
    stores the covariance and its lower Cholesky factor.
    """

    mode: str
    mu: np.ndarray
    sd: np.ndarray | None = None
    cov: np.ndarray | None = None
    chol: np.ndarray | None = None

    def whiten(self, r: np.ndarray) -> np.ndarray:
        if self.mode == "diagonal":
            return r / self.sd if r.ndim == 1 else r / self.sd[:, None]
        return solve_triangular(self.chol, r, lower=True)


def _finalize_dce(E: np.ndarray, mode: str, jitter_rel: float,
                  jitter_abs: float) -> DceModel:
    mu = E.mean(axis=0)
    R = E - mu
    var = np.einsum("ij,ij->j", R, R) / (E.shape[0] - 1)
    delta = max(jitter_rel * float(var.mean()), jitter_abs)
    if mode == "diagonal":
        return DceModel(mode=mode, mu=mu, sd=np.sqrt(var + delta))
    C = (R.T @ R) / (E.shape[0] - 1) + delta * np.eye(E.shape[1])
    try:
        L = cholesky(C, lower=True)
    except np.linalg.LinAlgError as exc:
        raise BundleError(f"model-error covariance is not positive definite: {exc}")
    return DceModel(mode=mode, mu=mu, cov=C, chol=L)


def dce_sample(cfg: Config, grid: GridSpec, labels, members, W,
               cluster_idx: int, runner=None) -> np.ndarray:
    """Draw the representation-error sample matrix E (n_samples x m).

    Each draw picks a member grid point, jitters every scaled parameter
    uniformly within half a grid spacing, simulates a fresh datum there,
    and records what the cluster basis W cannot explain of it.  Draws
    falling outside [0, 1]^3 or failing to integrate are redrawn from the
    slot's own substream (bounded retries), so results do not depend on
    how slots are scheduled.  Perturbed points are never re-classified,
    even if they cross into a neighboring cluster's territory.
    """
    if runner is None:
        runner = datum_runner(cfg, use_cache=False)
    members = np.asarray(members, dtype=int)
    spacing = grid.spacing
    K = cfg.dce.n_samples
    E = np.empty((K, W.shape[0]))
    for s in range(K):
        rng = np.random.default_rng([cfg.dce.seed, cluster_idx, s])
        b = None
        for _ in range(cfg.dce.max_retries):
            j = members[rng.integers(len(members))]
            xi = labels[j] + (rng.random(3) - 0.5) * spacing
            if np.any(xi < 0.0) or np.any(xi > 1.0):
                continue
            try:
                b = runner(xi)
            except IntegrationError:
                continue
            break
        if b is None:
            raise IntegrationError(
                f"model-error draw {s} of cluster {cluster_idx} failed "
                f"{cfg.dce.max_retries} times")
        h, _ = nnls_cgls(W, b)
        E[s] = b - W @ h
    return E


def estimate_dce(cfg: Config, grid: GridSpec, labels, members, W,
                 cluster_idx: int, runner=None, return_samples: bool = False):
    """Estimate the cluster's representation-error model from fresh draws."""
    E = dce_sample(cfg, grid, labels, members, W, cluster_idx, runner)
    model = _finalize_dce(E, cfg.dce.mode, cfg.dce.jitter_rel, cfg.dce.jitter_abs)
    if return_samples:
        return model, E
    return model


# ---------------------------------------------------------------------------
# bundle persistence

@dataclass
class ClusterModel:
    members: np.ndarray
    W: np.ndarray
    H: np.ndarray
    dce: DceModel
    rank: int


@dataclass
class Bundle:
    grid: GridSpec
    labels: np.ndarray          # (p, 3)
    atoms: np.ndarray           # (m, p)
    assign: np.ndarray          # (p,)
    medoids: np.ndarray         # (k,)
    clusters: list              # list[ClusterModel]
    cfg_hash: str
    dce_mode: str

    @property
    def k(self) -> int:
        return len(self.clusters)


def _write_f8(path: Path, arr) -> str:
    data = np.asarray(arr, dtype="<f8").tobytes(order="F")
    path.write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def _read_f8(path: Path, shape) -> np.ndarray:
    data = path.read_bytes()
    expect = 8 * int(np.prod(shape))
    if len(data) != expect:
        raise BundleError(f"{path.name}: expected {expect} bytes, found {len(data)}")
    return np.frombuffer(data, dtype="<f8").reshape(shape, order="F").copy()


def save_bundle(bundle: Bundle, outdir) -> None:
    """Write the bundle: text manifest plus raw column-major float64 files."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    files = {}

    def put(name, arr):
        files[name] = (tuple(np.shape(arr)), _write_f8(outdir / name, arr))

    put("labels.f8", bundle.labels)
    put("atoms.f8", bundle.atoms)
    for c, cl in enumerate(bundle.clusters):
        put(f"W_{c:02d}.f8", cl.W)
        put(f"H_{c:02d}.f8", cl.H)
        put(f"mu_{c:02d}.f8", cl.dce.mu)
        if bundle.dce_mode == "diagonal":
            put(f"C_{c:02d}.f8", cl.dce.sd)
        else:
            put(f"C_{c:02d}.f8", cl.dce.cov)

    lines = [
        f"format_version = {BUNDLE_FORMAT}",
        f"config_hash = {bundle.cfg_hash}",
        f"grid_lo = {','.join(repr(v) for v in bundle.grid.lo)}",
        f"grid_hi = {','.join(repr(v) for v in bundle.grid.hi)}",
        f"grid_shape = {','.join(str(v) for v in bundle.grid.shape)}",
        f"n_clusters = {bundle.k}",
        f"dce_mode = {bundle.dce_mode}",
        f"ranks = {','.join(str(cl.rank) for cl in bundle.clusters)}",
        f"medoids = {','.join(str(v) for v in bundle.medoids)}",
        f"assignments = {','.join(str(v) for v in bundle.assign)}",
    ]
    for name in sorted(files):
        shape, digest = files[name]
        lines.append(f"file {name} {','.join(str(s) for s in shape)} {digest}")
    (outdir / "manifest.txt").write_text("\n".join(lines) + "\n")


def _parse_manifest(path: Path):
    if not path.is_file():
        raise BundleError(f"bundle manifest not found: {path}")
    kv, files = {}, {}
    for line in path.read_text().splitlines():
        line = line.strip()
        if not line:
            continue
        if line.startswith("file "):
            try:
                _, name, shape, digest = line.split()
                files[name] = (tuple(int(s) for s in shape.split(",")), digest)
            except ValueError as exc:
                raise BundleError(f"malformed manifest file entry: {line!r}") from exc
        elif " = " in line:
            key, val = line.split(" = ", 1)
            kv[key] = val
        else:
            raise BundleError(f"malformed manifest line: {line!r}")
    return kv, files


def load_bundle(bdir, cfg: Config = None) -> Bundle:
    """Load and validate a bundle; with a config given, refuse one built
    under a different configuration."""
    bdir = Path(bdir)
    kv, files = _parse_manifest(bdir / "manifest.txt")
    try:
        version = int(kv["format_version"])
        cfg_hash = kv["config_hash"]
        lo = tuple(float(v) for v in kv["grid_lo"].split(","))
        hi = tuple(float(v) for v in kv["grid_hi"].split(","))
        shape = tuple(int(v) for v in kv["grid_shape"].split(","))
        k = int(kv["n_clusters"])
        dce_mode = kv["dce_mode"]
        ranks = [int(v) for v in kv["ranks"].split(",")]
        medoids = np.array([int(v) for v in kv["medoids"].split(",")])
        assign = np.array([int(v) for v in kv["assignments"].split(",")])
    except (KeyError, ValueError) as exc:
        raise BundleError(f"incomplete or malformed manifest: {exc}") from exc
    if version != BUNDLE_FORMAT:
        raise BundleError(f"unsupported bundle format {version}")
    if cfg is not None and config_hash(cfg) != cfg_hash:
        raise BundleError(
            "bundle was built under a different configuration "
            f"(bundle {cfg_hash[:12]}..., current {config_hash(cfg)[:12]}...)")
    if dce_mode not in ("diagonal", "full"):
        raise BundleError(f"unknown dce mode {dce_mode!r}")
    if len(ranks) != k or len(medoids) != k:
        raise BundleError("cluster counts in manifest disagree")
    grid = GridSpec(lo=lo, hi=hi, shape=shape)
    p = grid.n_atoms
    if len(assign) != p or assign.min() < 0 or assign.max() >= k:
        raise BundleError("cluster assignments are out of range")

    def get(name):
        if name not in files:
            raise BundleError(f"manifest lists no file {name!r}")
        shape_, digest = files[name]
        arr = _read_f8(bdir / name, shape_)
        have = hashlib.sha256(np.asarray(arr, dtype="<f8").tobytes(order="F")).hexdigest()
        if have != digest:
            raise BundleError(f"{name}: checksum mismatch, bundle is corrupt")
        return arr

    labels = get("labels.f8")
    atoms = get("atoms.f8")
    if labels.shape != (p, 3) or atoms.shape[1] != p:
        raise BundleError("labels/atoms shapes disagree with the grid")
    clusters = []
    for c in range(k):
        members = np.flatnonzero(assign == c)
        W = get(f"W_{c:02d}.f8")
        H = get(f"H_{c:02d}.f8")
        mu = get(f"mu_{c:02d}.f8")
        C = get(f"C_{c:02d}.f8")
        if W.shape != (atoms.shape[0], ranks[c]) or H.shape != (ranks[c], len(members)):
            raise BundleError(f"cluster {c}: factor shapes disagree with rank/members")
        if dce_mode == "diagonal":
            dce = DceModel(mode=dce_mode, mu=mu.ravel(), sd=C.ravel())
        else:
            try:
                L = cholesky(C, lower=True)
            except np.linalg.LinAlgError as exc:
                raise BundleError(f"cluster {c}: stored covariance is not "
                                  f"positive definite: {exc}")
            dce = DceModel(mode=dce_mode, mu=mu.ravel(), cov=C, chol=L)
        clusters.append(ClusterModel(members=members, W=W, H=H, dce=dce,
                                     rank=ranks[c]))
    return Bundle(grid=grid, labels=labels, atoms=atoms, assign=assign,
                  medoids=medoids, clusters=clusters, cfg_hash=cfg_hash,
                  dce_mode=dce_mode)


def validate_bundle(bdir, cfg: Config = None) -> dict:
    """Full load-and-check; returns summary facts for reporting."""
    b = load_bundle(bdir, cfg)
    sizes = [len(cl.members) for cl in b.clusters]
    if min(sizes) < 1:
        raise BundleError("bundle has an empty cluster")
    return {
        "n_atoms": b.grid.n_atoms,
        "n_samples": b.atoms.shape[0],
        "n_clusters": b.k,
        "cluster_sizes": sizes,
        "ranks": [cl.rank for cl in b.clusters],
        "dce_mode": b.dce_mode,
        "config_hash": b.cfg_hash,
    }


# ---------------------------------------------------------------------------
# end-to-end build

def build_bundle(cfg: Config, workdir, workers: int = 1, elbow_ks=None) -> Bundle:
    """Generate, cluster, compress, and fit error models; save and return.

    ``elbow_ks`` additionally writes an elbow_costs.csv report for the
    given k values before clustering with the configured k.
    """
    workdir = Path(workdir)
    labels, D = generate(cfg, workdir, workers=workers)
    grid = GridSpec.from_config(cfg)
    d = pairwise_sq_distances(D)
    cl = cfg.cluster
    if elbow_ks:
        scan = elbow_scan(d, elbow_ks, cl.seed, cl.restarts, cl.max_iter)
        with open(workdir / "elbow_costs.csv", "w") as fh:
            fh.write("k,cost\n")
            for res in scan:
                fh.write(f"{len(res.medoids)},{res.cost:.17g}\n")
    km = kmedoids(d, cl.k, cl.seed, cl.restarts, cl.max_iter)
    clusters = []
    co = cfg.compress
    for c in range(cl.k):
        members = np.flatnonzero(km.assign == c)
        Dsub = D[:, members]
        rank = co.rank if co.rank > 0 else choose_rank(Dsub, co.sv_ratio)
        rank = min(rank, len(members))
        fac = nmf(Dsub, rank, seed=co.seed, restarts=co.restarts,
                  max_sweeps=co.max_sweeps, tol_rel=co.tol_rel)
        dce = estimate_dce(cfg, grid, labels, members, fac.W, c)
        clusters.append(ClusterModel(members=members, W=fac.W, H=fac.H,
                                     dce=dce, rank=rank))
    bundle = Bundle(grid=grid, labels=labels, atoms=D, assign=km.assign,
                    medoids=km.medoids, clusters=clusters,
                    cfg_hash=config_hash(cfg), dce_mode=cfg.dce.mode)
    save_bundle(bundle, workdir / "bundle")
    return bundle
