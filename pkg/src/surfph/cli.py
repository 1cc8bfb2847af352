"""Command line interface.

Subcommands cover the full workflow: ``simulate`` one experiment,
``build-dict`` a dictionary bundle (resumable), ``elbow`` the clustering
cost scan, ``estimate`` parameters from a datum trace, and
``validate-bundle`` integrity checks.  Every command that writes an output
directory drops a ``run_manifest.txt`` recording the command, the
configuration hash, and the library versions, so results can be traced
back; manifests carry no timestamps, which keeps repeated runs with the
same seed and configuration bit-identical.

Exit codes: 0 success, 2 configuration error, 3 integration failure,
4 bundle error, 5 estimation failure, 1 anything unexpected.

Environment variables (paths only): SURFPH_CONFIG, SURFPH_OUT,
SURFPH_WORKDIR, SURFPH_BUNDLE provide defaults for the corresponding
options.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, dictionary, estimate as est_mod, forward, measure
from .config import config_hash, load_config
from .errors import (BundleError, ConfigurationError, EstimationError,
                     IntegrationError, SurfphError)

_EXIT = {
    ConfigurationError: 2,
    IntegrationError: 3,
    BundleError: 4,
    EstimationError: 5,
}


def _env_default(var: str, fallback=None):
    v = os.environ.get(var, "").strip()
    return v if v else fallback


def write_run_manifest(outdir, cfg, argv, extra=None) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    lines = [
        f"command = surfph {' '.join(argv)}",
        f"package_version = {__version__}",
        f"numpy_version = {np.__version__}",
        f"scipy_version = {scipy.__version__}",
        f"config_hash = {config_hash(cfg)}",
        f"seeds = cluster:{cfg.cluster.seed} compress:{cfg.compress.seed} "
        f"dce:{cfg.dce.seed}",
    ]
    for key, val in (extra or {}).items():
        lines.append(f"{key} = {val}")
    (outdir / "run_manifest.txt").write_text("\n".join(lines) + "\n")


def _parse_ks(text: str):
    ks = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if ":" in part:
            a, b = part.split(":")
            ks.extend(range(int(a), int(b) + 1))
        else:
            ks.append(int(part))
    if not ks:
        raise ConfigurationError(f"no k values in {text!r}")
    return sorted(set(ks))


def _cmd_simulate(args, argv) -> int:
    cfg = load_config(args.config)
    if args.xi is not None and args.params is not None:
        raise ConfigurationError("give either --xi or --params, not both")
    if args.xi is not None:
        res = forward.simulate(cfg, xi=args.xi)
    elif args.params is not None:
        p = forward.PhysicalParams(*args.params)
        res = forward.simulate(cfg, params=p)
    else:
        raise ConfigurationError("one of --xi or --params is required")
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    forward.write_sim_csv(outdir / "sim.csv", res)
    rng = np.random.default_rng(args.noise_seed) if cfg.measure.noise_sigma > 0 else None
    b = measure.make_datum(res.ph, cfg, rng=rng,
                           allow_negative=cfg.measure.noise_sigma > 0)
    measure.write_datum_csv(outdir / "datum.csv", res.t, b)
    write_run_manifest(outdir, cfg, argv, {
        "lam": repr(res.params.lam), "a0": repr(res.params.a0),
        "gamma": repr(res.params.gamma),
    })
    print(f"wrote {outdir / 'sim.csv'} and {outdir / 'datum.csv'} "
          f"(peak pH {res.ph.max():.4f})")
    return 0


def _cmd_build_dict(args, argv) -> int:
    cfg = load_config(args.config)
    elbow_ks = _parse_ks(args.elbow_ks) if args.elbow_ks else None
    bundle = dictionary.build_bundle(cfg, args.workdir, workers=args.workers,
                                     elbow_ks=elbow_ks)
    write_run_manifest(args.workdir, cfg, argv, {
        "n_atoms": bundle.grid.n_atoms,
        "n_clusters": bundle.k,
        "ranks": ",".join(str(cl.rank) for cl in bundle.clusters),
    })
    sizes = ",".join(str(len(cl.members)) for cl in bundle.clusters)
    print(f"bundle written to {Path(args.workdir) / 'bundle'} "
          f"({bundle.grid.n_atoms} atoms, cluster sizes {sizes})")
    return 0


def _cmd_elbow(args, argv) -> int:
    cfg = load_config(args.config)
    ks = _parse_ks(args.ks)
    _, D = dictionary.generate(cfg, args.workdir, workers=args.workers)
    d = dictionary.pairwise_sq_distances(D)
    cl = cfg.cluster
    scan = dictionary.elbow_scan(d, ks, cl.seed, cl.restarts, cl.max_iter)
    out = Path(args.workdir) / "elbow_costs.csv"
    with open(out, "w") as fh:
        fh.write("k,cost\n")
        for res in scan:
            fh.write(f"{len(res.medoids)},{res.cost:.17g}\n")
    write_run_manifest(args.workdir, cfg, argv,
                       {"ks": ",".join(str(k) for k in ks)})
    for res in scan:
        print(f"k = {len(res.medoids):3d}  cost = {res.cost:.6g}")
    print(f"wrote {out}")
    return 0


def _cmd_estimate(args, argv) -> int:
    cfg = load_config(args.config)
    bundle = dictionary.load_bundle(args.bundle, cfg if args.check_config else None)
    _, b = measure.read_datum_csv(args.data)
    if b.shape[0] != bundle.atoms.shape[0]:
        raise ConfigurationError(
            f"datum has {b.shape[0]} samples, bundle expects "
            f"{bundle.atoms.shape[0]}")
    result = est_mod.estimate(b, bundle, cfg)
    outdir = Path(args.out)
    est_mod.write_report(result, bundle, cfg, outdir, b=b,
                         replay=not args.no_replay)
    write_run_manifest(outdir, cfg, argv, {"status": result.status,
                                           "winner": result.winner})
    if result.status != "ok":
        print("estimation failed: sparse code is all zero "
              f"(details in {outdir / 'report.txt'})")
        raise EstimationError("all-zero sparse code")
    p = result.params
    print(f"cluster {result.winner}; lam = {p.lam:.4g} um/s, "
          f"A0 = {p.a0:.4g}, log10 gamma = {np.log10(p.gamma):.4f} "
          f"(report in {outdir})")
    return 0


def _cmd_validate_bundle(args, argv) -> int:
    cfg = load_config(args.config) if args.check_config else None
    facts = dictionary.validate_bundle(args.bundle, cfg)
    for key, val in facts.items():
        print(f"{key} = {val}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="surfph",
        description="surface-pH forward modelling and sparse parameter estimation")
    ap.add_argument("--config", default=_env_default("SURFPH_CONFIG"),
                    help="configuration file (default: packaged defaults, "
                         "or $SURFPH_CONFIG)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one forward experiment")
    p.add_argument("--xi", nargs=3, type=float, metavar=("XL", "XA", "XG"),
                   help="scaled parameters in [0,1]^3")
    p.add_argument("--params", nargs=3, type=float,
                   metavar=("LAM", "A0", "GAMMA"),
                   help="physical parameters (um/s, -, um/s)")
    p.add_argument("--out", default=_env_default("SURFPH_OUT", "."),
                   help="output directory (default: . or $SURFPH_OUT)")
    p.add_argument("--noise-seed", type=int, default=0,
                   help="rng seed used only when measure.noise_sigma > 0")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("build-dict",
                       help="generate, cluster, compress, and fit error models")
    p.add_argument("--workdir", default=_env_default("SURFPH_WORKDIR", "dict"),
                   help="working directory; column cache makes re-runs resume")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--elbow-ks", default=None,
                   help="optional elbow report, e.g. '2:8' or '2,4,6'")
    p.set_defaults(func=_cmd_build_dict)

    p = sub.add_parser("elbow", help="clustering cost scan over k")
    p.add_argument("--workdir", default=_env_default("SURFPH_WORKDIR", "dict"))
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--ks", required=True, help="e.g. '2:10' or '2,3,5,8'")
    p.set_defaults(func=_cmd_elbow)

    p = sub.add_parser("estimate", help="estimate parameters from a datum CSV")
    p.add_argument("--bundle", default=_env_default("SURFPH_BUNDLE"),
                   required=_env_default("SURFPH_BUNDLE") is None,
                   help="bundle directory (or $SURFPH_BUNDLE)")
    p.add_argument("--data", required=True, help="datum CSV (t_s,datum_ph)")
    p.add_argument("--out", default=_env_default("SURFPH_OUT", "estimate_out"))
    p.add_argument("--no-replay", action="store_true",
                   help="skip the forward re-run at the estimated parameters")
    p.add_argument("--no-config-check", dest="check_config",
                   action="store_false",
                   help="load the bundle even if its config hash differs")
    p.set_defaults(func=_cmd_estimate)

    p = sub.add_parser("validate-bundle", help="integrity-check a bundle")
    p.add_argument("--bundle", default=_env_default("SURFPH_BUNDLE"),
                   required=_env_default("SURFPH_BUNDLE") is None)
    p.add_argument("--no-config-check", dest="check_config",
                   action="store_false")
    p.set_defaults(func=_cmd_validate_bundle)
    return ap


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args, argv)
    except SurfphError as exc:
        print(f"error: {exc}", file=sys.stderr)
        for cls, code in _EXIT.items():
            if isinstance(exc, cls):
                return code
        return 1
    except Exception as exc:                      # pragma: no cover
        print(f"unexpected error: {exc!r}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
