"""Command line entry point: ``absorbkit run|synth|reho|report``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import __version__
from .config import load_config
from .data import RoiRegistry, Dataset, write_covariates, write_feature_table
from .errors import AbsorbError, ConfigError, DataError

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_PARTIAL = 0, 2, 3, 4

log = logging.getLogger("absorbkit")


def _cmd_run(args) -> int:
    from .pipeline import run_all

    cfg = load_config(args.config)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.contrast:
        over["contrasts"] = tuple(args.contrast)
    if args.permutations is not None:
        over["permutation_iterations"] = args.permutations
    if args.residualize:
        over["residualize"] = True
    if args.full_null:
        over["full_null"] = True
    if args.n_jobs is not None:
        over["n_jobs"] = args.n_jobs
    if args.out is not None:
        over["paths"] = type(cfg.paths)(**{**cfg.paths.__dict__, "out_dir": args.out})
    try:
        cfg = cfg.with_overrides(**over)
    except DataError as e:
        raise ConfigError(str(e)) from e
    _, code = run_all(cfg)
    return code


def _cmd_synth(args) -> int:
    from .synth import GeneratorSpec, generate_synthetic

    if args.spec:
        path = Path(args.spec)
        try:
            raw = path.read_bytes()
            d = json.loads(raw) if path.suffix.lower() == ".json" else tomllib.loads(raw.decode())
        except (OSError, ValueError) as e:
            raise ConfigError(f"cannot read generator spec {path}: {e}") from e
    else:
        d = {}
    if args.seed is not None:
        d["seed"] = args.seed
    spec = GeneratorSpec.from_dict(d)
    cohort = generate_synthetic(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_feature_table(cohort.group, out / "group.csv")
    if cohort.case is not None:
        write_feature_table(cohort.case, out / "case.csv")
    write_covariates(cohort.covariate_names, cohort.covariates, out / "covariates.csv")
    print(f"wrote {cohort.group.n_samples} group rows"
          + (f" and {cohort.case.n_samples} case rows" if cohort.case is not None else "")
          + f" to {out}")
    return EXIT_OK


def _cmd_reho(args) -> int:
    from .data import SampleMeta
    from .reho import load_labels, load_volume, reho_features

    registry = RoiRegistry.from_csv(args.registry) if args.registry else RoiRegistry.default()
    vol, side = load_volume(args.volume, args.sidecar)
    labels = load_labels(args.labels, vol.data.shape[:3])
    feats = reho_features(vol, labels, registry, cluster=args.cluster, fwhm_mm=args.fwhm,
                          allow_missing=args.allow_missing)
    ids = [r for r, v in zip(registry.roi_ids, feats) if v == v]  # drop empty ROIs (NaN)
    feats = feats[~np.isnan(feats)]
    meta = SampleMeta(args.sample_id, args.subject_id, args.cohort, args.condition, args.run_id)
    write_feature_table(Dataset(feats[None, :], (meta,), ids), args.out)
    print(f"wrote {len(feats)} ROI values to {args.out}")
    return EXIT_OK


def _cmd_report(args) -> int:
    from .report import render_run

    print(render_run(args.run))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="absorbkit", description=__doc__)
    p.add_argument("--version", action="version", version=f"absorbkit {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress at INFO level")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the pipeline from a config file")
    r.add_argument("--config", required=True)
    r.add_argument("--seed", type=int)
    r.add_argument("--contrast", action="append", help="contrast name; repeat to select several")
    r.add_argument("--permutations", type=int)
    r.add_argument("--residualize", action="store_true")
    r.add_argument("--full-null", action="store_true", help="rerun selection inside each null iteration")
    r.add_argument("--n-jobs", type=int)
    r.add_argument("--out", help="override paths.out_dir")
    r.set_defaults(func=_cmd_run)

    s = sub.add_parser("synth", help="write a synthetic cohort")
    s.add_argument("--spec", help="generator spec (.toml or .json)")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int)
    s.set_defaults(func=_cmd_synth)

    h = sub.add_parser("reho", help="ReHo feature row from one 4-D volume")
    h.add_argument("--volume", required=True)
    h.add_argument("--sidecar", required=True)
    h.add_argument("--labels", required=True)
    h.add_argument("--out", required=True)
    h.add_argument("--registry")
    h.add_argument("--cluster", type=int, default=27, choices=(7, 19, 27))
    h.add_argument("--fwhm", type=float, default=2.0)
    h.add_argument("--allow-missing", action="store_true",
                   help="skip ROIs absent from the label volume instead of failing")
    h.add_argument("--sample-id", default="sample")
    h.add_argument("--subject-id", default="subject")
    h.add_argument("--cohort", default="group", choices=("group", "case"))
    h.add_argument("--condition", default="J1")
    h.add_argument("--run-id", type=int, default=1)
    h.set_defaults(func=_cmd_reho)

    t = sub.add_parser("report", help="print the metric grid of a finished run")
    t.add_argument("--run", required=True)
    t.set_defaults(func=_cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except AbsorbError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
