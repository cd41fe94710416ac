"""``drycss`` command line: one subcommand per pipeline stage."""
from __future__ import annotations

import argparse
import sys

from drycss import flows, helper
from drycss.config import RunConfig, load_config
from drycss.errors import DataError, DrycssError

DEFAULTS = RunConfig()


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    g = common.add_argument_group("run options")
    g.add_argument("--config", metavar="FILE", help="JSON run config (default: built-in desk-scale config)")
    g.add_argument("--workdir", metavar="DIR", help=f"artifact directory (default: {DEFAULTS.paths.workdir})")
    g.add_argument("--seed", type=int, help=f"root seed (default: {DEFAULTS.root_seed})")
    g.add_argument("--jobs", type=int, help=f"worker threads; env DRYCSS_JOBS (default: {DEFAULTS.jobs})")
    g.add_argument("--force", action="store_true", help="overwrite this stage's existing artifacts")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drycss", description="Climate suitability screening for dryland restoration")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = [_common()]

    synth = sub.add_parser("synth", parents=common, help="generate a synthetic cube, NDVI and labeled samples")
    synth.add_argument("--n-steps", type=int, help=f"time steps (default: {DEFAULTS.grid.n_steps})")
    sub.add_parser("features", parents=common, help="fit spectral feature tables on the labeled samples")

    train = sub.add_parser("train", parents=common, help="train the BLUP and network grid")
    train.add_argument("--kinds", nargs="+", choices=["blup", "nn"], help=f"model kinds (default: {' '.join(DEFAULTS.training.kinds)})")
    train.add_argument("--repetitions", type=int, help=f"holdout repetitions (default: {DEFAULTS.training.repetitions})")
    train.add_argument("--epochs", type=int, help=f"network epochs (default: {DEFAULTS.network.epochs})")
    train.add_argument("--select-lambda", action="store_true", help="choose the ridge penalty by leave-one-out")

    sub.add_parser("predict", parents=common, help="CSS maps per model kind and combined")
    sub.add_parser("calibrate", parents=common, help="reclassify samples and fit the CSS to NDVI calibration")
    sub.add_parser("opportunity", parents=common, help="calibrated CSS minus summer NDVI")

    cand = sub.add_parser("candidates", parents=common, help="extract, annotate and filter restoration candidates")
    cand.add_argument("--count", type=int, help=f"candidates to extract (default: {DEFAULTS.thresholds.candidate_count})")
    cand.add_argument("--rules", metavar="FILE", help="rules document, e.g. default.rules")
    cand.add_argument("--attributes", metavar="CSV", help="attribute table keyed by site or lat/lon, e.g. table_s4.csv")
    cand.add_argument("--sites-from-attributes", action="store_true", help="take the candidates from the attribute table")

    analogs = sub.add_parser("analogs", parents=common, help="find climate-analog ecosystems for the candidates")
    analogs.add_argument("--max-climate-dist", type=float, help="climate distance limit (default: 10th percentile per site)")
    analogs.add_argument(
        "--min-ndvi-margin", type=float, help=f"required NDVI gain (default: {DEFAULTS.analogs.min_ndvi_margin})"
    )
    analogs.add_argument("--exclusion", metavar="GRID", help="excluded-pixel grid (.f32 with sidecar)")

    sub.add_parser("report", parents=common, help="tables, heatmaps and summaries")
    sub.add_parser("run-all", parents=common, help="every stage from synth to report")
    return parser


def overrides_from(args: argparse.Namespace) -> dict:
    out: dict = {}

    def put(section: str | None, key: str, value):
        if value is None:
            return
        (out.setdefault(section, {}) if section else out)[key] = value

    put("paths", "workdir", args.workdir)
    put(None, "root_seed", args.seed)
    put(None, "jobs", args.jobs)
    put("grid", "n_steps", getattr(args, "n_steps", None))
    put("training", "kinds", getattr(args, "kinds", None))
    put("training", "repetitions", getattr(args, "repetitions", None))
    put("training", "select_lambda", getattr(args, "select_lambda", None) or None)
    put("network", "epochs", getattr(args, "epochs", None))
    put("thresholds", "candidate_count", getattr(args, "count", None))
    put("analogs", "max_climate_dist", getattr(args, "max_climate_dist", None))
    put("analogs", "min_ndvi_margin", getattr(args, "min_ndvi_margin", None))
    put("paths", "exclusion", getattr(args, "exclusion", None))
    return out


def run(args: argparse.Namespace) -> dict:
    cfg = load_config(args.config, overrides_from(args))
    jobs = cfg.jobs
    if args.command == "run-all":
        for stage, artifacts in flows.run_all_flow(cfg, force=args.force).items():
            print(helper.format_stage_summary(stage, artifacts))
        return {}
    stage_flows = {
        "synth": flows.synth_flow,
        "features": flows.features_flow,
        "train": flows.with_jobs(flows.train_flow, jobs),
        "predict": flows.with_jobs(flows.predict_flow, jobs),
        "calibrate": flows.calibrate_flow,
        "opportunity": flows.opportunity_flow,
        "analogs": flows.with_jobs(flows.analogs_flow, jobs),
        "report": flows.report_flow,
    }
    if args.command == "candidates":
        artifacts = flows.candidates_flow(
            cfg, args.force, rules=args.rules, attributes=args.attributes, sites_from_attributes=args.sites_from_attributes
        )
    else:
        artifacts = stage_flows[args.command](cfg, args.force)
    print(helper.format_stage_summary(args.command, artifacts))
    return artifacts


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        run(args)
    except DrycssError as e:
        print(f"drycss {args.command}: error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"drycss {args.command}: error: {DataError(str(e))}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
