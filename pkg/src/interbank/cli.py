"""Command-line front end: run, sweep, validate, sample-network."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import charts
from .dynamics import RunRecord, ShockPolicy
from .ingest import InputError, SyntheticSpec, generate_synthetic, load_balance_sheets
from .ledger import BankRecord, Parameters
from .montecarlo import _NETWORK_TAG, EnsembleError, run_ensemble
from .reconstruction import CalibrationError, ReconstructionConfig, dump_matrix, sample_network

EMIT_CHOICES = ("series_csv", "report_json", "charts_svg", "matrix_dump")

_SYNTH_KEYS = {
    "n": "n_banks",
    "n_banks": "n_banks",
    "tail": "asset_tail_exponent",
    "share": "interbank_share",
    "lev_min": "lev_min",
    "lev_max": "lev_max",
    "seed": "seed",
}

# Overrides use the model's symbol names; `lambda` is a keyword in Python so
# the dataclass field carries a trailing underscore.
_PARAM_ALIASES = {"lambda": "lambda_"}


def _parse_synthetic(text: str) -> SyntheticSpec:
    kwargs: dict = {}
    lev_lo, lev_hi = SyntheticSpec.leverage_range
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise InputError(f"bad synthetic option {item!r}, expected key=value")
        key, value = item.split("=", 1)
        key = key.strip()
        if key not in _SYNTH_KEYS:
            raise InputError(f"unknown synthetic option {key!r}; known: {sorted(_SYNTH_KEYS)}")
        field = _SYNTH_KEYS[key]
        if field == "lev_min":
            lev_lo = float(value)
        elif field == "lev_max":
            lev_hi = float(value)
        elif field in ("n_banks", "seed"):
            kwargs[field] = int(value)
        else:
            kwargs[field] = float(value)
    return SyntheticSpec(leverage_range=(lev_lo, lev_hi), **kwargs)


def _parse_overrides(pairs: list[str]) -> dict:
    overrides: dict = {}
    fields = {f.name: f.type for f in Parameters.__dataclass_fields__.values()}
    for pair in pairs:
        if "=" not in pair:
            raise InputError(f"bad override {pair!r}, expected name=value")
        name, value = pair.split("=", 1)
        name = _PARAM_ALIASES.get(name.strip(), name.strip())
        if name not in Parameters.__dataclass_fields__:
            raise InputError(f"unknown parameter {name!r}")
        kind = fields[name]
        if "bool" in str(kind):
            overrides[name] = value.strip().lower() in ("1", "true", "yes")
        elif "int" in str(kind):
            overrides[name] = int(value)
        else:
            overrides[name] = float(value)
    return overrides


def _load_records(args: argparse.Namespace, params: Parameters) -> list[BankRecord]:
    if args.input is not None:
        return load_balance_sheets(args.input, rate=params.r0)
    return generate_synthetic(_parse_synthetic(args.synthetic))


def _write_series(record: RunRecord, path: Path) -> None:
    lines = ["t,rate,rel_equity,defaulted_frac,gamma"]
    for t, rate, rel, frac, gamma in record.series_rows():
        lines.append(f"{t},{rate!r},{rel!r},{frac!r},{gamma!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _emit_artifacts(
    outdir: Path,
    emit: set[str],
    results: "dict[str, tuple]",
    records: list[BankRecord],
    params: Parameters,
    master_seed: int,
    single_policy: bool,
) -> None:
    outdir.mkdir(parents=True, exist_ok=True)
    for label, (report, runs) in results.items():
        if "series_csv" in emit:
            for k, run in enumerate(runs):
                _write_series(run, outdir / f"series_{label}_{k:04d}.csv")
        if "report_json" in emit:
            name = "report.json" if single_policy else f"report_{label}.json"
            (outdir / name).write_text(report.to_json(), encoding="utf-8")
    if "charts_svg" in emit:
        curves = {label: runs[0] for label, (_, runs) in results.items()}
        charts.render_panels(curves, outdir)
    if "matrix_dump" in emit:
        config = ReconstructionConfig(
            density=params.d, seed=np.random.SeedSequence([int(master_seed), _NETWORK_TAG])
        )
        state = sample_network(records, config, rate=params.r0)
        dump_matrix(state, outdir / "network.csv")


def cmd_run(args: argparse.Namespace) -> int:
    overrides = _parse_overrides(args.set or [])
    params = Parameters(**overrides)
    if args.fixed_network:
        params = params.replace(resample_network=False)
    records = _load_records(args, params)
    policies = (
        [ShockPolicy.parse(p) for p in args.policies.split(",")]
        if getattr(args, "policies", None)
        else [ShockPolicy.parse(args.policy)]
    )
    emit = set(args.emit.split(",")) if args.emit else {"series_csv", "report_json"}
    unknown = emit - set(EMIT_CHOICES)
    if unknown:
        raise InputError(f"unknown emit flags {sorted(unknown)}; known: {EMIT_CHOICES}")

    results: dict[str, tuple] = {}
    all_converged = True
    for policy in policies:
        report, runs = run_ensemble(
            records, params, policy, args.realizations, args.seed, parallelism=args.parallelism
        )
        results[policy.label()] = (report, runs)
        all_converged &= report.n_converged == report.n_requested
    _emit_artifacts(
        Path(args.out), emit, results, records, params, args.seed, single_policy=len(policies) == 1
    )
    for label, (report, _) in results.items():
        stats = report.metrics["t_c"]
        print(
            f"{label}: {report.n_converged}/{report.n_requested} converged, "
            f"t_c mean {stats.mean:.1f}, final relative equity "
            f"{report.metrics['final_rel_equity'].mean:.4f}"
        )
    if not all_converged:
        print("warning: some realizations hit the iteration cap", file=sys.stderr)
        return 1
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    records = load_balance_sheets(args.input)
    print("id,equity,leverage,solvent")
    for rec in records:
        eq = rec.equity()
        lev = rec.total_assets() / eq
        print(f"{rec.id},{eq!r},{lev!r},{'yes' if eq > 0 else 'no'}")
    return 0


def cmd_sample_network(args: argparse.Namespace) -> int:
    overrides = _parse_overrides(args.set or [])
    params = Parameters(**overrides)
    if args.density is not None:
        params = params.replace(d=args.density)
    records = _load_records(args, params)
    config = ReconstructionConfig(density=params.d, seed=args.seed)
    state = sample_network(records, config, rate=params.r0)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    dump_matrix(state, out)
    n = state.n
    density = float((state.exposure_matrix() > 0).sum()) / (n * (n - 1))
    print(f"sampled {n}x{n} network, density {density:.4f}, total exposure {state.total_exposure():.6g}")
    return 0


def _add_input_options(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group(required=True)
    group.add_argument("--input", type=Path, help="balance-sheet CSV file")
    group.add_argument(
        "--synthetic",
        metavar="KEY=VAL[,KEY=VAL...]",
        help="generate a synthetic population (keys: n, tail, share, lev_min, lev_max, seed)",
    )


def _add_run_options(parser: argparse.ArgumentParser) -> None:
    _add_input_options(parser)
    parser.add_argument("--set", action="append", metavar="NAME=VALUE", help="override a model parameter")
    parser.add_argument("--realizations", type=int, default=1)
    parser.add_argument("--seed", type=int, default=0, help="master seed for the ensemble")
    parser.add_argument("--parallelism", type=int, default=1)
    parser.add_argument("--out", type=Path, default=Path("out"))
    parser.add_argument(
        "--emit",
        default="series_csv,report_json",
        help=f"comma list of artifacts to write ({','.join(EMIT_CHOICES)})",
    )
    parser.add_argument(
        "--fixed-network",
        action="store_true",
        help="sample one network for the whole ensemble instead of one per realization",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="interbank",
        description="Agent-based stress simulator for the overnight interbank lending market",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an ensemble for one shock policy")
    _add_run_options(p_run)
    p_run.add_argument("--policy", default="random", help="random, A_max/..., or index:K")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", help="run several shock policies on one sampled network")
    _add_run_options(p_sweep)
    p_sweep.add_argument(
        "--policies", required=True, help="comma list of policies, e.g. A_max,A_min,B_max"
    )
    p_sweep.set_defaults(func=cmd_run, sweep=True)

    p_val = sub.add_parser("validate", help="validate a balance-sheet file")
    p_val.add_argument("input", type=Path)
    p_val.set_defaults(func=cmd_validate)

    p_net = sub.add_parser("sample-network", help="sample one exposure matrix and dump it")
    _add_input_options(p_net)
    p_net.add_argument("--set", action="append", metavar="NAME=VALUE")
    p_net.add_argument("--density", type=float, default=None)
    p_net.add_argument("--seed", type=int, default=0)
    p_net.add_argument("--out", type=Path, default=Path("network.csv"))
    p_net.set_defaults(func=cmd_sample_network)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    # A sweep fixes one network across its policies so the curves differ only
    # by targeting.
    if getattr(args, "sweep", False):
        args.fixed_network = True
    try:
        return args.func(args)
    except (InputError, CalibrationError, EnsembleError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
