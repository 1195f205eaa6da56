"""Command-line front end: ingest -> metrics -> effects -> inference -> exports.

Every subcommand writes its exports plus a ``manifest.json`` capturing the
fully resolved configuration (inputs, seed, analysis selections). Re-running a
subcommand with ``--config <manifest.json>`` reproduces the outputs byte for
byte; ``--out`` and ``--threads`` are runtime details kept out of the manifest
so they never change results.

Exit codes: 0 success, 1 runtime failure, 2 input validation failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from . import io as vio
from .core import (
    IngestionError,
    apply_inclusion_criteria,
    build_panel,
    DEFAULT_LAYER_SPECS,
)
from .dyadic import (
    dyad_dataset,
    estimand_correspondence,
    fit_logistic_irls,
)
from .effects import (
    ContrastSpec,
    EffectError,
    classify_groups,
    counterfactual_trend,
    effect_suite,
    group_change,
    observed_assignment,
)
from .metrics import metric_table
from .networks import NetworkError
from .randomization import permutation_pvalue
from .stats import StatsError, loess_fit, wasserstein1, welch_ttest
from .synth import ScenarioError, SyntheticScenario, generate_panel, replicate_study

log = logging.getLogger("villagenet")

VALIDATION_ERRORS = (IngestionError, NetworkError, ScenarioError,
                     FileNotFoundError, json.JSONDecodeError)


def _parse_list(value: str) -> list[str]:
    return [v for v in (tok.strip() for tok in value.split(",")) if v]


def _parse_variants(value: str) -> list[tuple[str, ...]]:
    """'none;residual+exclude_intra_household' -> [(), ('exclude...', 'residual')]."""
    out = []
    for group in value.split(";"):
        group = group.strip()
        if group in ("", "none"):
            out.append(())
        else:
            out.append(tuple(sorted(g.strip() for g in group.split("+"))))
    return out


COMMON_OPTIONS = {
    "seed": 0,
    "threads": 1,
}

COMMAND_OPTIONS: dict[str, dict[str, object]] = {
    "ingest": {"roster": None, "edges": None, "layer_map": None},
    "metrics": {"panel": None, "layer": "health", "variants": "none"},
    "effects": {
        "panel": None, "layers": "health", "metrics": "degree,in_degree,out_degree",
        "scopes": "all", "kinds": "overall,total,spillover,direct",
        "variants": "none", "permutations": 0, "blocks": "none",
        "scaling": "control_w1", "higher_order_mode": "exclusive",
    },
    "permtest": {
        "panel": None, "layer": "health", "metric": "degree", "kind": "total",
        "scope": "all", "variants": "none", "permutations": 2000,
        "sided": "two", "blocks": "none", "scaling": "control_w1",
        "higher_order_mode": "exclusive",
    },
    "dyadic": {
        "panel": None, "layer": "health", "schemes": "coarse,fine",
        "outcomes": "dissolution,formation", "export_dyads": 0,
        "correspondence": 1,
    },
    "wasserstein": {"panel": None, "layer": "health", "degree_kind": "degree",
                    "normalize": 0},
    "doseresponse": {"panel": None, "layer": "health", "metric": "degree",
                     "group": "overall", "span": 0.75, "degree": 1},
    "simulate": {"scenario": None},
    "replicate": {
        "scenario": None, "replicates": 1, "layers": "health",
        "metrics": "degree", "scopes": "all", "kinds": "total",
        "permutations": 0,
    },
}

RUNTIME_ONLY = ("out", "threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="villagenet",
        description="Causal analysis of village-network change in "
                    "two-stage randomized trials",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for command, options in COMMAND_OPTIONS.items():
        p = sub.add_parser(command)
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--config", default=None,
                       help="manifest.json to take defaults from")
        for name, default in {**COMMON_OPTIONS, **options}.items():
            flag = "--" + name.replace("_", "-")
            if isinstance(default, int) and not isinstance(default, bool):
                p.add_argument(flag, type=int, default=None)
            elif isinstance(default, float):
                p.add_argument(flag, type=float, default=None)
            else:
                p.add_argument(flag, type=str, default=None)
    return parser


def resolve_config(command: str, args: argparse.Namespace) -> dict:
    defaults = {**COMMON_OPTIONS, **COMMAND_OPTIONS[command]}
    manifest_config: dict = {}
    if args.config:
        doc = vio.read_json(args.config)
        if doc.get("kind") != "manifest":
            raise IngestionError(f"{args.config}: not a manifest")
        if doc.get("command") != command:
            raise IngestionError(
                f"{args.config}: manifest is for '{doc.get('command')}', not '{command}'"
            )
        manifest_config = doc.get("config", {})
    config = {}
    for name, default in defaults.items():
        cli_value = getattr(args, name)
        if cli_value is not None:
            config[name] = cli_value
        elif name in manifest_config:
            config[name] = manifest_config[name]
        elif default is not None:
            config[name] = default
        else:
            raise IngestionError(f"missing required option --{name.replace('_', '-')}")
    return config


def _blocks_from(config: dict) -> dict[str, str] | None:
    token = str(config.get("blocks", "none"))
    if token in ("", "none"):
        return None
    return vio.read_blocks(token)


def _manifest_config(config: dict) -> dict:
    return {k: v for k, v in config.items() if k not in RUNTIME_ONLY}


def _finish(command: str, config: dict, outdir: Path) -> None:
    vio.write_manifest(command, _manifest_config(config),
                       outdir / "manifest.json", __version__)


def run_ingest(config: dict, outdir: Path) -> None:
    roster = vio.read_roster(config["roster"])
    responses = vio.read_edges(config["edges"])
    layer_specs = vio.read_layer_map(config["layer_map"])
    kept_roster, kept_responses, report = apply_inclusion_criteria(roster, responses)
    panel = build_panel(kept_roster, kept_responses, layer_specs)
    vio.write_panel(panel, outdir / "panel.json")
    vio.write_exclusion_report(report, outdir / "exclusions.csv")
    n_excluded = sum(report.individuals.values())
    print(f"ingested {len(panel.individuals)} individuals in "
          f"{len(panel.villages)} villages; excluded {n_excluded}; 0 errors")


def run_metrics(config: dict, outdir: Path) -> None:
    panel = vio.read_panel(config["panel"])
    variants = _parse_variants(str(config["variants"]))[0]
    table = metric_table(panel, config["layer"], variants)
    vio.write_metric_table(table, outdir / "metrics.csv")
    print(f"wrote metrics for {len(table.individuals)} individuals on "
          f"layer {config['layer']}")


def run_effects(config: dict, outdir: Path) -> None:
    panel = vio.read_panel(config["panel"])
    layers = _parse_list(str(config["layers"]))
    metrics = _parse_list(str(config["metrics"]))
    scopes = _parse_list(str(config["scopes"]))
    kinds = _parse_list(str(config["kinds"]))
    variants = _parse_variants(str(config["variants"]))
    estimates = effect_suite(
        panel, layers, metrics, scopes, kinds, variants,
        permutations=int(config["permutations"]),
        master_seed=int(config["seed"]),
        higher_order_mode=str(config["higher_order_mode"]),
        scaling=str(config["scaling"]),
        threads=int(config["threads"]),
        blocks=_blocks_from(config),
    )
    vio.write_effects(estimates, outdir / "effects.csv")
    vio.write_plot_data(_plot_rows(panel, estimates), outdir / "plotdata.csv")
    print(f"wrote {len(estimates)} effect estimates")


def _plot_rows(panel, estimates) -> list[dict]:
    rows = []
    tables: dict = {}
    for est in estimates:
        s = est.spec
        key = (s.layer, s.variant_flags)
        if key not in tables:
            tables[key] = metric_table(panel, s.layer, s.variant_flags)
        table = tables[key]
        focal, comparison = classify_groups(panel, s)
        f1, f3, _ = group_change(table, s.metric, focal)
        c1, c3, _ = group_change(table, s.metric, comparison)
        _, expected = counterfactual_trend(table, s.metric, focal, comparison)
        variant = "+".join(s.variant_flags) if s.variant_flags else "none"
        base = {"kind": s.kind, "scope": s.dosage_scope, "layer": s.layer,
                "metric": s.metric, "variant": variant}
        rows += [
            {**base, "series": "focal", "wave": 1, "value": f1},
            {**base, "series": "focal", "wave": 3, "value": f3},
            {**base, "series": "comparison", "wave": 1, "value": c1},
            {**base, "series": "comparison", "wave": 3, "value": c3},
            {**base, "series": "counterfactual", "wave": 1, "value": f1},
            {**base, "series": "counterfactual", "wave": 3, "value": expected},
        ]
    return rows


def run_permtest(config: dict, outdir: Path) -> None:
    panel = vio.read_panel(config["panel"])
    spec = ContrastSpec(
        kind=str(config["kind"]),
        dosage_scope=str(config["scope"]),
        layer=str(config["layer"]),
        metric=str(config["metric"]),
        variant_flags=_parse_variants(str(config["variants"]))[0],
        higher_order_mode=str(config["higher_order_mode"]),
    )
    result = permutation_pvalue(
        panel, spec,
        permutations=int(config["permutations"]),
        master_seed=int(config["seed"]),
        scaling=str(config["scaling"]),
        threads=int(config["threads"]),
        blocks=_blocks_from(config),
        sided=str(config["sided"]),
    )
    vio.write_null_draws(result, outdir / "nulldraws.txt")
    print(f"observed={result.observed:.6g} p={result.p_value:.6g} "
          f"({result.permutations} draws, {result.skipped} skipped)")


def run_dyadic(config: dict, outdir: Path) -> None:
    panel = vio.read_panel(config["panel"])
    layer = str(config["layer"])
    schemes = _parse_list(str(config["schemes"]))
    outcomes = _parse_list(str(config["outcomes"]))
    data_all = dyad_dataset(panel, layer, sample="all")
    for outcome in outcomes:
        for scheme in schemes:
            fit = fit_logistic_irls(data_all, outcome, scheme)
            vio.write_regression(fit, outdir / f"{outcome}_{scheme}.csv")
    if int(config["correspondence"]):
        rows, fit = estimand_correspondence(panel, layer)
        lines = [
            f"{r.term},{vio.fmt_value(r.dyadic_estimate)},"
            f"{vio.fmt_value(r.node_contrast)},{int(r.signs_agree)}"
            for r in rows
        ]
        vio._write_lines(outdir / "correspondence.csv", "correspondence",
                         "term,dyadic_estimate,node_contrast,signs_agree", lines)
    if int(config["export_dyads"]):
        vio.write_dyads(data_all.observations(), outdir / "dyads.csv")
    print(f"wrote dyadic regressions for layer {layer}")


def run_wasserstein(config: dict, outdir: Path) -> None:
    panel = vio.read_panel(config["panel"])
    layer = str(config["layer"])
    kind = str(config["degree_kind"])
    normalize = bool(int(config["normalize"]))
    rows = []
    by_group: dict[str, list[float]] = {"control": [], "low": [], "high": []}
    for village in panel.villages:
        samples = {}
        for wave in (1, 3):
            net = panel.network(village, wave, layer)
            deg = _degree_sample(net, kind)
            if normalize and net.n > 1:
                deg = [d / (net.n - 1) for d in deg]
            samples[wave] = deg
        w = wasserstein1(samples[1], samples[3])
        group = panel.design.dosage_group(village)
        by_group[group].append(w)
        rows.append({"village_id": village, "dosage_group": group, "wasserstein": w})
    vio.write_distances(rows, outdir / "distances.csv")
    welch = {}
    for arm in ("low", "high"):
        if len(by_group["control"]) >= 2 and len(by_group[arm]) >= 2:
            try:
                welch[f"control_vs_{arm}"] = welch_ttest(by_group["control"], by_group[arm])
            except StatsError as exc:
                log.warning("welch control vs %s skipped: %s", arm, exc)
    vio.write_welch(welch, outdir / "welch.csv")
    print(f"wrote {len(rows)} distances and {len(welch)} Welch tests")


def _degree_sample(net, kind: str) -> list[float]:
    from .metrics import degree_metrics

    deg = degree_metrics(net)
    index = {"degree": 0, "in_degree": 1, "out_degree": 2}[kind]
    values = [deg[v][index] for v in net.nodes]
    if any(v is None for v in values):
        raise EffectError(f"{kind} undefined on undirected layer {net.layer}")
    return [float(v) for v in values]


def run_doseresponse(config: dict, outdir: Path) -> None:
    panel = vio.read_panel(config["panel"])
    layer = str(config["layer"])
    metric = str(config["metric"])
    group = str(config["group"])
    table = metric_table(panel, layer)
    asg = observed_assignment(panel)
    points = []
    for village in panel.villages:
        members = panel.members(village)
        if group == "treated":
            members = tuple(i for i in members if i in asg.treated)
        elif group == "untreated":
            members = tuple(i for i in members if i not in asg.treated)
        elif group != "overall":
            raise IngestionError(f"unknown dose-response group {group}")
        if not members:
            continue
        try:
            m1, m3, _ = group_change(table, metric, members)
        except EffectError:
            continue
        points.append((panel.design.village_dosages[village], m3 - m1))
    curve = loess_fit(points, span=float(config["span"]), degree=int(config["degree"]))
    vio.write_curve(curve, outdir / "doseresponse.csv")
    vio.write_points(points, outdir / "points.csv")
    print(f"wrote dose-response curve over {len(points)} villages")


def run_simulate(config: dict, outdir: Path) -> None:
    scenario = SyntheticScenario.from_dict(vio.read_json(str(config["scenario"])))
    panel, oracle = generate_panel(scenario, scopes=("all", "low", "high"))
    vio.write_panel(panel, outdir / "panel.json")
    vio.write_oracle(oracle, outdir / "oracle.json")
    vio.write_roster_csv(panel, outdir / "roster.csv")
    vio.write_edges_csv(panel, DEFAULT_LAYER_SPECS, outdir / "edges.csv")
    vio.write_layer_map_csv(DEFAULT_LAYER_SPECS, outdir / "layer_map.csv")
    print(f"simulated {len(panel.individuals)} individuals in "
          f"{len(panel.villages)} villages")


def run_replicate(config: dict, outdir: Path) -> None:
    scenario = SyntheticScenario.from_dict(vio.read_json(str(config["scenario"])))
    report = replicate_study(
        scenario,
        n_replicates=int(config["replicates"]),
        layers=_parse_list(str(config["layers"])),
        metrics=_parse_list(str(config["metrics"])),
        scopes=_parse_list(str(config["scopes"])),
        kinds=_parse_list(str(config["kinds"])),
        permutations=int(config["permutations"]),
        threads=int(config["threads"]),
    )
    lines = [
        f"{r.replicate},{r.spec_label},{vio.fmt_value(r.estimate_pct)},"
        f"{vio.fmt_value(r.oracle_pct)},{vio.fmt_value(r.p_value)}"
        for r in report.rows
    ]
    vio._write_lines(outdir / "calibration.csv", "calibration",
                     "replicate,spec,estimate_pct,oracle_pct,p_value", lines)
    summary_lines = []
    for label in sorted(report.summary):
        entry = report.summary[label]
        for key in sorted(entry):
            summary_lines.append(f"{label},{key},{vio.fmt_value(entry[key])}")
    vio._write_lines(outdir / "summary.csv", "calibration-summary",
                     "spec,quantity,value", summary_lines)
    print(f"wrote calibration report over {int(config['replicates'])} replicates")


RUNNERS = {
    "ingest": run_ingest,
    "metrics": run_metrics,
    "effects": run_effects,
    "permtest": run_permtest,
    "dyadic": run_dyadic,
    "wasserstein": run_wasserstein,
    "doseresponse": run_doseresponse,
    "simulate": run_simulate,
    "replicate": run_replicate,
}


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = resolve_config(args.command, args)
        config["out"] = str(args.out)
        outdir = Path(args.out)
        outdir.mkdir(parents=True, exist_ok=True)
        RUNNERS[args.command](config, outdir)
        _finish(args.command, config, outdir)
        return 0
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
