"""Batch command-line front end: peerspread netbuild|fit|predict|synth|logit.

All science parameters live in a JSON config document; the few flags that
overlap (paths, seed, output dir) win over the config. Every run drops a
manifest with input hashes, the seed, and the package version so reports
can be reproduced byte-identically. The PEERSPREAD_THREADS environment
variable sets the worker-thread count and never changes results.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from ._common import file_sha256, parse_month, parse_tau_r, tau_r_label, thread_map, write_csv, write_manifest
from .epimodel import EpidemicParams
from .geonet import distance_regression, build_network, load_road_graph
from .glm import fit_logistic
from .inference import FIT_REPORT_HEADER, FitConfig, compare_models, fit_mle, fit_report_rows
from .ingest import analysis_set, discretize_events, load_households, select_neighborhood, write_households
from .simulate import LagRule, SimConfig, cross_validate, generate_synthetic, grid_households, synthetic_grid_study


class UsageError(Exception):
    pass


PREDICT_HEADER = ["neighborhood", "model", "metric", "tau_d", "tau_R", "rmse",
                  "I_sim_T", "I_sim_sd_T", "I_obs_T", "within_one_sd"]


def _load_config(path) -> dict:
    if path is None:
        raise UsageError("--config is required")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise UsageError(f"missing config file: {path}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"config is not valid JSON: {exc}") from None


def _month_index(value, start_abs: int) -> int:
    if isinstance(value, str):
        return parse_month(value) - start_abs + 1
    return int(value)


def _require(cfg: dict, key: str):
    if key not in cfg:
        raise UsageError(f"config is missing required key {key!r}")
    return cfg[key]


def _seed(args, cfg) -> int:
    return int(args.seed) if args.seed is not None else int(cfg.get("seed", 0))


def _out_dir(args) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _households_path(args, cfg) -> str:
    path = args.households or cfg.get("households")
    if not path:
        raise UsageError("households file required (--households or config)")
    return path


def _load_pipeline(args, cfg):
    path = _households_path(args, cfg)
    homes_all, exclusions, report = load_households(path)
    homes = analysis_set(homes_all, exclusions)
    if not homes:
        raise UsageError("no analysis households left after exclusions")
    start = _require(cfg, "study_start")
    end = _require(cfg, "study_end")
    timeline = discretize_events(homes, start, end)
    return path, homes, timeline, report


def _road_graph(args, cfg, needed: bool):
    nodes_path = args.roads or cfg.get("roads")
    edges_path = args.road_edges or cfg.get("road_edges")
    if not needed:
        return None, None, None
    if not nodes_path or not edges_path:
        raise UsageError("on_road metric requires --roads (nodes csv) and --road-edges")
    if not Path(nodes_path).exists() or not Path(edges_path).exists():
        raise UsageError(f"missing roads file: {nodes_path} / {edges_path}")
    return load_road_graph(nodes_path, edges_path), nodes_path, edges_path


def _neighborhoods(cfg, homes):
    spec = cfg.get("neighborhoods", "all")
    if spec == "all":
        ids = [h.id for h in homes]
        return [("all", ids, [])]
    out = []
    for entry in spec:
        sample = select_neighborhood(homes, entry["seed_id"],
                                     float(entry.get("core_radius_m", 1500.0)),
                                     float(entry.get("buffer_radius_m", 500.0)))
        core = sorted(sample.core_ids)
        buffer = sorted(sample.buffer_ids)
        out.append((entry["seed_id"], core, buffer))
    return out


def _fit_config(cfg, breakpoints_idx, tau_r, seed, covariates) -> FitConfig:
    fit_cfg = cfg.get("fit", {})
    return FitConfig(
        covariates=covariates,
        breakpoints=breakpoints_idx,
        tau_r=tau_r,
        alpha0=float(fit_cfg.get("alpha0", 1e-4)),
        gtol=float(fit_cfg.get("gtol", 1e-6)),
        ftol=float(fit_cfg.get("ftol", 1e-11)),
        max_iter=int(fit_cfg.get("max_iter", 500)),
        fd_step=float(fit_cfg.get("fd_step", 1e-5)),
        hess_step=float(fit_cfg.get("hess_step", 5e-3)),
        restarts=int(fit_cfg.get("restarts", 3)),
        restart_seed=seed,
        standardize=bool(fit_cfg.get("standardize", True)),
    )


def _breakpoint_indices(cfg, timeline) -> list[int]:
    raw = cfg.get("breakpoints", [1])
    idx = [_month_index(b, timeline.study_start) for b in raw]
    if idx[0] != 1:
        raise UsageError("first breakpoint must equal study_start")
    return idx


def _lag_rule(cfg) -> LagRule:
    raw = cfg.get("lag_rule", {"kind": "empirical"})
    return LagRule(kind=raw.get("kind", "empirical"), months=int(raw.get("months", 2)))


def _manifest(out_dir: Path, command: str, seed: int, cfg: dict,
              inputs: dict, outputs: list[str]) -> None:
    payload = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": cfg,
        "inputs": {name: {"file": Path(p).name, "sha256": file_sha256(p)}
                   for name, p in inputs.items() if p},
        "outputs": sorted(outputs),
    }
    write_manifest(out_dir / "manifest.json", payload)


# ---------------------------------------------------------------------------
# subcommands

def cmd_netbuild(args) -> int:
    cfg = _load_config(args.config)
    out_dir = _out_dir(args)
    seed = _seed(args, cfg)
    path, homes, _timeline, _report = _load_pipeline(args, cfg)
    metrics = cfg.get("metrics", ["euclidean"])
    taus = cfg.get("tau_d_km", [0.1])
    graph, nodes_path, edges_path = _road_graph(args, cfg, needed="on_road" in metrics)

    ids = [h.id for h in homes]
    outputs = []
    summary_lines = [f"households: {len(ids)}"]
    for metric in metrics:
        for tau_km in taus:
            net = build_network(homes, ids, metric, float(tau_km) * 1000.0, road_graph=graph)
            name = f"edges_{metric}_{tau_km}.csv"
            net.write_edges_csv(out_dir / name)
            outputs.append(name)
            deg = net.degree()
            summary_lines.append(
                f"{metric} tau_d={tau_km}km: edges={len(net.edge_set())} "
                f"degree mean={deg.mean():.3f} max={int(deg.max()) if len(deg) else 0}")
    if graph is not None:
        pts = [(h.x, h.y) for h in homes]
        reg = distance_regression(pts, graph, seed=seed)
        s1, i1 = reg["road_on_euclid"]
        s2, i2 = reg["euclid_on_road"]
        summary_lines.append(f"distance regression road~euclid: slope={s1:.4f} intercept={i1:.2f}")
        summary_lines.append(f"distance regression euclid~road: slope={s2:.4f} intercept={i2:.2f}")
    (out_dir / "network_summary.txt").write_text("\n".join(summary_lines) + "\n", encoding="utf-8")
    outputs.append("network_summary.txt")
    _manifest(out_dir, "netbuild", seed, cfg,
              {"households": path, "roads": nodes_path, "road_edges": edges_path}, outputs)
    return 0


def cmd_fit(args) -> int:
    cfg = _load_config(args.config)
    out_dir = _out_dir(args)
    seed = _seed(args, cfg)
    path, homes, timeline, _report = _load_pipeline(args, cfg)
    covariates = list(cfg.get("covariates", []))
    breakpoints = _breakpoint_indices(cfg, timeline)
    metrics = cfg.get("metrics", ["euclidean"])
    taus = cfg.get("tau_d_km", [0.1])
    tau_rs = [parse_tau_r(v) for v in cfg.get("tau_r_months", [12])]
    graph, nodes_path, edges_path = _road_graph(args, cfg, needed="on_road" in metrics)

    all_rows = []
    failures = []
    for name, core, buffer in _neighborhoods(cfg, homes):
        node_ids = sorted(set(core) | set(buffer))
        networks = {}
        for metric in metrics:
            for tau_km in taus:
                networks[(metric, tau_km)] = build_network(
                    homes, node_ids, metric, float(tau_km) * 1000.0, road_graph=graph)

        cells = [(metric, tau_km, tau_r)
                 for metric in metrics for tau_km in taus for tau_r in tau_rs]

        def run_cell(cell):
            metric, tau_km, tau_r = cell
            fc = _fit_config(cfg, breakpoints, tau_r, seed, covariates)
            try:
                return fit_mle(timeline, networks[(metric, tau_km)], homes, core, fc,
                               fingerprint_extra={"neighborhood": name})
            except Exception as exc:  # recorded in-row, run continues
                return (cell, str(exc))

        results = thread_map(run_cell, cells)
        fits = [r for r in results if not isinstance(r, tuple)]
        for cell, err in (r for r in results if isinstance(r, tuple)):
            failures.append([name, cell[0], cell[1], tau_r_label(cell[2]),
                             "", "", "", "", "", False, f"fit failed: {err}"])
        endemic_cfg = _fit_config(cfg, breakpoints, tau_rs[0], seed, covariates)
        endemic_cfg = replace(endemic_cfg, fix_alpha=True)
        first_net = networks[(metrics[0], taus[0])]
        fits.append(fit_mle(timeline, first_net, homes, core, endemic_cfg,
                            fingerprint_extra={"neighborhood": name}))
        report = compare_models(fits)
        all_rows.extend(fit_report_rows(report, neighborhood=name))
    all_rows.extend(failures)

    write_csv(out_dir / "fit_report.csv", FIT_REPORT_HEADER, all_rows)
    _manifest(out_dir, "fit", seed, cfg,
              {"households": path, "roads": nodes_path, "road_edges": edges_path},
              ["fit_report.csv"])
    return 0


def cmd_predict(args) -> int:
    cfg = _load_config(args.config)
    out_dir = _out_dir(args)
    seed = _seed(args, cfg)
    path, homes, timeline, _report = _load_pipeline(args, cfg)
    covariates = list(cfg.get("covariates", []))
    breakpoints = _breakpoint_indices(cfg, timeline)
    metrics = cfg.get("metrics", ["euclidean"])
    taus = cfg.get("tau_d_km", [0.1])
    tau_rs = [parse_tau_r(v) for v in cfg.get("tau_r_months", [12])]
    split = _month_index(_require(cfg, "split_month"), timeline.study_start)
    sim = SimConfig(n_realizations=int(cfg.get("realizations", 100)), seed=seed,
                    lag_rule=_lag_rule(cfg))
    graph, nodes_path, edges_path = _road_graph(args, cfg, needed="on_road" in metrics)

    rows = []
    outputs = ["prediction_report.csv"]
    for name, core, buffer in _neighborhoods(cfg, homes):
        node_ids = sorted(set(core) | set(buffer))
        cells = [(metric, tau_km, tau_r)
                 for metric in metrics for tau_km in taus for tau_r in tau_rs]

        def run_cell(cell):
            metric, tau_km, tau_r = cell
            net = build_network(homes, node_ids, metric, float(tau_km) * 1000.0,
                                road_graph=graph)
            fc = _fit_config(cfg, breakpoints, tau_r, seed, covariates)
            return cross_validate(timeline, net, homes, core, split, fc, sim)

        results = thread_map(run_cell, cells)
        nbhd_rows = []
        for cell, cv in zip(cells, results):
            metric, tau_km, tau_r = cell
            tag = f"{name}_{metric}_{tau_km}_{tau_r_label(tau_r)}"
            curve_name = f"curves_{tag}_epidemic.csv"
            cv.epidemic.write_csv(out_dir / curve_name)
            outputs.append(curve_name)
            nbhd_rows.append([name, "epidemic", metric, tau_km, tau_r_label(tau_r),
                              cv.epidemic.rmse, cv.epidemic.final_mean,
                              cv.epidemic.final_sd, cv.epidemic.final_obs,
                              cv.indistinguishable])
        first = results[0]
        curve_name = f"curves_{name}_endemic.csv"
        first.endemic.write_csv(out_dir / curve_name)
        outputs.append(curve_name)
        nbhd_rows.append([name, "endemic", "no_peer", "", "",
                          first.endemic.rmse, first.endemic.final_mean,
                          first.endemic.final_sd, first.endemic.final_obs,
                          first.indistinguishable])
        nbhd_rows.sort(key=lambda r: (r[5], str(r[1]), str(r[2]), str(r[3]), str(r[4])))
        rows.extend(nbhd_rows)

    write_csv(out_dir / "prediction_report.csv", PREDICT_HEADER, rows)
    _manifest(out_dir, "predict", seed, cfg,
              {"households": path, "roads": nodes_path, "road_edges": edges_path}, outputs)
    return 0


def cmd_synth(args) -> int:
    cfg = _load_config(args.config)
    out_dir = _out_dir(args)
    seed = _seed(args, cfg)
    syn = _require(cfg, "synth")
    grid = _require(syn, "grid")
    params = EpidemicParams(
        alpha=float(syn.get("alpha", 0.0)),
        beta=np.asarray(syn.get("beta", []), dtype=np.float64),
        lambda0=np.asarray(_require(syn, "lambda0"), dtype=np.float64),
        breakpoints=np.asarray(syn.get("breakpoints", [1]), dtype=np.int64),
        tau_r=parse_tau_r(syn.get("tau_r", 12)),
    )
    lag = LagRule(kind=syn.get("lag_rule", {}).get("kind", "fixed"),
                  months=int(syn.get("lag_rule", {}).get("months", 2)))
    net_cfg = syn.get("network", {"metric": "euclidean", "tau_d_km": 0.15})
    homes_ev, _net, _tl, manifest = synthetic_grid_study(
        nx=int(grid["nx"]), ny=int(grid["ny"]), spacing=float(grid["spacing_m"]),
        tau_d=float(net_cfg.get("tau_d_km", 0.15)) * 1000.0,
        params=params, covariates=list(syn.get("covariates", [])),
        horizon=int(_require(syn, "horizon_months")), lag_rule=lag, seed=seed,
        study_start=syn.get("study_start", "2004-01"))
    write_households(out_dir / "households.csv", homes_ev)
    write_manifest(out_dir / "synth_manifest.json",
                   {"command": "synth", "version": __version__, "seed": seed,
                    **manifest})
    _manifest(out_dir, "synth", seed, cfg, {}, ["households.csv", "synth_manifest.json"])
    return 0


def cmd_logit(args) -> int:
    cfg = _load_config(args.config)
    out_dir = _out_dir(args)
    seed = _seed(args, cfg)
    path = _households_path(args, cfg)
    homes_all, exclusions, _report = load_households(path)
    homes = analysis_set(homes_all, exclusions)
    if not homes:
        raise UsageError("no analysis households left after exclusions")
    logit_cfg = cfg.get("logit", {})
    feats = logit_cfg.get("features", [{"field": "has_pool"}])

    cols, terms = [], []
    for f in feats:
        field_name = f["field"]
        divisor = float(f.get("divisor", 1.0))
        raw = np.array([float(getattr(h, field_name)) for h in homes]) / divisor
        center = raw.mean() if f.get("center", False) else 0.0
        cols.append(raw - center)
        terms.append(field_name if divisor == 1.0 else f"{field_name}_per_{divisor:g}")
    X = np.column_stack(cols)
    y = np.array([1.0 if h.application_month is not None else 0.0 for h in homes])
    fit = fit_logistic(X, y, terms=terms)
    fit.write_csv(out_dir / "logit_report.csv")
    _manifest(out_dir, "logit", seed, cfg, {"households": path}, ["logit_report.csv"])
    return 0


# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="peerspread",
        description="peer-effect inference on spatial household networks")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in (("netbuild", cmd_netbuild), ("fit", cmd_fit),
                     ("predict", cmd_predict), ("synth", cmd_synth),
                     ("logit", cmd_logit)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=False)
        p.add_argument("--households")
        p.add_argument("--roads")
        p.add_argument("--road-edges", dest="road_edges")
        p.add_argument("--out", default=".")
        p.add_argument("--seed", type=int, default=None)
        p.set_defaults(fn=fn)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"peerspread {args.command}: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:
        print(f"peerspread {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
