"""Command-line front end.

Subcommands: synth-data, eval-signal, run-inner, run-outer, regret-sim,
report. Every run directory receives a manifest.json with the fully resolved
configuration before any other output is written. Exit codes: 0 success,
1 IO failure, 2 user/config error, 3 backend failure.

A JSON config file may supply any long-flag value (keys use underscores);
explicit flags override file values.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from typing import List, Optional

import numpy as np

from . import __version__
from .agents import RuleJudge, RuleJudgeCfg, ScriptedWriter, ScriptedWriterCfg
from .dsl import parse
from .errors import (
    BackendError, BadParamsError, DslError, DslSyntaxError, EmptyPanelError,
    SignalForgeError,
)
from .kb import KnowledgeBase, load as kb_load, persist as kb_persist
from .loops import (
    CostLedger, InnerLoopConfig, OuterLoopConfig, cost_report, inner_loop,
    outer_loop, read_records_jsonl, write_records_jsonl,
)
from .metrics import PortfolioCfg, evaluate_signal
from .panel import PlantedPattern, SynthParams, load_panel, save_panel, synth_panel
from .regret import (
    Posterior, RegretConfig, curve_csv, regret_report, simulate_two_loop,
)
from .remote import RemoteCfg, remote_backend
from .winrate import (
    CandidateRef, leaderboard, leaderboard_csv, metric_comparator, win_rate_matrix,
)

log = logging.getLogger("signalforge.cli")

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_BACKEND = 0, 1, 2, 3


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.WARNING))
    try:
        _apply_config_file(args)
        return args.func(args)
    except DslSyntaxError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BadParamsError, DslError, EmptyPanelError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except SignalForgeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def _apply_config_file(args) -> None:
    """Fill unset flags from --config JSON; explicit flags win."""
    if not getattr(args, "config", None):
        return
    with open(args.config, encoding="utf-8") as fh:
        cfg = json.load(fh)
    for key, val in cfg.items():
        if hasattr(args, key) and getattr(args, key) is None:
            setattr(args, key, val)
    _fill_defaults(args)


def _fill_defaults(args) -> None:
    for key, default in getattr(args, "_defaults", {}).items():
        if getattr(args, key, None) is None:
            setattr(args, key, default)


def _add_common(p, defaults: dict) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--log-level", default="warning", dest="log_level")
    p.set_defaults(_defaults=defaults)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="signalforge",
        description="Signal mining loops, DSL evaluation and the regret lab.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="write a synthetic OHLCV panel as CSV-per-field")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--dates", type=int, default=None)
    p.add_argument("--symbols", type=int, default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--planted-ic", type=float, default=None, dest="planted_ic",
                   help="plant a latent factor with this IC against next-day returns")
    p.add_argument("--vol", type=float, default=None)
    _add_common(p, {"seed": 7, "dates": 250, "symbols": 20, "vol": 0.02})
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("eval-signal", help="evaluate a .sig file against a panel directory")
    p.add_argument("--signal", required=True)
    p.add_argument("--panel", required=True)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--quantile", type=float, default=None)
    p.add_argument("--out", required=True)
    _add_common(p, {"horizon": 1, "quantile": 0.2})
    p.set_defaults(func=cmd_eval_signal)

    p = sub.add_parser("run-inner", help="run one inner refinement loop")
    _loop_args(p)
    p.add_argument("--problem", default=None, help="the trading idea to refine")
    p.add_argument("--kb", default=None, help="existing knowledge-base file to retrieve from")
    _add_common(p, _LOOP_DEFAULTS | {"problem": "rank stocks by abnormal trading volume"})
    p.set_defaults(func=cmd_run_inner)

    p = sub.add_parser("run-outer", help="run the outer feedback loop")
    _loop_args(p)
    p.add_argument("--k", type=int, default=None, help="outer iterations")
    _add_common(p, _LOOP_DEFAULTS | {"k": 10})
    p.set_defaults(func=cmd_run_outer)

    p = sub.add_parser("regret-sim", help="two-loop regret simulation sweep")
    p.add_argument("--seeds", type=int, default=None, help="number of seeds (0..n-1)")
    p.add_argument("--states", "--S", type=int, default=None, dest="states")
    p.add_argument("--actions", "--A", type=int, default=None, dest="actions")
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--K", type=int, default=None, dest="episodes")
    p.add_argument("--T", type=int, default=None, dest="horizon")
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--posterior-sampling", action="store_true", dest="posterior_sampling")
    p.add_argument("--out", required=True)
    _add_common(p, {"seeds": 5, "states": 5, "actions": 3, "gamma": 0.9,
                    "episodes": 40, "horizon": 30, "epsilon": 1e-3})
    p.set_defaults(func=cmd_regret_sim)

    p = sub.add_parser("report", help="group, win-rate and leaderboard reports from outer records")
    p.add_argument("--records", required=True)
    p.add_argument("--groups", type=int, default=None)
    p.add_argument("--comparator", choices=("ic_mean", "score", "sharpe"), default=None)
    p.add_argument("--out", required=True)
    _add_common(p, {"groups": 3, "comparator": "ic_mean"})
    p.set_defaults(func=cmd_report)

    return parser


_LOOP_DEFAULTS = {
    "seed": 11, "beta": 0.9, "max_iters": 4, "k_writer": 3, "k_judge": 3,
    "horizon": 1, "quantile": 0.2, "validation_fraction": 0.3,
    "backend": "scripted", "endpoint": "", "model": "gpt-4-0125-preview",
    "temperature": 0.0, "timeout_ms": 30000, "max_retries": 3,
    "api_key_env": "SIGNALFORGE_API_KEY",
}


def _loop_args(p) -> None:
    p.add_argument("--panel", required=True, help="panel directory (CSV per field)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--max-iters", type=int, default=None, dest="max_iters")
    p.add_argument("--k-writer", type=int, default=None, dest="k_writer")
    p.add_argument("--k-judge", type=int, default=None, dest="k_judge")
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--quantile", type=float, default=None)
    p.add_argument("--validation-fraction", type=float, default=None,
                   dest="validation_fraction")
    p.add_argument("--backend", choices=("scripted", "remote"), default=None)
    p.add_argument("--endpoint", default=None, help="remote chat-completion URL")
    p.add_argument("--model", default=None)
    p.add_argument("--temperature", type=float, default=None)
    p.add_argument("--timeout-ms", type=int, default=None, dest="timeout_ms")
    p.add_argument("--max-retries", type=int, default=None, dest="max_retries")
    p.add_argument("--api-key-env", default=None, dest="api_key_env")


def _write_manifest(out_dir: str, args, command: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    resolved = {k: v for k, v in vars(args).items()
                if k not in ("func", "_defaults") and not callable(v)}
    resolved["command"] = command
    resolved["version"] = __version__
    with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
        json.dump(resolved, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


# -- commands ------------------------------------------------------------------

def cmd_synth_data(args) -> int:
    _fill_defaults(args)
    if args.dates is not None and args.dates < 2:
        print("error: --dates must be >= 2", file=sys.stderr)
        return EXIT_USAGE
    planted = PlantedPattern(target_ic=args.planted_ic) if args.planted_ic else None
    params = SynthParams(vol=args.vol, planted=planted)
    panel = synth_panel(args.seed, args.dates, args.symbols, params)
    _write_manifest(args.out, args, "synth-data")
    save_panel(panel, args.out)
    print(f"panel {panel.n_dates}x{panel.n_symbols}, {len(panel.fields)} fields -> {args.out}")
    if planted:
        print(f"planted latent factor, target IC {planted.target_ic}")
    return EXIT_OK


def cmd_eval_signal(args) -> int:
    _fill_defaults(args)
    with open(args.signal, encoding="utf-8") as fh:
        text = fh.read()
    spec = parse(text)  # DslSyntaxError -> exit 2 with position
    panel = load_panel(args.panel)
    report = evaluate_signal(spec, panel, args.horizon, PortfolioCfg(quantile=args.quantile))
    _write_manifest(args.out, args, "eval-signal")
    with open(os.path.join(args.out, "report.json"), "w", encoding="utf-8") as fh:
        fh.write(report.to_json() + "\n")
    _eval_figure(args.out, report)
    print(f"{spec.name}: ic_mean={report.ic_mean:.6f} sharpe={report.sharpe:.4f} "
          f"valid_ratio={report.valid_ratio:.4f} unique_ratio={report.unique_ratio:.4f}")
    return EXIT_OK


def _eval_figure(out_dir: str, report) -> None:
    from .plotting import save_line
    xs = list(range(1, len(report.ic_series) + 1))
    save_line(os.path.join(out_dir, "ic_series.png"), xs,
              {"daily IC": report.ic_series}, "date index", "IC",
              f"{report.name}: cross-sectional IC")


def _build_backends(args, panel):
    n_val = max(2, int(round(args.validation_fraction * panel.n_dates)))
    n_val = min(n_val, panel.n_dates)
    val_panel = panel.slice_dates(0, n_val)
    if args.backend == "scripted":
        writer = ScriptedWriter(ScriptedWriterCfg(seed=args.seed))
        judge = RuleJudge(RuleJudgeCfg(validation_panel=val_panel, horizon=args.horizon))
        return writer, judge
    if not args.endpoint:
        raise BadParamsError("remote backend needs --endpoint")
    cfg = RemoteCfg(
        endpoint_url=args.endpoint, model_name=args.model,
        temperature=args.temperature, timeout_ms=args.timeout_ms,
        max_retries=args.max_retries, api_key_env=args.api_key_env,
        transcript_path=os.path.join(args.out, "transcript.jsonl"),
    )
    return remote_backend(cfg)


def cmd_run_inner(args) -> int:
    _fill_defaults(args)
    panel = load_panel(args.panel)
    kb = kb_load(args.kb) if args.kb else KnowledgeBase()
    _write_manifest(args.out, args, "run-inner")
    writer, judge = _build_backends(args, panel)
    cfg = InnerLoopConfig(beta=args.beta, max_iters=args.max_iters,
                          k_writer=args.k_writer, k_judge=args.k_judge)
    trace = inner_loop(args.problem, kb, writer, judge, cfg)
    with open(os.path.join(args.out, "trace.jsonl"), "w", encoding="utf-8") as fh:
        fh.write(trace.to_jsonl())
    result = {
        "problem": trace.problem,
        "returned_candidate": trace.returned_candidate,
        "best_candidate": trace.best_candidate,
        "stop_reason": trace.stop_reason,
        "final_score": None if math.isnan(trace.final_score) else trace.final_score,
        "n_iters": len(trace.records),
        "error": trace.error,
    }
    with open(os.path.join(args.out, "result.json"), "w", encoding="utf-8") as fh:
        json.dump(result, fh, indent=2)
        fh.write("\n")
    if trace.stop_reason == "backend_failure":
        print(f"backend failure: {trace.error}", file=sys.stderr)
        return EXIT_BACKEND
    print(f"stop={trace.stop_reason} score={trace.final_score:.3f} "
          f"iters={len(trace.records)}")
    return EXIT_OK


def cmd_run_outer(args) -> int:
    _fill_defaults(args)
    panel = load_panel(args.panel)
    _write_manifest(args.out, args, "run-outer")
    writer, judge = _build_backends(args, panel)
    inner_cfg = InnerLoopConfig(beta=args.beta, max_iters=args.max_iters,
                                k_writer=args.k_writer, k_judge=args.k_judge)
    outer_cfg = OuterLoopConfig(n_iterations=args.k, idea_seed=args.seed,
                                horizon=args.horizon,
                                portfolio=PortfolioCfg(quantile=args.quantile))
    ledger = CostLedger()
    kb, records = outer_loop(outer_cfg, inner_cfg, panel, writer, judge, ledger)
    kb_persist(kb, os.path.join(args.out, "knowledge.kb.jsonl"))
    write_records_jsonl(records, os.path.join(args.out, "records.jsonl"))
    _write_cost_summary(ledger, os.path.join(args.out, "cost_summary.json"))
    failures = [r for r in records if r.stop_reason == "backend_failure"]
    print(f"K={len(records)} inserted={kb.stats['inserted']} "
          f"duplicates={kb.stats['duplicates']} rejected={kb.stats['rejected']}")
    if failures:
        print(f"{len(failures)} iterations hit backend failures", file=sys.stderr)
        return EXIT_BACKEND
    return EXIT_OK


def _write_cost_summary(ledger: CostLedger, path: str) -> None:
    from .errors import InsufficientDataError
    try:
        summary = cost_report(ledger).to_json()
    except InsufficientDataError as exc:
        summary = json.dumps({"fit_exponent": None, "diagnostics": [str(exc)],
                              "total_tokens": ledger.total_tokens()}, indent=2)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(summary + "\n")


def cmd_regret_sim(args) -> int:
    _fill_defaults(args)
    if args.episodes < 1 or args.horizon < 1 or args.seeds < 1:
        raise BadParamsError("need --seeds, --K and --T all >= 1")
    _write_manifest(args.out, args, "regret-sim")
    summaries = []
    curves = {}
    entropies = {}
    for i in range(args.seeds):
        cfg = RegretConfig(gamma=args.gamma, epsilon=args.epsilon, seed=i,
                           n_episodes=args.episodes, episode_len=args.horizon,
                           posterior_sampling=args.posterior_sampling)
        prior = Posterior.uniform_prior(args.states, args.actions)
        trace = simulate_two_loop(prior, cfg)
        with open(os.path.join(args.out, f"trace_seed{i}.jsonl"), "w", encoding="utf-8") as fh:
            fh.write(trace.to_jsonl())
        with open(os.path.join(args.out, f"curve_seed{i}.csv"), "w", encoding="utf-8") as fh:
            fh.write(curve_csv(trace))
        summary = regret_report(trace)
        summaries.append(json.loads(summary.to_json()))
        curves[f"seed {i}"] = trace.cumulative().tolist()
        entropies[f"seed {i}"] = [e.entropy_end for e in trace.episodes]
    slopes = [s["slope"] for s in summaries if s["slope"] is not None]
    median_slope = float(np.median(slopes)) if slopes else None
    out = {"median_slope": median_slope, "per_seed": summaries}
    with open(os.path.join(args.out, "summary.json"), "w", encoding="utf-8") as fh:
        json.dump(out, fh, indent=2)
        fh.write("\n")
    _regret_figures(args.out, curves, entropies)
    shown = "nan" if median_slope is None else f"{median_slope:.3f}"
    print(f"{args.seeds} seeds, median log-log regret slope = {shown}")
    return EXIT_OK


def _regret_figures(out_dir: str, curves: dict, entropies: dict) -> None:
    from .plotting import save_line
    n = max(len(c) for c in curves.values())
    xs = list(range(1, n + 1))
    save_line(os.path.join(out_dir, "regret_curves.png"), xs, curves,
              "episode", "cumulative regret", "Cumulative regret by seed",
              logx=True, logy=True)
    save_line(os.path.join(out_dir, "entropy_curves.png"), xs, entropies,
              "episode", "posterior entropy", "Posterior entropy by seed")


def cmd_report(args) -> int:
    _fill_defaults(args)
    records = read_records_jsonl(args.records)
    if not records:
        print("error: record file is empty", file=sys.stderr)
        return EXIT_USAGE
    if args.groups < 1:
        raise BadParamsError("--groups must be >= 1")
    _write_manifest(args.out, args, "report")

    records = sorted(records, key=lambda r: r["k"])
    chunks = [list(c) for c in np.array_split(records, args.groups) if len(c)]
    labels = [f"g{i + 1}" for i in range(len(chunks))]
    groups = [[_candidate(r) for r in chunk] for chunk in chunks]

    group_rows = []
    for label, chunk in zip(labels, chunks):
        ics = [_report_metric(r, "ic_mean") for r in chunk]
        sharpes = [_report_metric(r, "sharpe") for r in chunk]
        scores = [r["score"] for r in chunk if r["score"] is not None]
        group_rows.append({
            "group": label, "n": len(chunk),
            "mean_ic": _nanmean(ics), "mean_sharpe": _nanmean(sharpes),
            "mean_score": _nanmean(scores),
        })
    with open(os.path.join(args.out, "groups.csv"), "w", encoding="utf-8") as fh:
        fh.write("group,n,mean_ic,mean_sharpe,mean_score\n")
        for row in group_rows:
            fh.write(f"{row['group']},{row['n']},{_csv_num(row['mean_ic'])},"
                     f"{_csv_num(row['mean_sharpe'])},{_csv_num(row['mean_score'])}\n")

    matrix = win_rate_matrix(groups, metric_comparator(args.comparator), labels)
    with open(os.path.join(args.out, "winrate.csv"), "w", encoding="utf-8") as fh:
        fh.write(matrix.to_csv())
    with open(os.path.join(args.out, "winrate.json"), "w", encoding="utf-8") as fh:
        fh.write(matrix.to_json() + "\n")
    board = leaderboard(matrix)
    with open(os.path.join(args.out, "leaderboard.csv"), "w", encoding="utf-8") as fh:
        fh.write(leaderboard_csv(board))

    _report_figures(args.out, matrix, labels, group_rows)
    top = board[0]
    top_rate = "nan" if math.isnan(top[1]) else f"{top[1]:.3f}"
    print(f"groups={len(labels)} leaderboard winner={top[0]} (mean win rate {top_rate})")
    return EXIT_OK


def _report_figures(out_dir: str, matrix, labels, group_rows) -> None:
    from .plotting import save_bars, save_heatmap
    save_heatmap(os.path.join(out_dir, "winrate_heatmap.png"), matrix.w, labels,
                 "Pairwise win rates (row beats column)")
    save_bars(os.path.join(out_dir, "group_mean_ic.png"), labels,
              [0.0 if math.isnan(r["mean_ic"]) else r["mean_ic"] for r in group_rows],
              "mean IC", "Mean IC by chronological group")


def _candidate(rec: dict) -> CandidateRef:
    return CandidateRef(
        idea=rec["idea"], signal_text=rec["signal_text"],
        score=rec["score"] if rec["score"] is not None else math.nan,
        ic_mean=_report_metric(rec, "ic_mean"),
        sharpe=_report_metric(rec, "sharpe"),
    )


def _report_metric(rec: dict, key: str) -> float:
    rep = rec.get("report")
    if not rep or rep.get(key) is None:
        return math.nan
    return float(rep[key])


def _nanmean(vals) -> float:
    good = [v for v in vals if v is not None and not math.isnan(v)]
    return float(np.mean(good)) if good else math.nan


def _csv_num(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


if __name__ == "__main__":
    sys.exit(main())
