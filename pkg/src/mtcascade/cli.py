"""Command-line entry point.

Verbs: train-lm, calibrate, select-jdm-samples, train-jdm, replay, sweep,
serve, report. Every output file is written atomically; given identical
inputs and seeds a rerun produces byte-identical files. Exit codes: 0 on
success, 1 on validation errors (including bad flags), 2 on runtime errors.
"""

from __future__ import annotations

import argparse
import dataclasses
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import List, Optional

from .calibration import (
    PolicyThresholds,
    calibrate_pplt,
    calibrate_qet,
    dataset_fingerprint,
    load_jdm_samples,
    load_thresholds,
    save_jdm_samples,
    save_thresholds,
    select_jdm_samples,
)
from .core import (
    CascadeError,
    ConfigError,
    DataError,
    LanguagePair,
    ScoreKind,
    load_dataset,
    write_atomic,
)
from .decider import DeciderSpec, save_classifier, train_linear_decider
from .defaults import DEFAULT_NEG_RATIO, DEFAULT_T1_FRACTION, DEFAULT_TARGET_LLM_FRACTION
from .evalharness import (
    attach_quality_diffs,
    compare_report,
    pareto_sweep,
    replay,
    report_csv,
    sweep_csv,
)
from .ngram_lm import load_lm, save_lm, train_lm
from .router import load_router_config, serve
from .scoring import ScorerSpec


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise _UsageError(message)


def _read_corpus(path) -> List[str]:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read corpus {path}: {exc}") from exc
    return [line for line in lines if line.strip()]


def _timestamp_for(path) -> str:
    """Deterministic provenance timestamp: env override or input mtime (UTC)."""
    override = os.environ.get("MTCASCADE_TIMESTAMP")
    if override:
        return override
    return datetime.fromtimestamp(os.path.getmtime(path), tz=timezone.utc).isoformat()


def _scorer_spec(value: Optional[str], mode: ScoreKind, env_var: str) -> Optional[ScorerSpec]:
    value = os.environ.get(env_var) or value
    if value is None:
        return None
    if value in ("builtin", "builtin_chrf"):
        return ScorerSpec(mode=mode)
    if value.startswith("http://") or value.startswith("https://"):
        return ScorerSpec(mode=mode, backend="remote", endpoint=value.rstrip("/"))
    raise ConfigError(f"scorer must be 'builtin' or an http(s) endpoint, got {value!r}")


def _decider_spec(args) -> DeciderSpec:
    thresholds = load_thresholds(args.thresholds) if getattr(args, "thresholds", None) else None
    return DeciderSpec(
        policy=args.policy,
        thresholds=thresholds,
        lm_path=getattr(args, "lm", None),
        classifier_path=getattr(args, "classifier", None),
        decision_boundary=getattr(args, "decision_boundary", 0.5),
    )


def _add_decider_flags(parser) -> None:
    parser.add_argument("--thresholds", help="thresholds JSON produced by calibrate")
    parser.add_argument("--lm", help="language model file (pplt, jdm)")
    parser.add_argument("--classifier", help="classifier JSON (jdm)")
    parser.add_argument("--decision-boundary", type=float, default=0.5, dest="decision_boundary")


def _add_scorer_flags(parser) -> None:
    parser.add_argument(
        "--scorer",
        default="builtin",
        help="'builtin' or scoring service endpoint for reference-based quality",
    )
    parser.add_argument(
        "--qe-scorer",
        default=None,
        dest="qe_scorer",
        help="'builtin' or endpoint for reference-free scoring of NMT outputs (qet)",
    )


def _figure_path(out: str) -> Path:
    return Path(out).with_suffix(".png")


def _save_figure(render, path) -> None:
    tmp = Path(str(path) + ".tmp.png")
    render(tmp)
    os.replace(tmp, path)


# --- subcommands ---------------------------------------------------------------

def cmd_train_lm(args) -> int:
    corpus = _read_corpus(args.corpus)
    model = train_lm(
        corpus,
        order=args.order,
        tokenizer_spec=args.tokenizer,
        smoothing=args.smoothing,
        min_count=args.min_count,
        k=args.k,
        discount=args.discount,
    )
    save_lm(model, args.out)
    print(f"trained order-{args.order} {args.smoothing} model on {len(corpus)} sentences -> {args.out}")
    return 0


def cmd_calibrate(args) -> int:
    pair = LanguagePair.parse(args.pair)
    base: Optional[PolicyThresholds] = None
    if args.base:
        base = load_thresholds(args.base)
        if str(base.pair) != str(pair):
            raise ConfigError(f"--base file is for pair {base.pair}, not {pair}")

    if args.method == "qet":
        if not args.records:
            raise ConfigError("calibrate --method qet requires --records")
        records = load_dataset(args.records)
        threshold = calibrate_qet(records, args.fraction)
        source, count = args.records, len(records)
    else:
        if not args.corpus or not args.lm:
            raise ConfigError("calibrate --method pplt requires --corpus and --lm")
        corpus = _read_corpus(args.corpus)
        model = load_lm(args.lm)
        threshold = calibrate_pplt(model, corpus, args.fraction)
        source, count = args.corpus, len(corpus)

    provenance = {
        "dataset": str(source),
        "dataset_sha256": dataset_fingerprint(source),
        "n": count,
        "timestamp": _timestamp_for(source),
    }
    thresholds = PolicyThresholds(
        pair=pair,
        qet_threshold=threshold if args.method == "qet" else (base.qet_threshold if base else None),
        pplt_threshold=threshold if args.method == "pplt" else (base.pplt_threshold if base else None),
        jdm_t1=base.jdm_t1 if base else None,
        jdm_t2=base.jdm_t2 if base else None,
        target_llm_fraction=args.fraction,
        provenance=provenance,
    )
    save_thresholds(thresholds, args.out)
    print(f"{args.method} threshold for {pair}: {threshold} (fraction {args.fraction}, n={count}) -> {args.out}")
    return 0


def cmd_select_jdm_samples(args) -> int:
    records = load_dataset(args.records)
    selection = select_jdm_samples(
        records,
        t1_fraction=args.t1_fraction,
        n_pos=args.n_pos,
        neg_ratio=args.neg_ratio,
        seed=args.seed,
    )
    provenance = {
        "dataset": str(args.records),
        "dataset_sha256": dataset_fingerprint(args.records),
        "n": len(records),
    }
    save_jdm_samples(selection, args.out_dir, provenance=provenance)
    message = (
        f"t1={selection.t1} t2={selection.t2} positives={len(selection.positives)} "
        f"negatives={len(selection.negatives)} -> {args.out_dir}"
    )
    if selection.llm_never_better:
        message += "  [warning: t2 <= 0, the expensive backend never clearly wins]"
    print(message)
    return 0


def cmd_train_jdm(args) -> int:
    samples = load_jdm_samples(args.samples)
    model = load_lm(args.lm)
    clf = train_linear_decider(
        samples,
        model,
        epochs=args.epochs,
        learning_rate=args.learning_rate,
        l2=args.l2,
        seed=args.seed,
    )
    save_classifier(clf, args.out)
    print(f"trained decider on {len(samples.positives)}+{len(samples.negatives)} samples -> {args.out}")
    return 0


def _write_report_outputs(reports, args, diff=None) -> None:
    table = compare_report(reports, diff_between=diff)
    print(table, end="")
    if args.out:
        write_atomic(args.out, report_csv(reports))
        print(f"wrote {args.out}")
        if not args.no_figure:
            from .figures import save_report_figure

            figure = _figure_path(args.out)
            _save_figure(lambda p: save_report_figure(reports, p), figure)
            print(f"wrote {figure}")


def cmd_replay(args) -> int:
    records = load_dataset(args.records)
    spec = _decider_spec(args)
    scorer = _scorer_spec(args.scorer, ScoreKind.REFERENCE_BASED, "MTCASCADE_SCORER_ENDPOINT")
    qe_scorer = _scorer_spec(args.qe_scorer, ScoreKind.REFERENCE_FREE, "MTCASCADE_QE_SCORER_ENDPOINT")
    report = replay(records, spec, scorer, group_by=args.group_by, qe_scorer=qe_scorer)
    _write_report_outputs([report], args)
    return 0


def cmd_report(args) -> int:
    records = load_dataset(args.records)
    scorer = _scorer_spec(args.scorer, ScoreKind.REFERENCE_BASED, "MTCASCADE_SCORER_ENDPOINT")
    qe_scorer = _scorer_spec(args.qe_scorer, ScoreKind.REFERENCE_FREE, "MTCASCADE_QE_SCORER_ENDPOINT")
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    if not policies:
        raise ConfigError("--policies must name at least one policy")
    reports = []
    for policy in policies:
        spec = dataclasses.replace(_decider_spec(args), policy=policy)
        reports.append(replay(records, spec, scorer, group_by=args.group_by, qe_scorer=qe_scorer))
    diff = None
    if args.diff:
        parts = [p.strip() for p in args.diff.split(",")]
        if len(parts) != 2:
            raise ConfigError("--diff takes two comma-separated policy names")
        diff = (parts[0], parts[1])
    if len(reports) > 1:
        reports = attach_quality_diffs(reports)
    _write_report_outputs(reports, args, diff=diff)
    return 0


def cmd_sweep(args) -> int:
    records = load_dataset(args.records)
    spec = _decider_spec(args)
    scorer = _scorer_spec(args.scorer, ScoreKind.REFERENCE_BASED, "MTCASCADE_SCORER_ENDPOINT")
    qe_scorer = _scorer_spec(args.qe_scorer, ScoreKind.REFERENCE_FREE, "MTCASCADE_QE_SCORER_ENDPOINT")
    try:
        values = [float(v) for v in args.values.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"--values must be comma-separated numbers: {exc}") from exc
    points = pareto_sweep(records, spec, values, scorer, qe_scorer)
    for point in points:
        print(f"control={point.control:g} llm_p={point.llm_p:.4f} mean_quality={point.mean_quality:.3f}")
    if args.out:
        write_atomic(args.out, sweep_csv(points))
        print(f"wrote {args.out}")
        if not args.no_figure:
            from .figures import save_sweep_figure

            figure = _figure_path(args.out)
            _save_figure(lambda p: save_sweep_figure(points, p, policy=args.policy), figure)
            print(f"wrote {figure}")
    return 0


def apply_backend_env_overrides(config):
    """MTCASCADE_NMT_ENDPOINT / MTCASCADE_LLM_ENDPOINT trump the config file."""
    for env_var, name in (("MTCASCADE_NMT_ENDPOINT", "nmt"), ("MTCASCADE_LLM_ENDPOINT", "llm")):
        endpoint = os.environ.get(env_var)
        if endpoint:
            config = dataclasses.replace(
                config, **{name: dataclasses.replace(getattr(config, name), endpoint=endpoint)}
            )
    return config


def cmd_serve(args) -> int:
    config = apply_backend_env_overrides(load_router_config(args.config))
    serve(config)
    return 0


# --- parser -----------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="mtcascade", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("train-lm", help="train the source-side n-gram language model")
    p.add_argument("--corpus", required=True, help="one sentence per line, UTF-8")
    p.add_argument("--order", type=int, default=3)
    p.add_argument("--tokenizer", choices=["whitespace", "character"], default="whitespace")
    p.add_argument(
        "--smoothing", choices=["add_k", "interpolated_kneser_ney"], default="interpolated_kneser_ney"
    )
    p.add_argument("--min-count", type=int, default=2, dest="min_count")
    p.add_argument("--k", type=float, default=1.0, help="add_k pseudo-count")
    p.add_argument("--discount", type=float, default=0.75, help="Kneser-Ney discount")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_lm)

    p = sub.add_parser("calibrate", help="fit a quantile threshold for qet or pplt")
    p.add_argument("--method", choices=["qet", "pplt"], required=True)
    p.add_argument("--records", help="scored JSONL records (qet)")
    p.add_argument("--corpus", help="monolingual corpus (pplt)")
    p.add_argument("--lm", help="language model file (pplt)")
    p.add_argument("--fraction", type=float, default=DEFAULT_TARGET_LLM_FRACTION)
    p.add_argument("--pair", required=True, help="language pair, e.g. zh-en")
    p.add_argument("--base", help="existing thresholds file whose other fields carry over")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("select-jdm-samples", help="select decider training samples")
    p.add_argument("--records", required=True)
    p.add_argument("--t1-fraction", type=float, default=DEFAULT_T1_FRACTION, dest="t1_fraction")
    p.add_argument("--n-pos", type=int, required=True, dest="n_pos")
    p.add_argument("--neg-ratio", type=int, default=DEFAULT_NEG_RATIO, dest="neg_ratio")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True, dest="out_dir")
    p.set_defaults(func=cmd_select_jdm_samples)

    p = sub.add_parser("train-jdm", help="train the routing classifier")
    p.add_argument("--samples", required=True, help="directory written by select-jdm-samples")
    p.add_argument("--lm", required=True)
    p.add_argument("--epochs", type=int, default=300)
    p.add_argument("--learning-rate", type=float, default=0.5, dest="learning_rate")
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_jdm)

    p = sub.add_parser("replay", help="replay one policy over a scored dataset")
    p.add_argument("--records", required=True)
    p.add_argument(
        "--policy",
        choices=["always_nmt", "always_llm", "qet", "pplt", "jdm", "oracle"],
        required=True,
    )
    _add_decider_flags(p)
    _add_scorer_flags(p)
    p.add_argument("--group-by", dest="group_by")
    p.add_argument("--out", help="CSV output; a .png figure lands next to it")
    p.add_argument("--no-figure", action="store_true", dest="no_figure")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("report", help="replay several policies and compare them")
    p.add_argument("--records", required=True)
    p.add_argument("--policies", required=True, help="comma-separated policy names")
    _add_decider_flags(p)
    _add_scorer_flags(p)
    p.add_argument("--group-by", dest="group_by")
    p.add_argument("--diff", help="two policy names: append a quality Diff row (a,b -> a-b)")
    p.add_argument("--out", help="CSV output; a .png figure lands next to it")
    p.add_argument("--no-figure", action="store_true", dest="no_figure")
    p.set_defaults(func=cmd_report, policy="always_nmt")

    p = sub.add_parser("sweep", help="trace llm_p and quality over a control sweep")
    p.add_argument("--records", required=True)
    p.add_argument("--policy", choices=["pplt", "qet", "jdm"], required=True)
    p.add_argument("--values", required=True, help="comma-separated control values (inf allowed)")
    _add_decider_flags(p)
    _add_scorer_flags(p)
    p.add_argument("--out", help="CSV output; a .png figure lands next to it")
    p.add_argument("--no-figure", action="store_true", dest="no_figure")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("serve", help="run the routing gateway")
    p.add_argument("--config", required=True, help="router config JSON")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError:
        return 1
    try:
        return args.func(args) or 0
    except (ConfigError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except CascadeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
