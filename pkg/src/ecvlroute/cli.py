"""Command line interface.

Exit codes: 0 success, 1 usage error, 2 data error (unreadable or invalid
inputs), 3 runtime error (training or serving failure). Heavy imports are
deferred into the subcommands so --help stays fast and --threads can cap the
BLAS pools before numpy loads.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

log = logging.getLogger("ecvlroute")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; this tool reserves 2 for data errors.
    def error(self, message):
        raise UsageError(message)


def _apply_threads(threads: int | None):
    if threads is None and os.environ.get("ECVL_THREADS"):
        threads = int(os.environ["ECVL_THREADS"])
    if threads is not None:
        if threads < 1:
            raise UsageError("--threads must be >= 1")
        for var in _THREAD_VARS:
            os.environ[var] = str(threads)
        os.environ["ECVL_THREADS"] = str(threads)


def _scenario(args):
    from .rsd import ScenarioConfig, scenario_preset
    if getattr(args, "weights", None):
        parts = [float(x) for x in args.weights.split(",")]
        if len(parts) != 3:
            raise UsageError("--weights needs alpha,beta,gamma")
        return ScenarioConfig("custom", args.mes, *parts)
    return scenario_preset(args.scenario, args.mes)


def _all_scenarios(mes: float):
    from .rsd import scenario_preset
    return [scenario_preset(n, mes) for n in ("rcs1", "rcs2", "rcs3")]


def _parse_mask(text: str):
    if len(text) != 3 or any(c not in "01" for c in text):
        raise UsageError(f"--mask must be three bits like 110, got {text!r}")
    return tuple(int(c) for c in text)


def _load_pairs(args):
    from .rsd import load_rsd, pair_view
    records = load_rsd(args.rsd)
    pairs, skipped = pair_view(records, args.edge, args.cloud)
    if skipped:
        log.warning("skipped %d records missing one of the pair outcomes", skipped)
    return records, pairs


def _load_tables(args, mask):
    from .features import load_embeddings
    text_table = image_table = None
    if mask[0] and getattr(args, "text_emb", None):
        text_table = load_embeddings(args.text_emb, "text")
    if mask[1] and getattr(args, "image_emb", None):
        image_table = load_embeddings(args.image_emb, "image")
    return text_table, image_table


def _bundles_by_split(pairs, assignment, text_table, image_table, normalizer, mask):
    from .features import FeatureAssembler
    from .rsd import SPLITS, RsdError
    missing = [p.query_id for p in pairs if p.query_id not in assignment]
    if missing:
        raise RsdError(f"split missing {len(missing)} records, e.g. {missing[:3]}")
    out = {}
    for split in SPLITS:
        subset = [p for p in pairs if assignment[p.query_id] == split]
        assembler = FeatureAssembler(text_table, image_table, normalizer, mask)
        out[split] = (subset, assembler.assemble_all(p.record for p in subset))
    return out


def _fit_normalizer_on_train(pairs, assignment):
    from .features import fit_normalizer, raw_stats
    rows = [raw_stats(p.record) for p in pairs
            if assignment.get(p.query_id) == "train"]
    return fit_normalizer(rows)


def _variant_config(args):
    from .nn.model import MfConfig, MlpConfig, TransformerConfig
    if args.variant == "transformer":
        return TransformerConfig(layers=args.layers, d=args.dim, heads=args.heads,
                                 ffn=args.ffn, dropout=args.dropout)
    if args.variant == "mlp":
        hidden = tuple(int(x) for x in args.hidden.split(","))
        return MlpConfig(d=args.dim, hidden=hidden)
    return MfConfig(rank=args.rank, inner=args.inner)


# ---------------------------------------------------------------------------
# Subcommands

def cmd_ingest(args) -> int:
    from .rsd import load_rsd, save_rsd
    records = load_rsd(args.input)
    if args.output:
        save_rsd(records, args.output)
    models = sorted({name for r in records for name in r.outcomes})
    print(f"records {len(records)}")
    print(f"models {','.join(models)}")
    print(f"with_image {sum(1 for r in records if r.image is not None)}")
    return EXIT_OK


def cmd_label(args) -> int:
    from .labeling import label_dataset, parse_strategy, positive_rate, save_labels
    _, pairs = _load_pairs(args)
    strategy = parse_strategy(args.strategy)
    labels = label_dataset(pairs, strategy)
    save_labels(labels, args.output)
    print(f"labeled {len(labels)} positive_rate {positive_rate(labels):.4f}")
    return EXIT_OK


def _parse_ratios(text: str):
    # Accepts percentage form "60:20:20" and fraction form "0.6,0.2,0.2".
    sep = ":" if ":" in text else ","
    parts = [float(x) for x in text.split(sep)]
    if len(parts) != 3:
        raise UsageError("--ratios needs train,valid,test")
    if sep == ":" or sum(parts) > 1.5:
        parts = [p / 100.0 for p in parts]
    return tuple(parts)


def cmd_split(args) -> int:
    from .labeling import load_labels
    from .rsd import SPLITS, save_split, stratified_split
    _, pairs = _load_pairs(args)
    labels = {l.query_id: l.label for l in load_labels(args.labels)}
    ratios = _parse_ratios(args.ratios)
    split = stratified_split(pairs, labels, ratios, args.seed)
    save_split(split, args.output)
    counts = {s: len(split.ids(s)) for s in SPLITS}
    for name, count in counts.items():
        if count == 0:
            log.warning("empty %s split", name)
    print(" ".join(f"{s} {counts[s]}" for s in SPLITS))
    return EXIT_OK


def cmd_train(args) -> int:
    from .labeling import load_labels
    from .nn.state import save_state
    from .nn.train import TrainConfig, train
    from .rsd import load_split

    mask = _parse_mask(args.mask)
    _, pairs = _load_pairs(args)
    labels = {l.query_id: l.label for l in load_labels(args.labels)}
    assignment = load_split(args.split)
    text_table, image_table = _load_tables(args, mask)
    normalizer = _fit_normalizer_on_train(pairs, assignment)
    per_split = _bundles_by_split(pairs, assignment, text_table, image_table,
                                  normalizer, mask)
    train_pairs, train_b = per_split["train"]
    valid_pairs, valid_b = per_split["valid"]
    y = [labels[p.query_id] for p in train_pairs]

    k_text = text_table.dim if text_table else 1
    k_image = image_table.dim if image_table else 1
    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                         peak_lr=args.lr, seed=args.seed)
    state = train(_variant_config(args), train_b, y, valid_b, valid_pairs,
                  config, _scenario(args), k_text, k_image,
                  normalizer=normalizer, mask=mask)
    save_state(state, args.output)
    last = state.history[-1]
    print(f"trained {args.variant} tau {state.tau:.2f} "
          f"rcs_star {max(h.rcs_star for h in state.history):.4f} "
          f"final_loss {last.loss:.4f}")
    return EXIT_OK


def cmd_calibrate(args) -> int:
    from .evaluation import grid_search_tau
    from .nn.state import load_state, save_state
    from .rsd import load_split

    state = load_state(args.model)
    scenario = _scenario(args) if args.scenario or args.weights else state.scenario
    _, pairs = _load_pairs(args)
    assignment = load_split(args.split)
    text_table, image_table = _load_tables(args, state.mask)
    per_split = _bundles_by_split(pairs, assignment, text_table, image_table,
                                  state.normalizer, state.mask)
    valid_pairs, valid_b = per_split[args.on]
    p = state.model.predict_proba(valid_b)
    tau, rcs = grid_search_tau(p, valid_pairs, scenario)
    state.tau = tau
    state.scenario = scenario
    save_state(state, args.output or args.model)
    print(f"tau {tau:.2f} rcs {rcs:.4f} n {len(valid_pairs)}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .evaluation import (AllLargePolicy, AllSmallPolicy, RandomPolicy,
                             RouterPolicy, compute_metrics, emit_report,
                             route_dataset)
    from .labeling import load_labels
    from .nn.state import load_state
    from .rsd import load_split

    state = load_state(args.model)
    _, pairs = _load_pairs(args)
    if args.split:
        assignment = load_split(args.split)
        text_table, image_table = _load_tables(args, state.mask)
        per_split = _bundles_by_split(pairs, assignment, text_table, image_table,
                                      state.normalizer, state.mask)
        pairs, bundles = per_split[args.on]
    else:
        from .features import FeatureAssembler
        text_table, image_table = _load_tables(args, state.mask)
        assembler = FeatureAssembler(text_table, image_table, state.normalizer,
                                     state.mask)
        bundles = assembler.assemble_all(p.record for p in pairs)
    labels = None
    if args.labels:
        labels = {l.query_id: l.label for l in load_labels(args.labels)}

    mes = args.mes if args.mes is not None else state.scenario.mes
    scenarios = _all_scenarios(mes)
    reports = []
    policies = [_parse_policy(args.policy, state, bundles, args.seed)]
    if args.baselines:
        policies += [(AllLargePolicy(), None), (AllSmallPolicy(), None),
                     (RandomPolicy(p_edge=0.5, seed=args.seed), None)]
        policies = list({p[0].name: p for p in policies}.values())
    for policy, b in policies:
        decisions = route_dataset(policy, pairs, b)
        reports.append(compute_metrics(decisions, labels, mes, scenarios,
                                       pairs=pairs, policy_name=policy.name))
    emit_report(reports, args.output, format=args.format)
    r = reports[0]
    print(f"{r.policy} apsp {r.apsp:.4f} ca {r.ca:.4f} ail {r.ail:.4f} "
          f"rcs1 {r.rcs['rcs1']:.4f} n {r.n}")
    return EXIT_OK


def _parse_policy(text, state, bundles, seed):
    from .evaluation import (AllLargePolicy, AllSmallPolicy, RandomPolicy,
                             RouterPolicy)
    if text == "router":
        return RouterPolicy(state), bundles
    if text == "all-large":
        return AllLargePolicy(), None
    if text == "all-small":
        return AllSmallPolicy(), None
    if text.startswith("random"):
        p_edge = 0.5
        if ":" in text:
            key, _, value = text.partition(":")[2].partition("=")
            if key != "p":
                raise UsageError(f"bad policy {text!r}")
            p_edge = float(value)
        return RandomPolicy(p_edge=p_edge, seed=seed), None
    raise UsageError(f"unknown policy {text!r}")


def cmd_sweep_mes(args) -> int:
    from .evaluation import RouterPolicy, emit_sweep, grid_search_tau, mes_sweep
    from .nn.state import load_state
    from .rsd import load_split

    state = load_state(args.model)
    _, pairs = _load_pairs(args)
    assignment = load_split(args.split)
    text_table, image_table = _load_tables(args, state.mask)
    per_split = _bundles_by_split(pairs, assignment, text_table, image_table,
                                  state.normalizer, state.mask)
    valid_pairs, valid_b = per_split["valid"]
    test_pairs, test_b = per_split["test"]
    p_valid = state.model.predict_proba(valid_b)
    test_by_id = {b.query_id: b for b in test_b}
    if args.mes_values:
        mes_values = [float(x) for x in args.mes_values.split(",")]
    else:
        lo, hi = args.mes_from, args.mes_to
        if lo > hi:
            raise UsageError("--from must be <= --to")
        mes_values = [float(m) for m in range(int(lo), int(hi) + 1)]

    def builder(_pairs, _labels, mes):
        # Recalibrate tau on the validation split at each MES floor; the
        # classifier itself is fixed.
        scen = _scenario_at(args, mes)
        tau, rcs = grid_search_tau(p_valid, valid_pairs, scen)
        snapshot = _TauView(state, tau)
        return RouterPolicy(snapshot), [test_by_id[q.query_id] for q in _pairs], tau, rcs

    rows = mes_sweep(test_pairs, mes_values, builder)
    emit_sweep(rows, args.output)
    for r in rows:
        print(f"mes {r.mes:g} failure_rate {r.failure_rate:.4f} ca {r.ca:.4f} "
              f"tau {r.tau_star:.2f}")
    return EXIT_OK


class _TauView:
    """RouterState look-alike with an overridden threshold."""

    def __init__(self, state, tau):
        self.model = state.model
        self.tau = tau


def _scenario_at(args, mes):
    from .rsd import ScenarioConfig, scenario_preset
    if getattr(args, "weights", None):
        parts = [float(x) for x in args.weights.split(",")]
        return ScenarioConfig("custom", mes, *parts)
    return scenario_preset(args.scenario, mes)


def cmd_ablate(args) -> int:
    from .evaluation import ablation_run, emit_report
    from .features import FeatureAssembler
    from .labeling import load_labels
    from .nn.train import TrainConfig
    from .rsd import load_split

    _, pairs = _load_pairs(args)
    labels = {l.query_id: l.label for l in load_labels(args.labels)}
    assignment = load_split(args.split)
    masks = [_parse_mask(m) for m in args.masks.split(",")]
    full_mask = tuple(max(m[i] for m in masks) for i in range(3))
    text_table, image_table = _load_tables(args, full_mask)
    normalizer = _fit_normalizer_on_train(pairs, assignment)

    split_pairs = {s: [p for p in pairs if assignment.get(p.query_id) == s]
                   for s in ("train", "valid", "test")}

    def bundles_for(split, mask):
        assembler = FeatureAssembler(text_table, image_table, normalizer, mask)
        return assembler.assemble_all(p.record for p in split_pairs[split])

    config = TrainConfig(epochs=args.epochs, batch_size=args.batch_size,
                         peak_lr=args.lr, seed=args.seed)
    k_text = text_table.dim if text_table else 1
    k_image = image_table.dim if image_table else 1
    reports = ablation_run(split_pairs, bundles_for, labels, masks,
                           _variant_config(args), config, _scenario(args),
                           random_seed=args.seed, k_dims=(k_text, k_image))
    emit_report(reports, args.output, format=args.format)
    for r in reports:
        print(f"{r.policy} rcs1 {r.rcs['rcs1']:.4f} ca {r.ca:.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .features import save_embeddings
    from .rsd import save_rsd
    from .synthgen import SynthSpec, generate

    if args.spec:
        spec = SynthSpec.from_json(args.spec)
    else:
        spec = SynthSpec(n_records=args.n, signal=args.signal, seed=args.seed,
                         case_b_frac=args.case_b_frac)
    records, tables, truth = generate(spec)
    os.makedirs(args.outdir, exist_ok=True)
    save_rsd(records, os.path.join(args.outdir, "rsd.jsonl"))
    save_embeddings(tables["text"], os.path.join(args.outdir, "text.emb"))
    save_embeddings(tables["image"], os.path.join(args.outdir, "image.emb"))
    with open(os.path.join(args.outdir, "truth.jsonl"), "w", encoding="utf-8") as f:
        for qid in sorted(truth):
            f.write(json.dumps({"query_id": qid, **truth[qid]}) + "\n")
    print(f"generated {len(records)} records in {args.outdir}")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .gateway import create_app, load_config

    path = args.config or os.environ.get("ECVL_CONFIG")
    if not path:
        raise UsageError("need --config or ECVL_CONFIG")
    config = load_config(path)
    app = create_app(config)
    try:
        import uvicorn
    except ImportError:
        raise RuntimeError("serving needs uvicorn (pip install ecvlroute[serve])")
    uvicorn.run(app, host=config.listen_host, port=config.listen_port,
                log_level="info")
    return EXIT_OK


def cmd_report(args) -> int:
    from .gateway import read_decision_log

    entries, truncated = read_decision_log(args.log)
    summary = {"entries": len(entries), "truncated_tail": int(truncated)}
    if entries:
        n = len(entries)
        overheads = sorted(e["router_overhead_s"] for e in entries)
        summary.update({
            "edge_fraction": round(
                sum(1 for e in entries if e["decision"] == "edge") / n, 4),
            "degraded_fraction": round(
                sum(1 for e in entries if e.get("degraded")) / n, 4),
            "fallback_fraction": round(
                sum(1 for e in entries if e.get("fallback")) / n, 4),
            "overhead_p50_s": round(overheads[n // 2], 6),
        })
    if args.format == "json":
        text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    else:
        text = "".join(f"{k},{v}\n" for k, v in summary.items())
    if args.output:
        from .utils import atomic_write_text
        atomic_write_text(args.output, text)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument wiring

def _add_pair_args(p):
    p.add_argument("--rsd", required=True, help="response-score JSONL file")
    p.add_argument("--edge", required=True, help="edge model name")
    p.add_argument("--cloud", required=True, help="cloud model name")


def _add_scenario_args(p):
    p.add_argument("--scenario", default="rcs1", choices=("rcs1", "rcs2", "rcs3"))
    p.add_argument("--weights", help="custom alpha,beta,gamma overriding the preset")
    p.add_argument("--mes", type=float, default=6.0)


def _add_emb_args(p):
    p.add_argument("--text-emb", help="text embedding file")
    p.add_argument("--image-emb", help="image embedding file")


def _add_variant_args(p):
    p.add_argument("--variant", default="transformer",
                   choices=("transformer", "mlp", "mf"))
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--ffn", type=int, default=512)
    p.add_argument("--dropout", type=float, default=0.3)
    p.add_argument("--hidden", default="256,256,256", help="mlp widths")
    p.add_argument("--rank", type=int, default=16)
    p.add_argument("--inner", type=int, default=64)


def _add_train_args(p):
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-3)


def build_parser() -> _Parser:
    parser = _Parser(prog="ecvlroute",
                     description="edge/cloud routing for vision-language model pairs")
    parser.add_argument("--threads", type=int, help="cap numeric thread pools "
                        "(also via ECVL_THREADS)")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and canonicalize an RSD file")
    p.add_argument("input")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("label", help="derive edge-competency labels")
    _add_pair_args(p)
    p.add_argument("--strategy", default="proposed:mes=6")
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("split", help="stratified train/valid/test assignment")
    _add_pair_args(p)
    p.add_argument("--labels", required=True)
    p.add_argument("--ratios", default="0.7,0.15,0.15")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train a routing classifier")
    _add_pair_args(p)
    p.add_argument("--labels", required=True)
    p.add_argument("--split", required=True)
    _add_emb_args(p)
    _add_variant_args(p)
    _add_train_args(p)
    _add_scenario_args(p)
    p.add_argument("--mask", default="111", help="modality bits text,image,stats")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="re-fit the decision threshold")
    _add_pair_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--on", default="valid", choices=("train", "valid", "test"))
    _add_emb_args(p)
    p.add_argument("--scenario", choices=("rcs1", "rcs2", "rcs3"))
    p.add_argument("--weights")
    p.add_argument("--mes", type=float, default=6.0)
    p.add_argument("-o", "--output", help="defaults to rewriting --model")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="score a router and baselines")
    _add_pair_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--split")
    p.add_argument("--on", default="test", choices=("train", "valid", "test"))
    p.add_argument("--labels")
    _add_emb_args(p)
    p.add_argument("--policy", default="router",
                   help="router | all-large | all-small | random:p=0.5")
    p.add_argument("--baselines", action="store_true",
                   help="also score the all-large/all-small/random baselines")
    p.add_argument("--mes", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", default="csv", choices=("csv", "json"))
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-mes", help="failure rate and routing vs the MES floor")
    _add_pair_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--split", required=True)
    _add_emb_args(p)
    p.add_argument("--scenario", default="rcs1", choices=("rcs1", "rcs2", "rcs3"))
    p.add_argument("--weights")
    p.add_argument("--mes-values", help="explicit comma list, e.g. 4,5,6,7,8")
    p.add_argument("--from", dest="mes_from", type=float, default=1.0)
    p.add_argument("--to", dest="mes_to", type=float, default=9.0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_sweep_mes)

    p = sub.add_parser("ablate", help="per-modality ablation with baselines")
    _add_pair_args(p)
    p.add_argument("--labels", required=True)
    p.add_argument("--split", required=True)
    _add_emb_args(p)
    _add_variant_args(p)
    _add_train_args(p)
    _add_scenario_args(p)
    p.add_argument("--masks", default="111,100,010,001,110")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--format", default="csv", choices=("csv", "json"))
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--spec", help="JSON spec file")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--signal", default="separable",
                   choices=("separable", "noisy", "adversarial"))
    p.add_argument("--case-b-frac", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--outdir", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("serve", help="run the HTTP routing gateway")
    p.add_argument("--config", help="flat key=value config (or ECVL_CONFIG)")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="summarize a gateway decision log")
    p.add_argument("--log", required=True)
    p.add_argument("--format", default="csv", choices=("csv", "json"))
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_threads(args.threads)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    from .features import FeatureError
    from .gateway import ConfigError
    from .labeling import LabelError
    from .rsd import RsdError

    try:
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (RsdError, LabelError, FeatureError, ConfigError, FileNotFoundError,
            json.JSONDecodeError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        # StateError / EvalError / SynthError subclass ValueError.
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as e:
        log.exception("runtime failure")
        print(f"runtime error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
