"""Command-line interface.

Stages are independently re-runnable: each subcommand reads and writes the
JSON/CSV formats used throughout the package.

    generate   synthetic benchmark graph -> graph.json
    train      GCN on a graph            -> model.json
    explain    one target's explanation  -> explanation.json
    cres       counterfactual set        -> cres.json
    learn-fg   factor graph + weights    -> factorgraph.json
    evaluate   uncertainty for one explanation against a factor graph -> CSV
    verify     full retrain-and-compare pipeline -> results.csv etc.
    report     regenerate CSV reports from a saved bundle

Exit codes: 0 success, 2 validation error, 3 pipeline-stage failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from relex.boolfact import (CreGenerationFailed, EmptyCreSet, RankSearchConfig,
                            generate_cres, load_creset, save_creset)
from relex.datasets import (generate_ba_community, generate_ba_shapes,
                            generate_tree_motif)
from relex.explainer import (ExplainConfig, SingleNodeExplanation, explain,
                             load_explanation, save_explanation)
from relex.factorgraph import (BpConfig, build_factor_graph, learn_weights,
                               load_factorgraph, quantify_uncertainty,
                               report_to_csv, save_factorgraph)
from relex.gcn import TrainConfig, TrainingDiverged, load_model, save_model, train_gcn
from relex.graphs import GraphFormatError, load_graph, save_graph, split_nodes
from relex.pipeline import (GENERATORS, DatasetSpec, PipelineConfig,
                            PipelineStageError, bundle_from_dict, emit_report,
                            run_verification)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_STAGE = 3


def _add_dataset_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", required=True,
                   help=f"one of {', '.join(GENERATORS)} or a graph.json path")
    p.add_argument("--base-nodes", type=int, default=25)
    p.add_argument("--motifs", type=int, default=5)
    p.add_argument("--height", type=int, default=4)


def _dataset_spec(args) -> DatasetSpec:
    if args.dataset in GENERATORS:
        return DatasetSpec(kind=args.dataset, base_nodes=args.base_nodes,
                           motif_count=args.motifs, height=args.height)
    return DatasetSpec(kind="file", path=args.dataset)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="relex",
        description="Uncertainty quantification for relational explanations")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic benchmark graph")
    p.add_argument("--dataset", required=True, choices=GENERATORS)
    p.add_argument("--base-nodes", type=int, default=25)
    p.add_argument("--motifs", type=int, default=5)
    p.add_argument("--height", type=int, default=4)
    p.add_argument("--motif", choices=("cycle", "grid"), default=None,
                   help="tree motif override; implied by the dataset name")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="train the GCN on a graph")
    p.add_argument("--graph", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden-dim", type=int, default=32)
    p.add_argument("--epochs", type=int, default=10000)
    p.add_argument("--lr", type=float, default=0.2)
    p.add_argument("--patience", type=int, default=200)
    p.add_argument("--out", required=True)

    p = sub.add_parser("explain", help="explain one node prediction")
    p.add_argument("--graph", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--top-k", type=int, default=6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("cres", help="generate the counterfactual explanation set")
    p.add_argument("--graph", required=True)
    p.add_argument("--model", required=True)
    p.add_argument("--target", type=int, required=True)
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--top-k", type=int, default=6)
    p.add_argument("--max-rank", type=int, default=64)
    p.add_argument("--solver-iterations", type=int, default=10000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("learn-fg", help="build and train the factor graph")
    p.add_argument("--cres", required=True)
    p.add_argument("--lr", type=float, default=0.02)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--out", required=True)

    p = sub.add_parser("evaluate",
                       help="quantify an explanation's uncertainty against a factor graph")
    p.add_argument("--fg", required=True)
    p.add_argument("--explanation", required=True)
    p.add_argument("--bp-iters", type=int, default=200)
    p.add_argument("--bp-tol", type=float, default=1e-6)
    p.add_argument("--bp-damping", type=float, default=0.5)
    p.add_argument("--out", required=True)

    p = sub.add_parser("verify", help="run the full verification pipeline")
    _add_dataset_args(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--hidden-dim", type=int, default=32)
    p.add_argument("--epochs", type=int, default=2000)
    p.add_argument("--hops", type=int, default=2)
    p.add_argument("--steps", type=int, default=300)
    p.add_argument("--top-k", type=int, default=6)
    p.add_argument("--scorer", choices=("bp", "is", "both"), default="both")
    p.add_argument("--g-max", type=int, default=1)
    p.add_argument("--max-targets", type=int, default=None)
    p.add_argument("--min-class-count", type=int, default=10)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--out", required=True)

    p = sub.add_parser("report", help="regenerate CSV reports from a bundle")
    p.add_argument("--bundle", required=True)
    p.add_argument("--out", required=True)
    return parser


def _cmd_generate(args) -> int:
    if args.dataset == "ba-shapes":
        g = generate_ba_shapes(args.base_nodes, args.motifs, args.seed)
    elif args.dataset == "ba-community":
        g = generate_ba_community(args.base_nodes, args.motifs, args.seed)
    else:
        motif = args.motif or ("cycle" if args.dataset == "tree-cycles" else "grid")
        g = generate_tree_motif(args.height, motif, args.motifs, args.seed)
    save_graph(g, args.out)
    print(f"wrote {args.out}: {g.node_count} nodes, {g.edge_count} edges, "
          f"{g.class_count} classes")
    return EXIT_OK


def _cmd_train(args) -> int:
    g = load_graph(args.graph)
    split = split_nodes(g, args.seed)
    cfg = TrainConfig(hidden_dim=args.hidden_dim, max_epochs=args.epochs,
                      learning_rate=args.lr, seed=args.seed,
                      patience=args.patience)
    model = train_gcn(g, split, cfg)
    save_model(model, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


def _explain_config(args) -> ExplainConfig:
    return ExplainConfig(hops=args.hops, mask_steps=args.steps,
                         top_k=args.top_k, seed=args.seed)


def _cmd_explain(args) -> int:
    g = load_graph(args.graph)
    model = load_model(args.model, graph=g)
    e = explain(model, g, args.target, _explain_config(args))
    save_explanation(e, args.out)
    print(f"wrote {args.out}: {len(e.relations)} relations, "
          f"class {e.predicted_class}")
    return EXIT_OK


def _cmd_cres(args) -> int:
    g = load_graph(args.graph)
    model = load_model(args.model, graph=g)
    ecfg = _explain_config(args)
    rcfg = RankSearchConfig(max_rank=args.max_rank,
                            solver_iterations=args.solver_iterations,
                            seed=args.seed)
    s = generate_cres(g, model, args.target, ecfg, rcfg)
    save_creset(s, args.out)
    print(f"wrote {args.out}: {len(s.explanations)} counterfactual explanations "
          f"at ranks {s.ranks_used}")
    return EXIT_OK


def _cmd_learn_fg(args) -> int:
    s = load_creset(args.cres)
    fg = build_factor_graph(s)
    fg = learn_weights(fg, s, learning_rate=args.lr, epochs=args.epochs)
    save_factorgraph(fg, args.out)
    print(f"wrote {args.out}: {len(fg.factors)} factors over "
          f"{len(fg.entities)} entities")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    fg = load_factorgraph(args.fg)
    e = load_explanation(args.explanation)
    bp = BpConfig(max_iters=args.bp_iters, tol=args.bp_tol,
                  damping=args.bp_damping)
    report = quantify_uncertainty(fg, e, bp)
    report_to_csv(report, args.out)
    print(f"wrote {args.out}: {len(report.entries)} relations, "
          f"converged={report.converged}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    test_frac = args.test_fraction
    fractions = (1.0 - 0.1 - test_frac, 0.1, test_frac)
    cfg = PipelineConfig(
        dataset=_dataset_spec(args),
        train=TrainConfig(hidden_dim=args.hidden_dim, max_epochs=args.epochs,
                          seed=args.seed),
        explain=ExplainConfig(hops=args.hops, mask_steps=args.steps,
                              top_k=args.top_k, seed=args.seed),
        scorer=args.scorer,
        g_max=args.g_max,
        min_class_count=args.min_class_count,
        split_fractions=fractions,
        seed=args.seed,
        max_targets=args.max_targets,
    )
    try:
        bundle = run_verification(cfg)
    except PipelineStageError as exc:
        if exc.partial is not None:  # flush partial results before aborting
            emit_report(exc.partial, args.out)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    files = emit_report(bundle, args.out)
    for w in bundle.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(f"wrote {len(files)} files to {args.out}")
    return EXIT_OK


def _cmd_report(args) -> int:
    blob = json.loads(Path(args.bundle).read_text(encoding="utf-8"))
    bundle = bundle_from_dict(blob)
    files = emit_report(bundle, args.out)
    print(f"wrote {len(files)} files to {args.out}")
    return EXIT_OK


_COMMANDS = {
    "generate": _cmd_generate,
    "train": _cmd_train,
    "explain": _cmd_explain,
    "cres": _cmd_cres,
    "learn-fg": _cmd_learn_fg,
    "evaluate": _cmd_evaluate,
    "verify": _cmd_verify,
    "report": _cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (PipelineStageError, TrainingDiverged, CreGenerationFailed,
            EmptyCreSet, SingleNodeExplanation) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (GraphFormatError, ValueError, FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
