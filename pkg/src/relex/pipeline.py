"""End-to-end verification pipeline and report emission.

Train a GCN, explain eligible targets, score each explained relation with
the factor-graph path (BP) or the raw explainer confidences (IS), remove
each target's i-th ranked relation to form a reduced graph, retrain from
the identical seed, and compare predictions per class with McNemar's test
over the test split.
"""

from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from relex.boolfact import (CreGenerationFailed, EmptyCreSet, RankSearchConfig,
                            generate_cres, rank_ladder)
from relex.datasets import (generate_ba_community, generate_ba_shapes,
                            generate_tree_motif)
from relex.explainer import (ExplainConfig, Explanation, SingleNodeExplanation,
                             explain, is_scores)
from relex.factorgraph import (BpConfig, UncertaintyReport, build_factor_graph,
                               learn_weights, quantify_uncertainty, report_to_csv)
from relex.gcn import TrainConfig, predict, train_gcn
from relex.graphs import (Edge, RelationalGraph, adjacency, load_graph,
                          remove_edges, split_nodes)
from relex.mcnemar import mcnemar_test

log = logging.getLogger("relex")

GENERATORS = ("ba-shapes", "ba-community", "tree-cycles", "tree-grids")


class PipelineStageError(RuntimeError):
    """A pipeline stage failed; carries the stage tag and partial results."""

    def __init__(self, stage: str, cause: BaseException,
                 partial: "VerificationBundle | None" = None):
        super().__init__(f"stage '{stage}' failed: {cause}")
        self.stage = stage
        self.cause = cause
        self.partial = partial


@dataclass
class DatasetSpec:
    kind: str                      # generator name or "file"
    path: str | None = None
    base_nodes: int = 25
    motif_count: int = 5
    height: int = 4
    motif: str = "cycle"

    @property
    def synthetic(self) -> bool:
        return self.kind in GENERATORS

    def build(self, seed: int) -> RelationalGraph:
        if self.kind == "ba-shapes":
            return generate_ba_shapes(self.base_nodes, self.motif_count, seed)
        if self.kind == "ba-community":
            return generate_ba_community(self.base_nodes, self.motif_count, seed)
        if self.kind == "tree-cycles":
            return generate_tree_motif(self.height, "cycle", self.motif_count, seed)
        if self.kind == "tree-grids":
            return generate_tree_motif(self.height, "grid", self.motif_count, seed)
        if self.kind == "file":
            if not self.path:
                raise ValueError("file dataset needs a path")
            return load_graph(self.path, format="json-bundle")
        raise ValueError(f"unknown dataset kind {self.kind!r}")


@dataclass
class PipelineConfig:
    dataset: DatasetSpec
    train: TrainConfig = field(default_factory=TrainConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)
    rank_search: RankSearchConfig = field(default_factory=RankSearchConfig)
    bp: BpConfig = field(default_factory=BpConfig)
    scorer: str = "both"           # "bp" | "is" | "both"
    g_max: int = 1
    min_class_count: int = 10
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0
    max_targets: int | None = None
    learn_rate: float = 0.02
    learn_epochs: int = 30

    def __post_init__(self):
        if self.g_max < 1:
            raise ValueError("g_max must be >= 1")
        if self.scorer not in ("bp", "is", "both"):
            raise ValueError("scorer must be 'bp', 'is' or 'both'")

    @property
    def scorers(self) -> tuple[str, ...]:
        return ("bp", "is") if self.scorer == "both" else (self.scorer,)


@dataclass
class VerificationBundle:
    dataset: str
    seed: int
    targets: list[int] = field(default_factory=list)
    base_predictions: list[int] = field(default_factory=list)
    results: list[dict] = field(default_factory=list)
    removed_counts: dict[str, int] = field(default_factory=dict)  # "scorer/i" -> count
    warnings: list[str] = field(default_factory=list)
    reports: dict[int, UncertaintyReport] = field(default_factory=dict)
    rankings: dict[str, dict[int, list[tuple[Edge, float]]]] = field(default_factory=dict)


def derived_seed(*parts: int) -> int:
    """Stable sub-seed derived from integer parts."""
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def worker_count() -> int:
    """Worker cap from RELEX_THREADS; defaults to sequential."""
    raw = os.environ.get("RELEX_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


# ---------------------------------------------------------------------------
# Relation selection and graph reduction
# ---------------------------------------------------------------------------

def select_removal_edges(rankings: Mapping[int, Sequence[tuple[Edge, float]]],
                         i: int) -> set[Edge]:
    """Union over targets of each target's i-th highest-scored relation.

    Ties break on (u, v) lexicographic order; targets with fewer than i
    relations contribute nothing.
    """
    if i < 1:
        raise ValueError("i must be >= 1")
    selected: set[Edge] = set()
    for target in rankings:
        ordered = sorted(rankings[target], key=lambda item: (-item[1], item[0]))
        if len(ordered) >= i:
            selected.add(ordered[i - 1][0])
    return selected


def reduced_graph(g: RelationalGraph,
                  rankings: Mapping[int, Sequence[tuple[Edge, float]]],
                  i: int) -> RelationalGraph:
    """Graph minus each target's i-th highest-scored relation."""
    out, _ = remove_edges(g, select_removal_edges(rankings, i))
    return out


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------

def eligible_targets(g: RelationalGraph, synthetic: bool) -> list[int]:
    """Nodes whose predictions get explained.

    Synthetic motif benchmarks explain only non-zero classes (class 0 is
    the base structure); file datasets explain every node.
    """
    if synthetic:
        return [int(n) for n in np.flatnonzero(g.labels != 0)]
    return list(range(g.node_count))


def _bp_ranking_for_target(g, model, target, ecfg, rcfg, bp, ladder,
                           learn_rate, learn_epochs):
    cres = generate_cres(g, model, target, ecfg, rcfg, ladder=ladder)
    fg = build_factor_graph(cres)
    fg = learn_weights(fg, cres, learning_rate=learn_rate, epochs=learn_epochs)
    explanation = explain(model, g, target, ecfg)
    return quantify_uncertainty(fg, explanation, bp)


def run_verification(cfg: PipelineConfig) -> VerificationBundle:
    """Run the full retrain-and-compare protocol; see module docstring.

    Deterministic for a fixed config: a re-run produces byte-identical
    report files.  Stage failures raise PipelineStageError carrying the
    partial bundle collected so far.
    """
    bundle = VerificationBundle(dataset=cfg.dataset.kind, seed=cfg.seed)

    def stage(name, fn, *args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except Exception as exc:  # noqa: BLE001 - tag and propagate
            raise PipelineStageError(name, exc, partial=bundle) from exc

    g = stage("dataset", cfg.dataset.build, cfg.seed)
    split = stage("split", split_nodes, g, cfg.seed, cfg.split_fractions)
    train_cfg = replace(cfg.train, seed=derived_seed(cfg.seed, 1))
    model = stage("train", train_gcn, g, split, train_cfg)
    base_pred = predict(model, g)
    bundle.base_predictions = [int(x) for x in base_pred]

    candidates = eligible_targets(g, cfg.dataset.synthetic)
    if cfg.max_targets is not None and len(candidates) > cfg.max_targets:
        rng = np.random.default_rng(derived_seed(cfg.seed, 2))
        candidates = sorted(rng.choice(candidates, size=cfg.max_targets,
                                       replace=False).tolist())

    def explain_target(target: int) -> tuple[int, Explanation | None]:
        ecfg = replace(cfg.explain, seed=derived_seed(cfg.seed, 3, target))
        try:
            e = explain(model, g, target, ecfg)
        except SingleNodeExplanation:
            return target, None
        if len(e.relations) <= 1:  # single-edge explanations are filtered
            return target, None
        return target, e

    workers = worker_count()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            explained = list(pool.map(explain_target, candidates))
    else:
        explained = [explain_target(t) for t in candidates]
    explanations = {t: e for (t, e) in explained if e is not None}
    bundle.targets = sorted(explanations)
    if not explanations:
        raise PipelineStageError("explain", RuntimeError("no eligible target survived filtering"),
                                 partial=bundle)

    need_bp = "bp" in cfg.scorers
    ladder = None
    if need_bp:
        rcfg = replace(cfg.rank_search, seed=derived_seed(cfg.seed, 4))
        ladder = stage("cres", rank_ladder, adjacency(g), g.edge_count, rcfg)

        def bp_target(target: int):
            ecfg = replace(cfg.explain, seed=derived_seed(cfg.seed, 3, target))
            try:
                report = _bp_ranking_for_target(g, model, target, ecfg, rcfg,
                                                cfg.bp, ladder, cfg.learn_rate,
                                                cfg.learn_epochs)
                return target, report
            except (EmptyCreSet, CreGenerationFailed) as exc:
                bundle.warnings.append(f"target {target}: {exc}")
                return target, None

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                scored = list(pool.map(bp_target, sorted(explanations)))
        else:
            scored = [bp_target(t) for t in sorted(explanations)]
        bundle.reports = {t: r for (t, r) in scored if r is not None}
        if not bundle.reports:
            raise PipelineStageError(
                "scores", RuntimeError("BP scoring failed for every target"),
                partial=bundle)

    rankings_by_scorer: dict[str, dict[int, list[tuple[Edge, float]]]] = {}
    if need_bp:
        rankings_by_scorer["bp"] = {t: r.ranking() for t, r in bundle.reports.items()}
    if "is" in cfg.scorers:
        targets = bundle.reports.keys() if need_bp else explanations.keys()
        rankings_by_scorer["is"] = {
            t: sorted(is_scores(explanations[t]).items(), key=lambda kv: (-kv[1], kv[0]))
            for t in targets
        }
    bundle.rankings = rankings_by_scorer

    test_nodes = np.asarray(split.test)
    classes = [c for c in range(g.class_count)
               if not (cfg.dataset.synthetic and c == 0)]
    for scorer in cfg.scorers:
        rankings = rankings_by_scorer[scorer]
        for i in range(1, cfg.g_max + 1):
            selected = select_removal_edges(rankings, i)
            g_reduced, _ = remove_edges(g, selected)
            bundle.removed_counts[f"{scorer}/{i}"] = len(selected & g.edges)
            model_i = stage(f"retrain[{scorer}/{i}]", train_gcn, g_reduced,
                            split, train_cfg)
            pred_i = predict(model_i, g_reduced)
            for cls in classes:
                cls_nodes = test_nodes[g.labels[test_nodes] == cls]
                if cls_nodes.size < cfg.min_class_count:
                    continue
                res = mcnemar_test(base_pred, pred_i, g.labels, cls_nodes,
                                   class_id=cls)
                bundle.results.append({
                    "scorer": scorer, "i": i, "class": cls,
                    "b": res.b, "c": res.c,
                    "statistic": res.statistic, "p_value": res.p_value,
                    "reported_statistic": res.reported_statistic,
                })

    if set(cfg.scorers) == {"bp", "is"}:
        for msg in edge_count_warnings(bundle.removed_counts, cfg.g_max):
            bundle.warnings.append(msg)
            log.warning(msg)
    return bundle


def edge_count_warnings(removed_counts: Mapping[str, int], g_max: int,
                        tolerance: float = 0.10) -> list[str]:
    """Comparing scorers is only meaningful when they remove roughly the
    same number of edges; flag removal depths where BP and IS diverge."""
    warnings = []
    for i in range(1, g_max + 1):
        n_bp = removed_counts.get(f"bp/{i}")
        n_is = removed_counts.get(f"is/{i}")
        if n_bp is None or n_is is None:
            continue
        top = max(n_bp, n_is)
        if top > 0 and abs(n_bp - n_is) / top > tolerance:
            warnings.append(f"removed-edge counts diverge at i={i}: "
                            f"bp={n_bp} is={n_is} (>{tolerance:.0%})")
    return warnings


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

RESULT_COLUMNS = ("scorer", "i", "class", "b", "c", "statistic", "p_value",
                  "reported_statistic")


def _fmt(value) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def emit_report(bundle: VerificationBundle, out_dir: str | Path) -> list[Path]:
    """Write results.csv, per-target uncertainty CSVs, plotdata.csv and
    bundle.json.  File contents are deterministic for a fixed bundle."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    rows = sorted(bundle.results,
                  key=lambda r: (r["scorer"], r["i"], r["class"]))
    results_path = out / "results.csv"
    lines = [",".join(RESULT_COLUMNS)]
    lines.extend(",".join(_fmt(r[c]) for c in RESULT_COLUMNS) for r in rows)
    results_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    written.append(results_path)

    for target in sorted(bundle.reports):
        path = out / f"uncertainty_t{target}.csv"
        report_to_csv(bundle.reports[target], path)
        written.append(path)

    plot_path = out / "plotdata.csv"
    plines = ["class,i,scorer,reported_statistic"]
    plines.extend(f"{r['class']},{r['i']},{r['scorer']},{_fmt(r['reported_statistic'])}"
                  for r in sorted(bundle.results,
                                  key=lambda r: (r["class"], r["i"], r["scorer"])))
    plot_path.write_text("\n".join(plines) + "\n", encoding="utf-8")
    written.append(plot_path)

    bundle_path = out / "bundle.json"
    bundle_path.write_text(json.dumps(bundle_to_dict(bundle)), encoding="utf-8")
    written.append(bundle_path)
    return written


def bundle_to_dict(bundle: VerificationBundle) -> dict:
    return {
        "dataset": bundle.dataset,
        "seed": bundle.seed,
        "targets": bundle.targets,
        "base_predictions": bundle.base_predictions,
        "results": sorted(bundle.results,
                          key=lambda r: (r["scorer"], r["i"], r["class"])),
        "removed_counts": dict(sorted(bundle.removed_counts.items())),
        "warnings": bundle.warnings,
        "rankings": {scorer: {str(t): [[u, v, s] for ((u, v), s) in ranking]
                              for t, ranking in sorted(per.items())}
                     for scorer, per in sorted(bundle.rankings.items())},
    }


def bundle_from_dict(blob: dict) -> VerificationBundle:
    rankings = {
        scorer: {int(t): [((int(u), int(v)), float(s)) for (u, v, s) in ranking]
                 for t, ranking in per.items()}
        for scorer, per in blob.get("rankings", {}).items()
    }
    return VerificationBundle(
        dataset=blob["dataset"], seed=int(blob["seed"]),
        targets=[int(t) for t in blob.get("targets", [])],
        base_predictions=[int(p) for p in blob.get("base_predictions", [])],
        results=list(blob.get("results", [])),
        removed_counts=dict(blob.get("removed_counts", {})),
        warnings=list(blob.get("warnings", [])),
        rankings=rankings,
    )
