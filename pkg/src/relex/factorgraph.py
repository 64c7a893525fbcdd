"""Factor graph over counterfactual explanations.

One binary variable per entity that appears in any explanation relation,
plus one target variable T (two states for binary classification, C states
otherwise).  Each relation (u, v) carries clause-style factors over
(x_u, x_v, T) whose potential is exp(weight) on the satisfying assignment
and 1 elsewhere; a binary target yields one factor per relation
(satisfying state 1), a C-class target yields C parallel factors.

Weights are learned by a voted-perceptron-style rule: the gradient of the
log-likelihood is approximated by replacing the intractable expected
clause count with a count under the current MAP assignment.  Calibration
runs damped sum-product message passing on a flooding schedule; the
uncertainty of an explained relation is the drop in the clause-satisfying
joint belief after factors encoding the explanation are injected.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from relex.boolfact import CreSet, EmptyCreSet
from relex.explainer import Explanation
from relex.graphs import Edge

TARGET = -1  # variable id of the target node T


@dataclass
class Factor:
    u: int
    v: int
    target_state: int
    weight: float
    kind: str  # "learned" | "injected"

    @property
    def relation(self) -> Edge:
        return (self.u, self.v)

    def potential(self, target_card: int) -> np.ndarray:
        tab = np.ones((2, 2, target_card))
        tab[1, 1, self.target_state] = math.exp(self.weight)
        return tab


@dataclass
class FactorGraph:
    entities: tuple[int, ...]      # sorted entity variable ids
    target_card: int               # 2 for binary targets, C otherwise
    factors: list[Factor]

    def __post_init__(self):
        if self.target_card < 2:
            raise ValueError("target_card must be >= 2")
        ents = set(self.entities)
        for f in self.factors:
            if f.u not in ents or f.v not in ents:
                raise ValueError(f"factor scope ({f.u}, {f.v}) outside entity set")

    @property
    def variables(self) -> list[int]:
        return list(self.entities) + [TARGET]

    def card(self, var: int) -> int:
        return self.target_card if var == TARGET else 2

    def learned_factors(self, relation: Edge) -> list[int]:
        return [i for i, f in enumerate(self.factors)
                if f.kind == "learned" and f.relation == relation]

    def neighbor_map(self) -> dict[int, list[tuple[int, int]]]:
        """var -> [(factor index, scope slot)] in deterministic order."""
        nbrs: dict[int, list[tuple[int, int]]] = {v: [] for v in self.variables}
        for fid, f in enumerate(self.factors):
            nbrs[f.u].append((fid, 0))
            nbrs[f.v].append((fid, 1))
            nbrs[TARGET].append((fid, 2))
        return nbrs


def build_factor_graph(s: CreSet) -> FactorGraph:
    """Variables and zero-weight learned factors for a CRE set."""
    if not s.explanations:
        raise EmptyCreSet("cannot build a factor graph from an empty CRE set")
    entities = tuple(sorted({node for (u, v) in s.relation_index for node in (u, v)}))
    target_card = max(2, s.class_count)
    factors: list[Factor] = []
    for (u, v) in s.relations:
        if s.class_count <= 2:
            factors.append(Factor(u=u, v=v, target_state=1, weight=0.0, kind="learned"))
        else:
            for c in range(s.class_count):
                factors.append(Factor(u=u, v=v, target_state=c, weight=0.0, kind="learned"))
    return FactorGraph(entities=entities, target_card=target_card, factors=factors)


def count_true_clauses(fg: FactorGraph, s: CreSet, relation: Edge) -> int:
    """Number of explanations in the CRE set containing the relation."""
    if relation not in s.relation_index:
        raise KeyError(f"unknown relation {relation}")
    return sum(1 for e in s.explanations if relation in e.edges())


# ---------------------------------------------------------------------------
# MAP inference
# ---------------------------------------------------------------------------

def _clause_satisfied(f: Factor, assignment: dict[int, int]) -> bool:
    return (assignment[f.u] == 1 and assignment[f.v] == 1
            and assignment[TARGET] == f.target_state)


def _map_exhaustive(fg: FactorGraph) -> dict[int, int]:
    variables = fg.variables
    cards = [fg.card(v) for v in variables]
    best = None
    best_score = -math.inf
    for combo in itertools.product(*(range(c) for c in cards)):
        assignment = dict(zip(variables, combo))
        score = sum(f.weight for f in fg.factors
                    if assignment[f.u] == 1 and assignment[f.v] == 1
                    and assignment[TARGET] == f.target_state)
        if score > best_score:  # strict: keeps the lexicographically-lowest tie
            best_score = score
            best = assignment
    return best


def _map_max_product(fg: FactorGraph, bp: "BpConfig | None" = None) -> dict[int, int]:
    state = run_bp(fg, bp or BpConfig(), mode="max")
    decoded: dict[int, int] = {}
    for var in fg.variables:
        belief = np.ones(state.cards[var])
        for cid, cluster in enumerate(state.clusters):
            for slot, v in enumerate(cluster.scope):
                if v == var:
                    belief = belief * state.mu[cid][slot]
        decoded[var] = int(belief.argmax())  # argmax takes the lowest index on ties
    return decoded


def map_assignment(fg: FactorGraph, bp: "BpConfig | None" = None) -> dict[int, int]:
    """Most probable assignment; exhaustive up to 20 variables, then
    max-product message passing.  Ties break toward the all-zeros side."""
    if len(fg.variables) <= 20:
        return _map_exhaustive(fg)
    return _map_max_product(fg, bp)


# ---------------------------------------------------------------------------
# Weight learning
# ---------------------------------------------------------------------------

def learn_weights(fg: FactorGraph, s: CreSet, learning_rate: float = 0.02,
                  epochs: int = 30, ascend: bool = True) -> FactorGraph:
    """MAP-approximate likelihood gradient steps on the relation weights.

    Weights start at the mean explainer confidence of each relation over
    the explanations containing it.  Per epoch, the expected clause count
    is |S| times an indicator of the relation's clause holding under the
    current MAP assignment; the gradient is (observed - expected).  With
    ascend=True (default) weights move up the likelihood gradient; the
    flag flips the sign for the literal descending update.  Weights are
    shared across a relation's parallel class factors and clipped to
    [-10, 10].
    """
    if learning_rate < 0:
        raise ValueError("learning_rate must be >= 0")
    n_expl = len(s.explanations)
    relations = s.relations
    weights: dict[Edge, float] = {}
    observed: dict[Edge, int] = {}
    for rel in relations:
        gcs = [e.confidence(rel) for e in s.explanations if rel in e.edges()]
        weights[rel] = float(np.mean(gcs))
        observed[rel] = len(gcs)

    def with_weights(w: dict[Edge, float]) -> FactorGraph:
        factors = [replace(f, weight=w[f.relation]) if f.kind == "learned" else replace(f)
                   for f in fg.factors]
        return FactorGraph(entities=fg.entities, target_card=fg.target_card,
                           factors=factors)

    current = with_weights(weights)
    for _ in range(epochs):
        assignment = map_assignment(current)
        moved = False
        for rel in relations:
            sat = any(_clause_satisfied(current.factors[i], assignment)
                      for i in current.learned_factors(rel))
            grad = observed[rel] - n_expl * (1 if sat else 0)
            step = learning_rate * grad if ascend else -learning_rate * grad
            if step != 0.0:
                moved = True
            weights[rel] = float(np.clip(weights[rel] + step, -10.0, 10.0))
        current = with_weights(weights)
        if not moved:
            break
    return current


# ---------------------------------------------------------------------------
# Sum-product / max-product message passing
# ---------------------------------------------------------------------------

@dataclass
class BpConfig:
    max_iters: int = 200
    tol: float = 1e-6
    damping: float = 0.5

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not (0.0 <= self.damping < 1.0):
            raise ValueError("damping must be in [0, 1)")


# The message-passing engine works on "clusters": factor nodes with an
# arbitrary scope and potential table.  Factors sharing an identical scope
# (a relation's parallel class clauses, or an injected twin of a learned
# clause) are merged into one cluster by multiplying their potentials --
# the joint distribution is unchanged and the message graph has fewer
# cycles, so e.g. injecting onto a single-factor graph stays exact.

@dataclass
class Cluster:
    scope: tuple[int, ...]
    table: np.ndarray


@dataclass
class MessageState:
    clusters: list[Cluster]
    factor_cluster: dict[int, int]       # factor index -> cluster index
    cards: dict[int, int]
    nu: list[list[np.ndarray]]           # [cluster][slot] variable -> factor
    mu: list[list[np.ndarray]]           # [cluster][slot] factor -> variable
    iterations: int
    converged: bool
    residual: float


def _cluster_message(table: np.ndarray, messages: list[np.ndarray], slot: int,
                     mode: str) -> np.ndarray:
    prod = table
    for j, m in enumerate(messages):
        if j != slot:
            shape = [1] * table.ndim
            shape[j] = m.shape[0]
            prod = prod * m.reshape(shape)
    axes = tuple(j for j in range(table.ndim) if j != slot)
    return prod.sum(axis=axes) if mode == "sum" else prod.max(axis=axes)


def propagate(cards: dict[int, int], clusters: list[Cluster],
              cfg: BpConfig | None = None, mode: str = "sum"):
    """Damped flooding-schedule message passing on a cluster graph.

    Every iteration refreshes all variable-to-factor messages, then all
    factor-to-variable messages, in a fixed deterministic order; each
    message is normalized and damped (new = (1 - damping) * computed +
    damping * old).  Convergence is a max-norm residual below tol;
    non-convergence is reported, not raised.  Returns (nu, mu, iterations,
    converged, residual).
    """
    cfg = cfg or BpConfig()
    nbrs: dict[int, list[tuple[int, int]]] = {v: [] for v in cards}
    for cid, cluster in enumerate(clusters):
        for slot, var in enumerate(cluster.scope):
            nbrs[var].append((cid, slot))
    nu = [[np.full(cards[v], 1.0 / cards[v]) for v in c.scope] for c in clusters]
    mu = [[np.full(cards[v], 1.0 / cards[v]) for v in c.scope] for c in clusters]

    iterations = 0
    residual = math.inf
    converged = False
    for iterations in range(1, cfg.max_iters + 1):
        residual = 0.0
        for var in sorted(cards):
            incoming = nbrs[var]
            for (cid, slot) in incoming:
                msg = np.ones(cards[var])
                for (ocid, oslot) in incoming:
                    if ocid != cid or oslot != slot:
                        msg = msg * mu[ocid][oslot]
                msg = msg / msg.sum()
                new = (1.0 - cfg.damping) * msg + cfg.damping * nu[cid][slot]
                residual = max(residual, float(np.abs(new - nu[cid][slot]).max()))
                nu[cid][slot] = new
        for cid, cluster in enumerate(clusters):
            for slot in range(len(cluster.scope)):
                msg = _cluster_message(cluster.table, nu[cid], slot, mode)
                msg = msg / msg.sum()
                new = (1.0 - cfg.damping) * msg + cfg.damping * mu[cid][slot]
                residual = max(residual, float(np.abs(new - mu[cid][slot]).max()))
                mu[cid][slot] = new
        if residual < cfg.tol:
            converged = True
            break
    return nu, mu, iterations, converged, residual


def _build_clusters(fg: FactorGraph) -> tuple[list[Cluster], dict[int, int]]:
    order: list[tuple[int, int]] = []
    grouped: dict[tuple[int, int], list[int]] = {}
    for fid, f in enumerate(fg.factors):
        key = (f.u, f.v)
        if key not in grouped:
            grouped[key] = []
            order.append(key)
        grouped[key].append(fid)
    clusters: list[Cluster] = []
    factor_cluster: dict[int, int] = {}
    for cid, key in enumerate(order):
        table = np.ones((2, 2, fg.target_card))
        for fid in grouped[key]:
            table *= fg.factors[fid].potential(fg.target_card)
            factor_cluster[fid] = cid
        clusters.append(Cluster(scope=(key[0], key[1], TARGET), table=table))
    return clusters, factor_cluster


def run_bp(fg: FactorGraph, cfg: BpConfig | None = None,
           mode: str = "sum") -> MessageState:
    """Calibrate the factor graph; see propagate for the schedule."""
    cards = {v: fg.card(v) for v in fg.variables}
    clusters, factor_cluster = _build_clusters(fg)
    nu, mu, iterations, converged, residual = propagate(cards, clusters, cfg, mode)
    return MessageState(clusters=clusters, factor_cluster=factor_cluster,
                        cards=cards, nu=nu, mu=mu, iterations=iterations,
                        converged=converged, residual=residual)


def marginal(fg: FactorGraph, ms: MessageState, var: int) -> np.ndarray:
    """Normalized product of converged factor-to-variable messages."""
    if var not in ms.cards:
        raise KeyError(f"unknown variable {var}")
    belief = np.ones(ms.cards[var])
    for cid, cluster in enumerate(ms.clusters):
        for slot, v in enumerate(cluster.scope):
            if v == var:
                belief = belief * ms.mu[cid][slot]
    return belief / belief.sum()


@dataclass
class JointTable:
    factor_id: int
    table: np.ndarray  # (2, 2, target_card), sums to 1

    def pair_marginal(self) -> np.ndarray:
        return self.table.sum(axis=2)


def joint_distribution(fg: FactorGraph, ms: MessageState, fid: int) -> JointTable:
    """Scope belief at a factor: all potentials sharing the factor's scope
    times the incoming variable messages, normalized."""
    if fid not in ms.factor_cluster:
        raise KeyError(f"unknown factor {fid}")
    cid = ms.factor_cluster[fid]
    cluster = ms.clusters[cid]
    belief = cluster.table
    for slot, m in enumerate(ms.nu[cid]):
        shape = [1] * belief.ndim
        shape[slot] = m.shape[0]
        belief = belief * m.reshape(shape)
    return JointTable(factor_id=fid, table=belief / belief.sum())


# ---------------------------------------------------------------------------
# Explanation injection and uncertainty
# ---------------------------------------------------------------------------

_MIN_CONFIDENCE = 1e-9


def inject_explanation_factors(fg: FactorGraph,
                               e: Explanation) -> tuple[FactorGraph, list[Edge]]:
    """Add one factor per explanation relation with known endpoints.

    The injected potential equals the explainer confidence GC on the
    satisfying assignment (weight log(GC) <= 0), so injection questions
    the relation in proportion to how unconfident the explainer was:
    GC = 1 is an identity factor and leaves the calibration unchanged.
    Relations with endpoints outside the entity set are returned as
    skipped.  The original graph is not modified.
    """
    ents = set(fg.entities)
    factors = [replace(f) for f in fg.factors]
    skipped: list[Edge] = []
    for (edge, gc) in e.relations:
        u, v = edge
        if u not in ents or v not in ents:
            skipped.append(edge)
            continue
        state = e.predicted_class if fg.target_card > 2 else 1
        weight = math.log(max(gc, _MIN_CONFIDENCE))
        factors.append(Factor(u=u, v=v, target_state=state, weight=weight,
                              kind="injected"))
    return FactorGraph(entities=fg.entities, target_card=fg.target_card,
                       factors=factors), skipped


@dataclass
class RelationUncertainty:
    edge: Edge
    gc: float
    delta: float
    neg_log_delta: float


@dataclass
class UncertaintyReport:
    """Per-relation drop in clause-satisfying belief after injection.

    delta is the raw drop p - p_hat; the removal score is the
    uncertainty-reduction measure -log|delta| (a higher score means lower
    uncertainty that the relation is part of the explanation, so relations
    whose beliefs barely move under the injected confidence rank first).
    """

    target: int
    entries: list[RelationUncertainty]
    converged: bool
    skipped: list[Edge] = field(default_factory=list)

    def ranked(self) -> list[RelationUncertainty]:
        """Descending by the neg-log score; ties break on (u, v) order."""
        return sorted(self.entries, key=lambda r: (-r.neg_log_delta, r.edge))

    def ranking(self) -> list[tuple[Edge, float]]:
        return [(r.edge, r.neg_log_delta) for r in self.ranked()]


def _satisfying_beliefs(fg: FactorGraph, ms: MessageState,
                        relation: Edge, fids: list[int]) -> list[float]:
    out = []
    for fid in fids:
        f = fg.factors[fid]
        table = joint_distribution(fg, ms, fid).table
        out.append(float(table[1, 1, f.target_state]))
    return out


def quantify_uncertainty(fg: FactorGraph, e: Explanation,
                         bp: BpConfig | None = None) -> UncertaintyReport:
    """Calibrate, inject the explanation, re-calibrate and report deltas.

    delta for a relation is the mean over its clause factors of the
    satisfying-assignment belief before injection minus after.  Beliefs
    are read from the relation's learned factors when it has them and
    from its injected factor otherwise; the "before" run carries the
    injected scopes at weight zero (identity factors do not perturb
    message passing, they only expose the joint).  neg_log_delta is
    -log|delta| with delta = 0 mapped to +inf.
    """
    bp = bp or BpConfig()
    zero = Explanation(target=e.target, predicted_class=e.predicted_class,
                       relations=tuple((edge, 1.0) for (edge, _) in e.relations),
                       hop_radius=e.hop_radius)
    fg_pre, skipped = inject_explanation_factors(fg, zero)
    fg_post, _ = inject_explanation_factors(fg, e)
    ms_pre = run_bp(fg_pre, bp)
    ms_post = run_bp(fg_post, bp)

    n_learned = len(fg.factors)
    injected_by_relation: dict[Edge, int] = {}
    for fid in range(n_learned, len(fg_pre.factors)):
        injected_by_relation[fg_pre.factors[fid].relation] = fid

    entries: list[RelationUncertainty] = []
    for (edge, gc) in e.relations:
        if edge in skipped:
            continue
        fids = fg.learned_factors(edge) or [injected_by_relation[edge]]
        before = _satisfying_beliefs(fg_pre, ms_pre, edge, fids)
        after = _satisfying_beliefs(fg_post, ms_post, edge, fids)
        delta = float(np.mean(before) - np.mean(after))
        neg_log = math.inf if delta == 0.0 else -math.log(abs(delta))
        entries.append(RelationUncertainty(edge=edge, gc=gc, delta=delta,
                                           neg_log_delta=neg_log))
    return UncertaintyReport(target=e.target, entries=entries,
                             converged=ms_pre.converged and ms_post.converged,
                             skipped=skipped)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def factorgraph_to_dict(fg: FactorGraph) -> dict:
    return {
        "entities": list(fg.entities),
        "target_card": fg.target_card,
        "factors": [{"u": f.u, "v": f.v, "t": f.target_state,
                     "weight": f.weight, "kind": f.kind} for f in fg.factors],
    }


def factorgraph_from_dict(blob: dict) -> FactorGraph:
    factors = [Factor(u=int(f["u"]), v=int(f["v"]), target_state=int(f["t"]),
                      weight=float(f["weight"]), kind=str(f["kind"]))
               for f in blob["factors"]]
    return FactorGraph(entities=tuple(int(x) for x in blob["entities"]),
                       target_card=int(blob["target_card"]), factors=factors)


def save_factorgraph(fg: FactorGraph, path: str | Path) -> None:
    Path(path).write_text(json.dumps(factorgraph_to_dict(fg)), encoding="utf-8")


def load_factorgraph(path: str | Path) -> FactorGraph:
    return factorgraph_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def report_to_csv(report: UncertaintyReport, path: str | Path) -> None:
    lines = ["u,v,gc,delta,neg_log_delta,converged"]
    for r in report.entries:
        lines.append(f"{r.edge[0]},{r.edge[1]},{r.gc!r},{r.delta!r},"
                     f"{r.neg_log_delta!r},{report.converged}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
