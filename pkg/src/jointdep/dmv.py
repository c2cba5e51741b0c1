"""Valence-based generative dependency grammar with structural biases.

Implements the parameter tables (root / attach / stop), exact chart
inside-outside over split-head items, EM training, hard-count re-estimation,
and price-aware constrained Viterbi decoding.  Two structural biases are
supported: a hard cap on center-embedding depth (tracked as extra chart
state) and a soft per-arc length penalty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import Corpus, DepTree, Sentence, arc_matrix

LEFT, RIGHT = 0, 1
NO_CHILD, HAS_CHILD = 0, 1
NEG_INF = float("-inf")

_LOG_FMT = "%.17e"


class InfeasibleParseError(RuntimeError):
    """No parse tree satisfies the active structural constraints."""


@dataclass(frozen=True)
class ConstraintConfig:
    """Structural-bias settings for the generative model.

    max_ce_depth: hard cap on center-embedding depth; None disables the cap.
    dep_len_beta: weight of the soft per-arc length penalty exp(-beta*(len-1));
        root arcs are never penalized.
    """

    max_ce_depth: int | None = 1
    dep_len_beta: float = 0.1

    def __post_init__(self):
        if self.max_ce_depth is not None and self.max_ce_depth < 0:
            raise ValueError("max_ce_depth must be >= 0 or None")
        if not (self.dep_len_beta >= 0.0 and math.isfinite(self.dep_len_beta)):
            raise ValueError("dep_len_beta must be finite and >= 0")


UNCONSTRAINED = ConstraintConfig(max_ce_depth=None, dep_len_beta=0.0)


class _WeightIndex:
    """Flat indexing of all log-weights used by the charts.

    Layout: root probs (V), attach probs (2*V*V), stop probs (4*V),
    continue probs (4*V).  Stop and continue are indexed separately so that
    expected counts for both outcomes of the stop decision come back from a
    single gradient-style accumulation.
    """

    def __init__(self, V: int):
        self.V = V
        self.attach_off = V
        self.stop_off = V + 2 * V * V
        self.cont_off = self.stop_off + 4 * V
        self.size = self.cont_off + 4 * V

    def root(self, p: int) -> int:
        return p

    def attach(self, h: int, direction: int, c: int) -> int:
        return self.attach_off + (h * 2 + direction) * self.V + c

    def stop(self, h: int, direction: int, adj: int) -> int:
        return self.stop_off + (h * 2 + direction) * 2 + adj

    def cont(self, h: int, direction: int, adj: int) -> int:
        return self.cont_off + (h * 2 + direction) * 2 + adj


@dataclass
class DmvParams:
    """Rule probabilities: root choice, directional attachment, stop decisions.

    attach[h, dir, c] is the probability that head tag h generates child tag c
    in direction dir; stop[h, dir, adj] is the probability of stopping, where
    adj is 0 before the first child in that direction and 1 afterwards.
    """

    vocab: tuple[str, ...]
    root: np.ndarray          # (V,)
    attach: np.ndarray        # (V, 2, V)
    stop: np.ndarray          # (V, 2, 2)
    _tag_index: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self._tag_index = {t: i for i, t in enumerate(self.vocab)}

    @property
    def V(self) -> int:
        return len(self.vocab)

    def tag_ids(self, sentence: Sentence) -> tuple[int, ...]:
        try:
            return tuple(self._tag_index[t] for t in sentence.upos)
        except KeyError as exc:
            raise KeyError(f"UPOS tag {exc.args[0]!r} not in model vocabulary")

    def validate(self, tol: float = 1e-12) -> None:
        if not math.isclose(self.root.sum(), 1.0, abs_tol=tol):
            raise ValueError(f"root distribution sums to {self.root.sum()!r}")
        sums = self.attach.sum(axis=2)
        if not np.allclose(sums, 1.0, atol=tol, rtol=0.0):
            raise ValueError("attach distributions do not sum to one")
        if np.any(self.stop < -tol) or np.any(self.stop > 1.0 + tol):
            raise ValueError("stop probabilities outside [0, 1]")

    def log_weights(self) -> np.ndarray:
        wi = _WeightIndex(self.V)
        w = np.empty(wi.size)
        with np.errstate(divide="ignore"):
            w[: wi.attach_off] = np.log(self.root)
            w[wi.attach_off : wi.stop_off] = np.log(self.attach).reshape(-1)
            w[wi.stop_off : wi.cont_off] = np.log(self.stop).reshape(-1)
            w[wi.cont_off :] = np.log(1.0 - self.stop).reshape(-1)
        return w

    # -- plain-text serialization (version-headed, 17 significant digits) --

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            f.write("dmvparams 1\n")
            f.write("vocab " + " ".join(self.vocab) + "\n")
            for p, tag in enumerate(self.vocab):
                f.write(f"root {tag} " + _LOG_FMT % self.root[p] + "\n")
            for h, ht in enumerate(self.vocab):
                for d, dname in ((LEFT, "left"), (RIGHT, "right")):
                    for c, ct in enumerate(self.vocab):
                        f.write(
                            f"attach {ht} {dname} {ct} "
                            + _LOG_FMT % self.attach[h, d, c] + "\n"
                        )
                    for adj in (NO_CHILD, HAS_CHILD):
                        f.write(
                            f"stop {ht} {dname} {adj} "
                            + _LOG_FMT % self.stop[h, d, adj] + "\n"
                        )

    @classmethod
    def load(cls, path) -> "DmvParams":
        with open(path, encoding="utf-8") as f:
            header = f.readline().split()
            if header[:2] != ["dmvparams", "1"]:
                raise ValueError(f"unrecognized model header {header!r}")
            vocab_line = f.readline().split()
            if vocab_line[0] != "vocab":
                raise ValueError("missing vocab line")
            vocab = tuple(vocab_line[1:])
            idx = {t: i for i, t in enumerate(vocab)}
            dir_idx = {"left": LEFT, "right": RIGHT}
            V = len(vocab)
            root = np.zeros(V)
            attach = np.zeros((V, 2, V))
            stop = np.zeros((V, 2, 2))
            for line in f:
                parts = line.split()
                if not parts:
                    continue
                if parts[0] == "root":
                    root[idx[parts[1]]] = float(parts[2])
                elif parts[0] == "attach":
                    attach[idx[parts[1]], dir_idx[parts[2]], idx[parts[3]]] = float(
                        parts[4]
                    )
                elif parts[0] == "stop":
                    stop[idx[parts[1]], dir_idx[parts[2]], int(parts[3])] = float(
                        parts[4]
                    )
                else:
                    raise ValueError(f"unrecognized record {parts[0]!r}")
            return cls(vocab, root, attach, stop)


# ---------------------------------------------------------------------------
# Initialization
# ---------------------------------------------------------------------------

def init_params(c: Corpus, mode: str = "harmonic", seed: int = 0) -> DmvParams:
    """Uniform or harmonic (short-arc-biased) initializer.

    The initializers are fully deterministic; the seed is accepted for
    interface stability and reserved for future randomized schemes.
    """
    del seed
    vocab = c.pos_vocab
    V = len(vocab)
    if V == 0:
        raise ValueError("corpus has an empty POS vocabulary")
    idx = {t: i for i, t in enumerate(vocab)}
    if mode == "uniform":
        root = np.full(V, 1.0 / V)
        attach = np.full((V, 2, V), 1.0 / V)
    elif mode == "harmonic":
        root = np.zeros(V)
        attach = np.zeros((V, 2, V))
        for sent in c:
            ids = [idx[t] for t in sent.upos]
            for i, hi_tag in enumerate(ids):
                root[hi_tag] += 1.0 / sent.n
                for j, dj_tag in enumerate(ids):
                    if i == j:
                        continue
                    direction = LEFT if j < i else RIGHT
                    attach[hi_tag, direction, dj_tag] += 1.0 / (abs(i - j) + 1.0)
        # Smooth so every event keeps support, then normalize.
        root += 1.0
        attach += 1.0
        root /= root.sum()
        attach /= attach.sum(axis=2, keepdims=True)
    else:
        raise ValueError(f"unknown init mode {mode!r}")
    stop = np.full((V, 2, 2), 0.5)
    return DmvParams(vocab, root, attach, stop)


# ---------------------------------------------------------------------------
# Chart construction.
#
# Split-head items over 1-based token positions:
#   LO[h][i]  h's left children cover [i, h-1], direction still open
#   LC[h][i]  as LO but the left stop decision has been applied
#   IL[c][h]  h has attached left child c; covers [c, h] minus c's left half
# and mirrored RO / RC / IR items.  The goal combines both closed halves of
# the single root-attached head.
#
# Center-embedding depth is threaded through the items as a pair (s, p):
# s is the settled maximum over children that already have an outer sibling
# (each such child's subtree value counts +1), and p is the subtree value of
# the currently outermost child (it gains +1 only if a further child is
# attached).  p = -1 encodes "no child yet".  Closed halves carry the
# resolved value v = max(s, p, 0); a full subtree's value is the max of its
# two halves.  Items whose settled value exceeds the cap are pruned.
# ---------------------------------------------------------------------------

_LO, _LC, _RO, _RC, _IL, _IR, _GOAL = range(7)


class _Chart:
    __slots__ = ("n", "node_edges", "goal")

    def __init__(self, n: int, node_edges, goal: int):
        self.n = n
        self.node_edges = node_edges
        self.goal = goal


def _build_chart(pos: tuple[int, ...], V: int, cap: int | None) -> _Chart:
    n = len(pos)
    wi = _WeightIndex(V)
    node_edges: list[list[tuple]] = []
    index: dict[tuple, int] = {}
    # States present per (kind, a, b) cell, in creation order.
    cell_states: dict[tuple, list[tuple]] = {}

    def get_or_create(key):
        nid = index.get(key)
        if nid is None:
            nid = len(node_edges)
            index[key] = nid
            node_edges.append([])
            cell_states.setdefault(key[:3], []).append(key[3:])
        return nid

    def add_edge(head_key, tail_keys, wrefs, arc=None):
        tails = []
        for k in tail_keys:
            t = index.get(k)
            if t is None:
                return
            tails.append(t)
        nid = get_or_create(head_key)
        node_edges[nid].append((tuple(tails), wrefs, arc))

    def attach_settled(s, p):
        if cap is None:
            return 0
        s2 = max(s, p + 1)
        return None if s2 > cap else s2

    def child_val(vl, vr):
        if cap is None:
            return 0
        v = max(vl, vr)
        return None if v > cap else v

    def close_val(s, p):
        return 0 if cap is None else max(s, p, 0)

    # Width-0 axioms and their closed forms.
    for h in range(1, n + 1):
        base_l = (_LO, h, h, 0, -1)
        nid = get_or_create(base_l)
        node_edges[nid].append(((), (), None))
        add_edge((_LC, h, h, 0), (base_l,), (wi.stop(pos[h - 1], LEFT, NO_CHILD),))
        base_r = (_RO, h, h, 0, -1)
        nid = get_or_create(base_r)
        node_edges[nid].append(((), (), None))
        add_edge((_RC, h, h, 0), (base_r,), (wi.stop(pos[h - 1], RIGHT, NO_CHILD),))

    for m in range(1, n):
        # Incomplete items of width m (arc attachments).
        for h in range(1, n + 1):
            c = h - m
            if c >= 1:  # left attachment h -> c
                hp = pos[h - 1]
                att = wi.attach(hp, LEFT, pos[c - 1])
                for k in range(c, h):
                    adj = HAS_CHILD if k + 1 < h else NO_CHILD
                    cont = wi.cont(hp, LEFT, adj)
                    for (vr,) in cell_states.get((_RC, c, k), []):
                        for s, p in cell_states.get((_LO, h, k + 1), []):
                            s2 = attach_settled(s, p)
                            if s2 is None:
                                continue
                            add_edge(
                                (_IL, c, h, s2, vr),
                                ((_RC, c, k, vr), (_LO, h, k + 1, s, p)),
                                (cont, att),
                                (h, c),
                            )
            c = h + m
            if c <= n:  # right attachment h -> c
                hp = pos[h - 1]
                att = wi.attach(hp, RIGHT, pos[c - 1])
                for k in range(h + 1, c + 1):
                    adj = HAS_CHILD if k - 1 > h else NO_CHILD
                    cont = wi.cont(hp, RIGHT, adj)
                    for (vl,) in cell_states.get((_LC, c, k), []):
                        for s, p in cell_states.get((_RO, h, k - 1), []):
                            s2 = attach_settled(s, p)
                            if s2 is None:
                                continue
                            add_edge(
                                (_IR, h, c, s2, vl),
                                ((_LC, c, k, vl), (_RO, h, k - 1, s, p)),
                                (cont, att),
                                (h, c),
                            )
        # Open and closed halves of width m.
        for h in range(1, n + 1):
            i = h - m
            if i >= 1:
                for c in range(i, h):
                    for s2, vr in cell_states.get((_IL, c, h), []):
                        for (vl,) in cell_states.get((_LC, c, i), []):
                            v = child_val(vl, vr)
                            if v is None:
                                continue
                            add_edge(
                                (_LO, h, i, s2, v),
                                ((_IL, c, h, s2, vr), (_LC, c, i, vl)),
                                (),
                            )
                stop_ref = (wi.stop(pos[h - 1], LEFT, HAS_CHILD),)
                for s, p in cell_states.get((_LO, h, i), []):
                    add_edge(
                        (_LC, h, i, close_val(s, p)),
                        ((_LO, h, i, s, p),),
                        stop_ref,
                    )
            j = h + m
            if j <= n:
                for c in range(h + 1, j + 1):
                    for s2, vl in cell_states.get((_IR, h, c), []):
                        for (vr,) in cell_states.get((_RC, c, j), []):
                            v = child_val(vl, vr)
                            if v is None:
                                continue
                            add_edge(
                                (_RO, h, j, s2, v),
                                ((_IR, h, c, s2, vl), (_RC, c, j, vr)),
                                (),
                            )
                stop_ref = (wi.stop(pos[h - 1], RIGHT, HAS_CHILD),)
                for s, p in cell_states.get((_RO, h, j), []):
                    add_edge(
                        (_RC, h, j, close_val(s, p)),
                        ((_RO, h, j, s, p),),
                        stop_ref,
                    )

    goal_key = (_GOAL, 0, 0)
    goal = get_or_create(goal_key + ())
    for c in range(1, n + 1):
        for (vl,) in cell_states.get((_LC, c, 1), []):
            for (vr,) in cell_states.get((_RC, c, n), []):
                add_edge(
                    goal_key,
                    ((_LC, c, 1, vl), (_RC, c, n, vr)),
                    (wi.root(pos[c - 1]),),
                    (0, c),
                )
    return _Chart(n, node_edges, goal)


def _edge_score(edge, wlog, beta, prices):
    tails, wrefs, arc = edge
    w = 0.0
    for r in wrefs:
        w += wlog[r]
    if arc is not None:
        h, d = arc
        if h != 0 and beta:
            w -= beta * (abs(h - d) - 1)
        if prices is not None:
            w -= prices[h, d]
    return w


def _logsumexp(values):
    m = max(values)
    if m == NEG_INF:
        return NEG_INF
    return m + math.log(sum(math.exp(v - m) for v in values))


def _inside(chart: _Chart, wlog, beta, prices=None):
    vals = [NEG_INF] * len(chart.node_edges)
    for nid, edges in enumerate(chart.node_edges):
        terms = []
        for e in edges:
            s = _edge_score(e, wlog, beta, prices)
            for t in e[0]:
                s += vals[t]
            terms.append(s)
        if terms:
            vals[nid] = _logsumexp(terms)
    return vals


def _viterbi(chart: _Chart, wlog, beta, prices=None):
    vals = [NEG_INF] * len(chart.node_edges)
    best = [None] * len(chart.node_edges)
    for nid, edges in enumerate(chart.node_edges):
        b = NEG_INF
        be = None
        for e in edges:
            s = _edge_score(e, wlog, beta, prices)
            for t in e[0]:
                s += vals[t]
            if s > b:  # strict: ties keep the earliest-built derivation
                b = s
                be = e
        vals[nid] = b
        best[nid] = be
    if vals[chart.goal] == NEG_INF:
        raise InfeasibleParseError(
            "no parse satisfies the active structural constraints"
        )
    heads = [-1] * chart.n
    stack = [chart.goal]
    while stack:
        e = best[stack.pop()]
        if e is None or not (e[0] or e[2]):
            continue
        if e[2] is not None:
            h, d = e[2]
            heads[d - 1] = h
        stack.extend(e[0])
    return DepTree(tuple(heads)), vals[chart.goal]


def _outside_counts(chart: _Chart, wlog, beta, vals, logz, counts):
    """Accumulate expected rule counts into `counts` (posterior mass)."""
    out = [NEG_INF] * len(chart.node_edges)
    out[chart.goal] = 0.0
    for nid in range(len(chart.node_edges) - 1, -1, -1):
        o = out[nid]
        if o == NEG_INF:
            continue
        for e in chart.node_edges[nid]:
            s_full = _edge_score(e, wlog, beta, None)
            for t in e[0]:
                s_full += vals[t]
            if s_full == NEG_INF:
                continue
            post = math.exp(o + s_full - logz)
            for r in e[1]:
                counts[r] += post
            for t in e[0]:
                c = o + s_full - vals[t]
                out[t] = c if out[t] == NEG_INF else np.logaddexp(out[t], c)


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def tree_logprob(
    x: Sentence, y: DepTree, theta: DmvParams, cfg: ConstraintConfig
) -> float:
    """log P(x, y) plus the log constraint factor (soft penalty / hard cap)."""
    if y.n != x.n:
        raise ValueError(f"tree length {y.n} != sentence length {x.n}")
    if cfg.max_ce_depth is not None and ce_depth(y) > cfg.max_ce_depth:
        return NEG_INF
    ids = theta.tag_ids(x)
    children = y.children()
    with np.errstate(divide="ignore"):
        lroot = np.log(theta.root)
        lattach = np.log(theta.attach)
        lstop = np.log(theta.stop)
        lcont = np.log(1.0 - theta.stop)
    lp = lroot[ids[y.root() - 1]]
    for h in range(1, x.n + 1):
        hp = ids[h - 1]
        for direction in (LEFT, RIGHT):
            if direction == LEFT:
                kids = [c for c in children[h] if c < h]
            else:
                kids = [c for c in children[h] if c > h]
            adj = NO_CHILD
            for c in kids:
                lp += lcont[hp, direction, adj] + lattach[hp, direction, ids[c - 1]]
                adj = HAS_CHILD
            lp += lstop[hp, direction, adj]
    if cfg.dep_len_beta:
        for d, h in enumerate(y.heads, start=1):
            if h != 0:
                lp -= cfg.dep_len_beta * (abs(h - d) - 1)
    return lp


def inside_loglik(x: Sentence, theta: DmvParams, cfg: ConstraintConfig) -> float:
    """Log of the constrained marginal: sum over feasible trees of P(x, y)*f."""
    chart = _build_chart(theta.tag_ids(x), theta.V, cfg.max_ce_depth)
    vals = _inside(chart, theta.log_weights(), cfg.dep_len_beta)
    return vals[chart.goal]


def viterbi_decode(
    x: Sentence,
    theta: DmvParams,
    cfg: ConstraintConfig,
    u: np.ndarray | None = None,
    _chart: _Chart | None = None,
) -> tuple[DepTree, float]:
    """Best tree under -tree_logprob(x, y) + u.y; returns (tree, minimum)."""
    chart = _chart or _build_chart(theta.tag_ids(x), theta.V, cfg.max_ce_depth)
    prices = arc_matrix(u, x.n) if u is not None and u.ndim == 1 else u
    tree, best = _viterbi(chart, theta.log_weights(), cfg.dep_len_beta, prices)
    return tree, -best


def build_decode_chart(x: Sentence, theta: DmvParams, cfg: ConstraintConfig) -> _Chart:
    """Prebuild a chart for repeated price-modified decodes of one sentence."""
    return _build_chart(theta.tag_ids(x), theta.V, cfg.max_ce_depth)


def em_step(
    c: Corpus,
    theta: DmvParams,
    cfg: ConstraintConfig,
    smoothing: float = 0.0,
    diagnostics: dict | None = None,
) -> tuple[DmvParams, float]:
    """One EM iteration; returns new parameters and the pre-step log likelihood.

    Sentences whose constrained marginal is zero are skipped and tallied in
    `diagnostics["skipped"]` when a dict is supplied.
    """
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    wi = _WeightIndex(theta.V)
    wlog = theta.log_weights()
    counts = np.zeros(wi.size)
    total = 0.0
    skipped = 0
    for sent in c:
        chart = _build_chart(theta.tag_ids(sent), theta.V, cfg.max_ce_depth)
        vals = _inside(chart, wlog, cfg.dep_len_beta)
        logz = vals[chart.goal]
        if logz == NEG_INF:
            skipped += 1
            continue
        total += logz
        _outside_counts(chart, wlog, cfg.dep_len_beta, vals, logz, counts)
    if diagnostics is not None:
        diagnostics["skipped"] = skipped
    new = _params_from_counts(theta, counts, smoothing)
    return new, total


def _params_from_counts(
    theta: DmvParams, counts: np.ndarray, eps: float
) -> DmvParams:
    wi = _WeightIndex(theta.V)
    V = theta.V
    root_c = counts[: wi.attach_off] + eps
    attach_c = counts[wi.attach_off : wi.stop_off].reshape(V, 2, V) + eps
    stop_c = counts[wi.stop_off : wi.cont_off].reshape(V, 2, 2) + eps
    cont_c = counts[wi.cont_off :].reshape(V, 2, 2) + eps

    root_tot = root_c.sum()
    root = root_c / root_tot if root_tot > 0 else theta.root.copy()
    attach = theta.attach.copy()
    tot = attach_c.sum(axis=2)
    nz = tot > 0
    attach[nz] = attach_c[nz] / tot[nz][:, None]
    stop = theta.stop.copy()
    denom = stop_c + cont_c
    nz = denom > 0
    stop[nz] = stop_c[nz] / denom[nz]
    return DmvParams(theta.vocab, root, attach, stop)


def mstep_from_trees(
    c: Corpus, trees: Sequence[DepTree], smoothing: float = 0.1
) -> DmvParams:
    """Re-estimate parameters from hard counts over fixed parse trees."""
    if len(trees) != c.N:
        raise ValueError(f"got {len(trees)} trees for {c.N} sentences")
    vocab = c.pos_vocab
    V = len(vocab)
    idx = {t: i for i, t in enumerate(vocab)}
    wi = _WeightIndex(V)
    counts = np.zeros(wi.size)
    for sent, tree in zip(c, trees):
        if tree.n != sent.n:
            raise ValueError(
                f"tree of length {tree.n} paired with sentence of length {sent.n}"
            )
        ids = [idx[t] for t in sent.upos]
        children = tree.children()
        counts[wi.root(ids[tree.root() - 1])] += 1.0
        for h in range(1, sent.n + 1):
            hp = ids[h - 1]
            for direction in (LEFT, RIGHT):
                kids = [ch for ch in children[h] if (ch < h) == (direction == LEFT)]
                adj = NO_CHILD
                for ch in kids:
                    counts[wi.cont(hp, direction, adj)] += 1.0
                    counts[wi.attach(hp, direction, ids[ch - 1])] += 1.0
                    adj = HAS_CHILD
                counts[wi.stop(hp, direction, adj)] += 1.0
    base = DmvParams(
        vocab,
        np.full(V, 1.0 / V),
        np.full((V, 2, V), 1.0 / V),
        np.full((V, 2, 2), 0.5),
    )
    return _params_from_counts(base, counts, smoothing)


def ce_depth(y: DepTree) -> int:
    """Maximum nesting count of strictly-interior subtree spans.

    A token's span is strictly interior when neither of its endpoints is
    shared with its head's span; the depth of a tree is the largest number
    of strictly-interior links on any root-to-leaf path.
    """
    spans = y.spans()
    children = y.children()
    best = 0
    stack = [(y.root(), 0)]
    while stack:
        node, depth = stack.pop()
        best = max(best, depth)
        nl, nr = spans[node - 1]
        for ch in children[node]:
            cl, cr = spans[ch - 1]
            strict = nl < cl and cr < nr
            stack.append((ch, depth + (1 if strict else 0)))
    return best
