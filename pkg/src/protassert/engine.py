"""Derivation engine for assertion sequents X, Phi |- alpha.

Search strategy is fixed:
  1. witness closure: every reachable existential hypothesis contributes an
     instance over a globally fresh witness variable;
  2. hypothesis flattening: conjunctions split, says bodies stripped
     (originals kept for membership);
  3. case split: every reachable disjunction forks the branch;
  4. congruence closure per branch over the term universe, seeded by equality
     hypotheses, closed under pair/enc/constructor congruence, pair
     projection, and enc projection guarded by derivability of both inverse
     keys; every merge is justified by a proof-forest edge;
  5. goal decomposition modulo the classes.

A branch holding two distinct basics in one class is inconsistent and proves
anything.  The safe mode disables steps 1 and 3 (the rules unsound for
composition); introduction rules stay available.

Positive verdicts carry a full proof tree over the rule schemas; negative
verdicts say whether a search budget was hit.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .assertions import (
    And,
    Assertion,
    Eq,
    Exists,
    Or,
    Pred,
    Says,
    SentA,
    SentT,
    normalize,
    sorted_assertions,
    substitute,
)
from .dy import DYContext, TermProof
from .terms import (
    App,
    Basic,
    Enc,
    Pair,
    Term,
    Var,
    iter_subterms,
    sorted_terms,
    term_key,
)

# When set, every positive verdict produced by derive()/derive_safe() is
# replayed through the independent checker before being returned.
REPLAY_CHECK = False


@dataclass(frozen=True)
class SearchBudget:
    witness_depth: int = 2
    branch_cap: int = 4096
    merge_cap: int = 100_000
    node_cap: int = 200_000
    candidate_cap: int = 128


DEFAULT_BUDGET = SearchBudget()


class BudgetExhausted(Exception):
    pass


@dataclass(frozen=True)
class ProofNode:
    rule: str
    concl: Assertion
    premises: tuple["ProofNode", ...] = ()
    term_proofs: tuple[TermProof, ...] = ()
    witness: Term | None = None  # exists_i
    fresh: str | None = None  # exists_e


@dataclass(frozen=True)
class Verdict:
    derivable: bool
    proof: ProofNode | None = None
    budget_exhausted: bool = False
    witness_depth: int = 0
    branches: int = 1

    def __bool__(self) -> bool:
        return self.derivable


def _is_open(t: Term) -> bool:
    """Contains a reserved bound name, so it lives under a quantifier."""
    return any(isinstance(s, Var) and s.name.startswith("%") for s in iter_subterms(t))


def _position_terms(a: Assertion) -> list[Term]:
    if isinstance(a, (And, Or)):
        return _position_terms(a.left) + _position_terms(a.right)
    if isinstance(a, Exists):
        return _position_terms(a.body)
    if isinstance(a, (Says, SentA)):
        return [a.agent] + _position_terms(a.body)
    if isinstance(a, SentT):
        return [a.agent, a.term]
    if isinstance(a, Eq):
        return [a.lhs, a.rhs]
    if isinstance(a, Pred):
        return list(a.args)
    raise TypeError(f"not an assertion: {a!r}")


# ---------------------------------------------------------------------------
# congruence closure with proof forest


@dataclass(frozen=True)
class _Edge:
    stamp: int
    kind: str  # hyp | cong | proj_pair | proj_enc
    a: Term
    b: Term
    data: tuple = ()


class EqClasses:
    """Union-find over a term universe with congruence and projection, every
    union justified by an edge in a proof forest."""

    def __init__(self, dyctx: DYContext, merge_cap: int = 10**6):
        self.dyctx = dyctx
        self.merge_cap = merge_cap
        self.parent: dict[Term, Term] = {}
        self.size: dict[Term, int] = {}
        self.members: dict[Term, list[Term]] = {}
        self.pairs: dict[Term, list[Term]] = {}  # Pair members per root
        self.gencs: dict[Term, list[Term]] = {}  # guarded Enc members per root
        self.parents_of: dict[Term, set[Term]] = {}  # composites with a child in root
        self.sig_of: dict[Term, tuple] = {}
        self.sig_table: dict[tuple, Term] = {}
        self.forest: dict[Term, tuple[Term, _Edge]] = {}
        self.stamp = 0
        self.merges = 0
        self._pending: list[tuple[Term, Term, str, tuple]] = []

    # -- basic structure

    def __contains__(self, t: Term) -> bool:
        return t in self.parent

    def find(self, t: Term) -> Term:
        r = t
        while self.parent[r] != r:
            r = self.parent[r]
        while self.parent[t] != r:
            self.parent[t], t = r, self.parent[t]
        return r

    def same(self, a: Term, b: Term) -> bool:
        return self.find(a) == self.find(b)

    def clone(self) -> "EqClasses":
        c = EqClasses.__new__(EqClasses)
        c.dyctx = self.dyctx
        c.merge_cap = self.merge_cap
        c.parent = dict(self.parent)
        c.size = dict(self.size)
        c.members = {k: list(v) for k, v in self.members.items()}
        c.pairs = {k: list(v) for k, v in self.pairs.items()}
        c.gencs = {k: list(v) for k, v in self.gencs.items()}
        c.parents_of = {k: set(v) for k, v in self.parents_of.items()}
        c.sig_of = dict(self.sig_of)
        c.sig_table = dict(self.sig_table)
        c.forest = dict(self.forest)
        c.stamp = self.stamp
        c.merges = self.merges
        c._pending = list(self._pending)
        return c

    def _children(self, t: Term) -> tuple[Term, ...]:
        if isinstance(t, Pair):
            return (t.left, t.right)
        if isinstance(t, Enc):
            return (t.body, t.key)
        if isinstance(t, App):
            return t.args
        return ()

    def _signature(self, t: Term):
        if isinstance(t, Pair):
            return ("p", self.find(t.left), self.find(t.right))
        if isinstance(t, Enc):
            return ("e", self.find(t.body), self.find(t.key))
        if isinstance(t, App):
            return ("a", t.ctor, tuple(self.find(a) for a in t.args))
        return None

    def add_term(self, t: Term) -> None:
        if t in self.parent:
            return
        for c in self._children(t):
            self.add_term(c)
        self.parent[t] = t
        self.size[t] = 1
        self.members[t] = [t]
        self.pairs[t] = [t] if isinstance(t, Pair) else []
        self.gencs[t] = [t] if isinstance(t, Enc) and self._guarded(t) else []
        self.parents_of[t] = set()
        for c in self._children(t):
            self.parents_of[self.find(c)].add(t)
        sig = self._signature(t)
        if sig is not None:
            self.sig_of[t] = sig
            other = self.sig_table.get(sig)
            if other is None:
                self.sig_table[sig] = t
            elif self.find(other) != t and self._cong_mergeable(t, other):
                self._pending.append((t, other, "cong", ()))
                self.process()

    def _guarded(self, e: Enc) -> bool:
        return self.dyctx.inv_derivable(e.key)

    # -- proof forest

    def _reroot(self, x: Term) -> None:
        path = []
        cur = x
        while cur in self.forest:
            nxt, edge = self.forest[cur]
            path.append((cur, nxt, edge))
            cur = nxt
        for u, v, edge in reversed(path):
            self.forest[v] = (u, edge)
        if x in self.forest:
            del self.forest[x]

    def explain_path(self, s: Term, t: Term, before: int | None = None):
        """Forest path s..t as a list of (edge, forward) steps."""
        if s == t:
            return []
        up_s: list[tuple[Term, Term, _Edge]] = []
        seen = {s: 0}
        cur = s
        while cur in self.forest:
            nxt, edge = self.forest[cur]
            up_s.append((cur, nxt, edge))
            cur = nxt
            seen[cur] = len(up_s)
        up_t: list[tuple[Term, Term, _Edge]] = []
        cur = t
        while cur not in seen:
            nxt, edge = self.forest[cur]
            up_t.append((cur, nxt, edge))
            cur = nxt
        lca_depth = seen[cur]
        steps = []
        for u, v, edge in up_s[:lca_depth]:
            steps.append((edge, edge.a == u))
        for u, v, edge in reversed(up_t):
            steps.append((edge, edge.a == v))
        if before is not None and any(e.stamp >= before for e, _ in steps):
            return None
        return steps

    # -- merging

    def merge(self, a: Term, b: Term, kind: str, data: tuple = ()) -> None:
        self.add_term(a)
        self.add_term(b)
        self._pending.append((a, b, kind, data))
        self.process()

    def process(self) -> None:
        while self._pending:
            a, b, kind, data = self._pending.pop(0)
            self._union(a, b, kind, data)

    def _union(self, a: Term, b: Term, kind: str, data: tuple) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        self.merges += 1
        if self.merges > self.merge_cap:
            raise BudgetExhausted()
        self.stamp += 1
        edge = _Edge(self.stamp, kind, a, b, data)
        self._reroot(a)
        self.forest[a] = (b, edge)

        if self.size[ra] < self.size[rb]:
            small, big = ra, rb
        else:
            small, big = rb, ra

        # one cross projection links everything transitively
        if self.pairs[small] and self.pairs[big]:
            pa, pb = self.pairs[small][0], self.pairs[big][0]
            self._pending.append((pa.left, pb.left, "proj_pair", (pa, pb, 0)))
            self._pending.append((pa.right, pb.right, "proj_pair", (pa, pb, 1)))
        if self.gencs[small] and self.gencs[big]:
            ea, eb = self.gencs[small][0], self.gencs[big][0]
            self._pending.append((ea.body, eb.body, "proj_enc", (ea, eb, 0)))
            self._pending.append((ea.key, eb.key, "proj_enc", (ea, eb, 1)))

        for m in self.members[small]:
            self.parent[m] = big
        self.parent[small] = big
        self.size[big] += self.size[small]
        self.members[big].extend(self.members.pop(small))
        self.pairs[big].extend(self.pairs.pop(small))
        self.gencs[big].extend(self.gencs.pop(small))

        touched = self.parents_of.pop(small) | self.parents_of[big]
        self.parents_of[big] = touched
        for p in sorted(touched, key=term_key):
            old = self.sig_of.get(p)
            if old is not None and self.sig_table.get(old) is p:
                del self.sig_table[old]
        for p in sorted(touched, key=term_key):
            sig = self._signature(p)
            self.sig_of[p] = sig
            other = self.sig_table.get(sig)
            if other is None:
                self.sig_table[sig] = p
            elif self.find(other) != self.find(p):
                if self._cong_mergeable(p, other):
                    self._pending.append((p, other, "cong", ()))

    def _cong_mergeable(self, p: Term, q: Term) -> bool:
        """A congruence union is only sound if every syntactically shared
        child admits a reflexivity proof (derivable basics or a non-trivial
        class)."""
        for cp, cq in zip(self._children(p), self._children(q)):
            if cp == cq and not self._refl_possible(cp):
                return False
        return True

    def _refl_possible(self, t: Term) -> bool:
        if self.size.get(self.find(t), 1) > 1:
            return True
        return all(self.dyctx.derivable(s) for s in iter_subterms(t)
                   if isinstance(s, Basic))

    def class_members(self, t: Term) -> list[Term]:
        return sorted(self.members[self.find(t)], key=term_key)

    def roots(self) -> list[Term]:
        return sorted({self.find(t) for t in self.parent}, key=term_key)


def check_bottom(classes: EqClasses) -> tuple[Term, Term] | None:
    """Two distinct basics in one class make the branch inconsistent."""
    for root in classes.roots():
        basics = [m for m in classes.members[root] if isinstance(m, Basic)]
        if len(basics) >= 2:
            b = sorted(basics, key=term_key)
            return (b[0], b[1])
    return None


# ---------------------------------------------------------------------------
# hypothesis expansion

class _WitnessAllocator:
    def __init__(self):
        self.ledger: dict[Assertion, str] = {}
        self.n = 0

    def get(self, psi: Exists) -> str:
        if psi not in self.ledger:
            self.n += 1
            self.ledger[psi] = f"_w{self.n}"
        return self.ledger[psi]


@dataclass
class _Leaf:
    hyps: frozenset[Assertion]
    origin: dict[Assertion, tuple]
    cc: EqClasses | None = None
    bottom: tuple[Term, Term] | None = None


@dataclass
class _ExpNode:
    wits: list[tuple[Assertion, Assertion, str]] = field(default_factory=list)
    split: tuple[Assertion, "_ExpNode", "_ExpNode"] | None = None
    leaf: _Leaf | None = None

    def leaves(self) -> list[_Leaf]:
        if self.leaf is not None:
            return [self.leaf]
        _, l, r = self.split
        return l.leaves() + r.leaves()


class _Counters:
    def __init__(self, budget: SearchBudget):
        self.budget = budget
        self.nodes = 0
        self.branches = 1
        self.truncated = False

    def tick(self) -> None:
        self.nodes += 1
        if self.nodes > self.budget.node_cap:
            raise BudgetExhausted()

    def fork(self) -> None:
        self.branches += 1
        if self.branches > self.budget.branch_cap:
            raise BudgetExhausted()


def _expand(hyps: set[Assertion], origin: dict, queue: list[Assertion],
            alloc: _WitnessAllocator, counters: _Counters, safe: bool) -> _ExpNode:
    node = _ExpNode()
    while queue:
        psi = queue.pop(0)
        if isinstance(psi, And):
            for idx, child in ((0, psi.left), (1, psi.right)):
                if child not in hyps:
                    hyps.add(child)
                    origin[child] = ("and_e", psi, idx)
                    queue.append(child)
        elif isinstance(psi, Says):
            if psi.body not in hyps:
                hyps.add(psi.body)
                origin[psi.body] = ("strip", psi)
                queue.append(psi.body)
        elif isinstance(psi, Exists) and not safe:
            var = alloc.get(psi)
            inst = substitute(psi.body, {psi.var: Var(var)})
            if inst not in hyps:
                hyps.add(inst)
                origin[inst] = ("assume",)
                queue.append(inst)
                node.wits.append((psi, inst, var))
        elif isinstance(psi, Or) and not safe:
            counters.fork()
            lh, lo, lq = set(hyps), dict(origin), list(queue)
            rh, ro, rq = set(hyps), dict(origin), list(queue)
            if psi.left not in lh:
                lh.add(psi.left)
                lo[psi.left] = ("assume",)
                lq.append(psi.left)
            if psi.right not in rh:
                rh.add(psi.right)
                ro[psi.right] = ("assume",)
                rq.append(psi.right)
            left = _expand(lh, lo, lq, alloc, counters, safe)
            right = _expand(rh, ro, rq, alloc, counters, safe)
            node.split = (psi, left, right)
            return node
    node.leaf = _Leaf(frozenset(hyps), origin)
    return node


def witness_close(Phi) -> tuple[frozenset[Assertion], dict[Assertion, str]]:
    """Smallest superset of Phi containing an instance over a fresh witness
    variable for each existential element."""
    alloc = _WitnessAllocator()
    out: set[Assertion] = set(normalize(a) for a in Phi)
    queue = sorted_assertions(out)
    while queue:
        psi = queue.pop(0)
        if isinstance(psi, Exists):
            inst = substitute(psi.body, {psi.var: Var(alloc.get(psi))})
            if inst not in out:
                out.add(inst)
                queue.append(inst)
    return frozenset(out), dict(alloc.ledger)


def case_split(Pi, budget: SearchBudget = DEFAULT_BUDGET) -> list[frozenset[Assertion]]:
    """Branches obtained by replacing each reachable disjunction (under
    conjunction flattening and says stripping) with each disjunct."""
    hyps = set(normalize(a) for a in Pi)
    origin = {a: ("ax",) for a in hyps}
    counters = _Counters(budget)
    alloc = _WitnessAllocator()
    tree = _expand(hyps, origin, sorted_assertions(hyps), alloc, counters, safe=False)
    out = []
    for leaf in tree.leaves():
        cleaned = {a for a in leaf.hyps
                   if not isinstance(a, (And, Or))}
        out.append(frozenset(cleaned))
    return out


def congruence_close(X, branch, budget: SearchBudget = DEFAULT_BUDGET) -> EqClasses:
    dyctx = DYContext(X)
    cc = EqClasses(dyctx, budget.merge_cap)
    _build_classes(cc, X, branch)
    return cc


def _register_assertion_terms(cc: EqClasses, a: Assertion) -> None:
    for t in _position_terms(a):
        if not _is_open(t):
            cc.add_term(t)


def _build_classes(cc: EqClasses, X, branch) -> None:
    for t in sorted_terms(X):
        cc.add_term(t)
    for a in sorted_assertions(branch):
        _register_assertion_terms(cc, a)
    for a in sorted_assertions(branch):
        if isinstance(a, Eq) and not _is_open(a.lhs) and not _is_open(a.rhs):
            cc.merge(a.lhs, a.rhs, "hyp", (a,))


# ---------------------------------------------------------------------------
# the prover proper

class _BranchProver:
    def __init__(self, ctx: "DeriveContext", leaf: _Leaf, cc: EqClasses,
                 counters: _Counters):
        self.ctx = ctx
        self.leaf = leaf
        self.cc = cc
        self.counters = counters
        self.memo: dict[Assertion, ProofNode | None] = {}
        self._access: dict[Assertion, ProofNode] = {}
        self.bottom = leaf.bottom

    # -- access derivations for hypotheses

    def resolve(self, psi: Assertion) -> ProofNode:
        if psi in self._access:
            return self._access[psi]
        how = self.leaf.origin[psi]
        if how[0] in ("ax", "assume"):
            node = ProofNode("ax", psi)
        elif how[0] == "and_e":
            node = ProofNode("and_e", psi, (self.resolve(how[1]),))
        else:  # strip
            node = ProofNode("strip", psi, (self.resolve(how[1]),))
        self._access[psi] = node
        return node

    # -- equality proofs

    def _edge_proof(self, edge: _Edge) -> ProofNode:
        if edge.kind == "hyp":
            return self.resolve(edge.data[0])
        if edge.kind == "cong":
            return self._cong_proof(edge.a, edge.b, edge.stamp)
        if edge.kind == "proj_pair":
            pa, pb, idx = edge.data
            prem = self.eq_proof(pa, pb, edge.stamp)
            assert prem is not None
            return ProofNode("proj_pair", Eq(edge.a, edge.b), (prem,))
        if edge.kind == "proj_enc":
            ea, eb, idx = edge.data
            prem = self.eq_proof(ea, eb, edge.stamp)
            assert prem is not None
            tp = (self.ctx.dyctx.inv_proof(ea.key), self.ctx.dyctx.inv_proof(eb.key))
            return ProofNode("proj_enc", Eq(edge.a, edge.b), (prem,), term_proofs=tp)
        raise AssertionError(edge.kind)

    def _cong_proof(self, a: Term, b: Term, before: int) -> ProofNode:
        if isinstance(a, Pair):
            prems = (self.eq_proof(a.left, b.left, before),
                     self.eq_proof(a.right, b.right, before))
        elif isinstance(a, Enc):
            prems = (self.eq_proof(a.body, b.body, before),
                     self.eq_proof(a.key, b.key, before))
        else:
            prems = tuple(self.eq_proof(x, y, before) for x, y in zip(a.args, b.args))
        assert all(p is not None for p in prems)
        rule = {"Pair": "cong_pair", "Enc": "cong_enc", "App": "cong_app"}[type(a).__name__]
        return ProofNode(rule, Eq(a, b), prems)

    def refl_proof(self, t: Term, before: int | None = None) -> ProofNode | None:
        """Prove t = t: structurally when every basic leaf is derivable,
        otherwise through a loop in a non-trivial class."""
        struct = self._refl_structural(t)
        if struct is not None:
            return struct
        if t in self.cc:
            for other in self.cc.class_members(t):
                if other != t:
                    fwd = self.eq_proof(t, other, before)
                    if fwd is None:
                        continue
                    back = ProofNode("sym", Eq(other, t), (fwd,))
                    return ProofNode("trans", Eq(t, t), (fwd, back))
        return None

    def _refl_structural(self, t: Term) -> ProofNode | None:
        if isinstance(t, (Basic, Var)):
            if not self.ctx.dyctx.derivable(t):
                return None
            return ProofNode("refl", Eq(t, t), term_proofs=(self.ctx.dyctx.proof(t),))
        if isinstance(t, Pair):
            l = self._refl_structural(t.left)
            r = self._refl_structural(t.right)
            if l and r:
                return ProofNode("cong_pair", Eq(t, t), (l, r))
            return None
        if isinstance(t, Enc):
            b = self._refl_structural(t.body)
            k = self._refl_structural(t.key)
            if b and k:
                return ProofNode("cong_enc", Eq(t, t), (b, k))
            return None
        if isinstance(t, App):
            prems = []
            for a in t.args:
                p = self._refl_structural(a)
                if p is None:
                    return None
                prems.append(p)
            return ProofNode("cong_app", Eq(t, t), tuple(prems))
        return None

    def eq_proof(self, s: Term, t: Term, before: int | None = None) -> ProofNode | None:
        if s == t:
            return self.refl_proof(s, before)
        steps = self.cc.explain_path(s, t, before)
        if steps is None:
            return None
        chain: list[ProofNode] = []
        for edge, forward in steps:
            p = self._edge_proof(edge)
            if not forward:
                lhs, rhs = p.concl.lhs, p.concl.rhs
                p = ProofNode("sym", Eq(rhs, lhs), (p,))
            chain.append(p)
        cur = chain[0]
        for nxt in chain[1:]:
            cur = ProofNode("trans", Eq(cur.concl.lhs, nxt.concl.rhs), (cur, nxt))
        return cur

    # -- matching modulo classes

    def _class_eq(self, a: Term, b: Term) -> bool:
        if a == b:
            return True
        if _is_open(a) or _is_open(b):
            return False
        self.cc.add_term(a)
        self.cc.add_term(b)
        return self.cc.same(a, b)

    def match_terms(self, h: Term, g: Term, path: tuple, binders: frozenset[str]):
        """Rewrite pairs turning h into g, or None.  Prefers descending into
        equal constructors so rewrite premises stay small and provable."""
        if h == g:
            return []
        descend = None
        if type(h) is type(g):
            if isinstance(h, Pair):
                l = self.match_terms(h.left, g.left, path + (0,), binders)
                r = self.match_terms(h.right, g.right, path + (1,), binders)
                descend = l + r if l is not None and r is not None else None
            elif isinstance(h, Enc):
                b = self.match_terms(h.body, g.body, path + (0,), binders)
                k = self.match_terms(h.key, g.key, path + (1,), binders)
                descend = b + k if b is not None and k is not None else None
            elif isinstance(h, App) and h.ctor == g.ctor and len(h.args) == len(g.args):
                descend = []
                for i, (x, y) in enumerate(zip(h.args, g.args)):
                    m = self.match_terms(x, y, path + (i,), binders)
                    if m is None:
                        descend = None
                        break
                    descend.extend(m)
        if descend is not None:
            return descend
        blocked = binders & ({v.name for v in iter_subterms(h) if isinstance(v, Var)}
                             | {v.name for v in iter_subterms(g) if isinstance(v, Var)})
        if not blocked and self._class_eq(h, g):
            return [(path, h, g)]
        return None

    def match_assertions(self, h: Assertion, g: Assertion, path: tuple = (),
                         binders: frozenset[str] = frozenset()):
        if type(h) is not type(g):
            return None
        if isinstance(h, (And, Or)):
            l = self.match_assertions(h.left, g.left, path + (0,), binders)
            r = self.match_assertions(h.right, g.right, path + (1,), binders)
            return l + r if l is not None and r is not None else None
        if isinstance(h, Exists):
            if h.var != g.var:
                return None
            return self.match_assertions(h.body, g.body, path + (0,), binders | {h.var})
        if isinstance(h, (Says, SentA)):
            if h.agent != g.agent:
                return None
            return self.match_assertions(h.body, g.body, path + (0,), binders)
        if isinstance(h, SentT):
            if h.agent != g.agent:
                return None
            return self.match_terms(h.term, g.term, path + (0,), binders)
        if isinstance(h, Eq):
            l = self.match_terms(h.lhs, g.lhs, path + (0,), binders)
            r = self.match_terms(h.rhs, g.rhs, path + (1,), binders)
            return l + r if l is not None and r is not None else None
        if isinstance(h, Pred):
            if h.name != g.name or len(h.args) != len(g.args):
                return None
            out = []
            for i, (x, y) in enumerate(zip(h.args, g.args)):
                m = self.match_terms(x, y, path + (i,), binders)
                if m is None:
                    return None
                out.extend(m)
            return out
        return None

    def _subst_chain(self, hyp: Assertion, pairs, goal: Assertion) -> ProofNode | None:
        proof = self.resolve(hyp)
        cur = hyp
        for path, told, tnew in pairs:
            eqp = self.eq_proof(told, tnew)
            if eqp is None:
                return None
            cur = _replace_at(cur, path, tnew)
            proof = ProofNode("subst", cur, (proof, eqp))
        assert cur == goal, (cur, goal)
        return proof

    # -- goal decomposition

    def prove(self, goal: Assertion) -> ProofNode | None:
        if goal in self.memo:
            return self.memo[goal]
        self.counters.tick()
        self.memo[goal] = None  # cycles impossible, but keep lookups cheap
        proof = self._prove(goal)
        self.memo[goal] = proof
        return proof

    def _prove(self, goal: Assertion) -> ProofNode | None:
        if goal in self.leaf.hyps:
            return self.resolve(goal)
        if self.bottom is not None:
            m, n = self.bottom
            prem = self.eq_proof(m, n)
            if prem is not None:
                return ProofNode("bot", goal, (prem,))
        _register_assertion_terms(self.cc, goal)

        if isinstance(goal, And):
            l = self.prove(goal.left)
            if l is None:
                return None
            r = self.prove(goal.right)
            if r is None:
                return None
            return ProofNode("and_i", goal, (l, r))

        if isinstance(goal, Or):
            for side in (goal.left, goal.right):
                p = self.prove(side)
                if p is not None:
                    return ProofNode("or_i", goal, (p,))
            return None

        if isinstance(goal, Exists):
            return self._prove_exists(goal)

        if isinstance(goal, Eq):
            return self._prove_eq(goal)

        if isinstance(goal, Pred):
            return self._prove_by_matching(goal, Pred,
                                           lambda h: h.name == goal.name)

        if isinstance(goal, SentT):
            return self._prove_by_matching(goal, SentT,
                                           lambda h: h.agent == goal.agent)

        if isinstance(goal, SentA):
            return self._prove_by_matching(goal, SentA,
                                           lambda h: h.agent == goal.agent)

        if isinstance(goal, Says):
            p = self._prove_by_matching(goal, Says, lambda h: h.agent == goal.agent)
            if p is not None:
                return p
            skey = App("sk", (goal.agent,))
            if self.ctx.dyctx.derivable(skey):
                body = self.prove(goal.body)
                if body is not None:
                    return ProofNode("says", goal, (body,),
                                     term_proofs=(self.ctx.dyctx.proof(skey),))
            return None
        return None

    def _prove_by_matching(self, goal, cls, pre) -> ProofNode | None:
        for hyp in sorted_assertions(self.leaf.hyps):
            if not isinstance(hyp, cls) or not pre(hyp):
                continue
            pairs = self.match_assertions(hyp, goal)
            if pairs is None:
                continue
            p = self._subst_chain(hyp, pairs, goal)
            if p is not None:
                return p
        return None

    def _prove_eq(self, goal: Eq) -> ProofNode | None:
        s, t = goal.lhs, goal.rhs
        if _is_open(s) or _is_open(t):
            return None
        self.cc.add_term(s)
        self.cc.add_term(t)
        if not self.cc.same(s, t):
            return None
        return self.eq_proof(s, t)

    def _prove_exists(self, goal: Exists) -> ProofNode | None:
        p = self._prove_by_matching(goal, Exists, lambda h: True)
        if p is not None:
            return p
        for u in self._candidates(goal.var, goal.body):
            inst = substitute(goal.body, {goal.var: u})
            p = self.prove(inst)
            if p is not None:
                return ProofNode("exists_i", goal, (p,), witness=u)
        return None

    # -- witness candidate generation

    def _candidates(self, var: str, body: Assertion) -> list[Term]:
        cap = self.counters.budget.candidate_cap
        out: list[Term] = []
        seen: set[Term] = set()

        def emit(t: Term) -> bool:
            if t in seen or _is_open(t):
                return False
            seen.add(t)
            out.append(t)
            return len(out) >= cap

        anchored = False
        for sub in _subassertions(body):
            if var not in _assertion_var_names(sub):
                continue
            anchored = True
            for binding in self._ematch_sub(sub, var):
                if emit(binding):
                    self.counters.truncated = True
                    return out
        if not anchored:
            universe = [t for t in sorted(self.cc.parent, key=term_key)
                        if not _is_open(t)]
            for t in universe[:1]:
                emit(t)
            return out
        # pattern-guided synthesis for equation atoms, then universe fallback
        for sub in _subassertions(body):
            if isinstance(sub, Eq) and var in _assertion_var_names(sub):
                for pat, other in ((sub.lhs, sub.rhs), (sub.rhs, sub.lhs)):
                    if isinstance(pat, Var) and pat.name == var:
                        for cand in self._synth_from_pattern(other):
                            if emit(cand):
                                self.counters.truncated = True
                                return out
        return out

    def _ematch_sub(self, pattern: Assertion, var: str):
        """Bind var by matching a goal subassertion against hypotheses (and,
        for equations, against congruence classes)."""
        holes = {var} | {n for n in _assertion_var_names(pattern) if n.startswith("%")}
        results: list[Term] = []
        if isinstance(pattern, Eq):
            for pat, other in ((pattern.lhs, pattern.rhs), (pattern.rhs, pattern.lhs)):
                pvars = {v.name for v in iter_subterms(pat) if isinstance(v, Var)}
                if var not in pvars:
                    continue
                targets: list[Term] = []
                if not _is_open(other):
                    self.cc.add_term(other)
                    targets = self.cc.class_members(other)
                for tgt in targets:
                    for b in _ematch_term(self, pat, tgt, holes, {}):
                        if var in b:
                            results.append(b[var])
        for hyp in sorted_assertions(self.leaf.hyps):
            for b in _ematch_assertion(self, pattern, hyp, holes):
                if var in b:
                    results.append(b[var])
        return results

    def _synth_from_pattern(self, pat: Term) -> list[Term]:
        depth = self.counters.budget.witness_depth
        univ = [t for t in sorted(self.cc.parent, key=term_key) if not _is_open(t)]

        def synth(p: Term, d: int) -> list[Term]:
            if not _is_open(p):
                return [p]
            if isinstance(p, Var):
                return univ[: self.counters.budget.candidate_cap]
            if d <= 0:
                return []
            if isinstance(p, Pair):
                return [Pair(l, r) for l in synth(p.left, d - 1)[:8]
                        for r in synth(p.right, d - 1)[:8]]
            if isinstance(p, Enc):
                out = []
                for b in synth(p.body, d - 1)[:8]:
                    for k in synth(p.key, d - 1)[:8]:
                        try:
                            out.append(Enc(b, k))
                        except ValueError:
                            pass
                return out
            if isinstance(p, App):
                outs = [[]]
                for a in p.args:
                    nxt = []
                    for pre in outs:
                        for c in synth(a, d - 1)[:8]:
                            nxt.append(pre + [c])
                    outs = nxt[:64]
                return [App(p.ctor, tuple(x)) for x in outs]
            return []

        return synth(pat, depth)


def _subassertions(a: Assertion):
    yield a
    if isinstance(a, (And, Or)):
        yield from _subassertions(a.left)
        yield from _subassertions(a.right)
    elif isinstance(a, Exists):
        yield from _subassertions(a.body)
    elif isinstance(a, (Says, SentA)):
        yield from _subassertions(a.body)


def _assertion_var_names(a: Assertion) -> frozenset[str]:
    out: set[str] = set()
    for t in _position_terms(a):
        for s in iter_subterms(t):
            if isinstance(s, Var):
                out.add(s.name)
    return frozenset(out)


def _ematch_term(pr: _BranchProver, pat: Term, tgt: Term, holes: set[str],
                 binding: dict) -> list[dict]:
    if isinstance(pat, Var) and pat.name in holes:
        bound = binding.get(pat.name)
        if bound is not None:
            return [binding] if pr._class_eq(bound, tgt) else []
        if _is_open(tgt):
            return []
        return [{**binding, pat.name: tgt}]
    if pat == tgt:
        return [binding]
    if not _is_open(pat) and pr._class_eq(pat, tgt):
        return [binding]
    results: list[dict] = []
    members = pr.cc.class_members(tgt) if (tgt in pr.cc and not _is_open(tgt)) else [tgt]
    for m in members:
        if type(m) is not type(pat):
            continue
        if isinstance(pat, Pair):
            for b1 in _ematch_term(pr, pat.left, m.left, holes, binding):
                results.extend(_ematch_term(pr, pat.right, m.right, holes, b1))
        elif isinstance(pat, Enc):
            for b1 in _ematch_term(pr, pat.body, m.body, holes, binding):
                results.extend(_ematch_term(pr, pat.key, m.key, holes, b1))
        elif isinstance(pat, App):
            if pat.ctor != m.ctor or len(pat.args) != len(m.args):
                continue
            partial = [binding]
            for pa, ma in zip(pat.args, m.args):
                nxt = []
                for b in partial:
                    nxt.extend(_ematch_term(pr, pa, ma, holes, b))
                partial = nxt
            results.extend(partial)
    return results


def _ematch_assertion(pr: _BranchProver, pat: Assertion, hyp: Assertion,
                      holes: set[str], env_p: dict | None = None,
                      env_h: dict | None = None,
                      binding: dict | None = None) -> list[dict]:
    # bound variables on both sides are renamed to shared rigid tokens, so
    # binder structure must align and never leaks into hole bindings
    env_p = env_p or {}
    env_h = env_h or {}
    binding = binding or {}
    if isinstance(pat, Exists):
        if not isinstance(hyp, Exists):
            return []
        token = f"%b{len(env_p)}"
        return _ematch_assertion(pr, pat.body, hyp.body, holes,
                                 {**env_p, pat.var: token},
                                 {**env_h, hyp.var: token}, binding)
    if type(pat) is not type(hyp):
        return []
    if isinstance(pat, (And, Or)):
        out = []
        for b1 in _ematch_assertion(pr, pat.left, hyp.left, holes, env_p, env_h, binding):
            out.extend(_ematch_assertion(pr, pat.right, hyp.right, holes,
                                         env_p, env_h, b1))
        return out
    if isinstance(pat, (Says, SentA)):
        out = []
        for b1 in _ematch_agent(pr, pat.agent, hyp.agent, holes, env_p, env_h, binding):
            out.extend(_ematch_assertion(pr, pat.body, hyp.body, holes,
                                         env_p, env_h, b1))
        return out
    if isinstance(pat, SentT):
        out = []
        for b1 in _ematch_agent(pr, pat.agent, hyp.agent, holes, env_p, env_h, binding):
            out.extend(_ematch_env_term(pr, pat.term, hyp.term, holes, env_p, env_h, b1))
        return out
    if isinstance(pat, Eq):
        out = []
        for b1 in _ematch_env_term(pr, pat.lhs, hyp.lhs, holes, env_p, env_h, binding):
            out.extend(_ematch_env_term(pr, pat.rhs, hyp.rhs, holes, env_p, env_h, b1))
        return out
    if isinstance(pat, Pred):
        if pat.name != hyp.name or len(pat.args) != len(hyp.args):
            return []
        partial = [binding]
        for pa, ha in zip(pat.args, hyp.args):
            nxt = []
            for b in partial:
                nxt.extend(_ematch_env_term(pr, pa, ha, holes, env_p, env_h, b))
            partial = nxt
        return partial
    return []


def _rename(t: Term, env: dict) -> Term:
    from .terms import subst_term

    if not env:
        return t
    return subst_term(t, {k: Var(v) for k, v in env.items()})


def _ematch_agent(pr: _BranchProver, pat: Term, tgt: Term, holes: set[str],
                  env_p: dict, env_h: dict, binding: dict) -> list[dict]:
    pat = _rename(pat, env_p)
    tgt = _rename(tgt, env_h)
    if isinstance(pat, Var) and pat.name in holes:
        bound = binding.get(pat.name)
        if bound is not None:
            return [binding] if bound == tgt else []
        if _is_open(tgt):
            return []
        return [{**binding, pat.name: tgt}]
    return [binding] if pat == tgt else []


def _ematch_env_term(pr: _BranchProver, pat: Term, tgt: Term, holes: set[str],
                     env_p: dict, env_h: dict, binding: dict) -> list[dict]:
    return _ematch_term(pr, _rename(pat, env_p), _rename(tgt, env_h), binding=binding,
                        holes=holes)


# ---------------------------------------------------------------------------
# positional replacement (for substitution chains)

def _replace_at(a: Assertion, path: tuple, new: Term) -> Assertion:
    def in_term(t: Term, p: tuple) -> Term:
        if not p:
            return new
        i, rest = p[0], p[1:]
        if isinstance(t, Pair):
            return Pair(in_term(t.left, rest) if i == 0 else t.left,
                        t.right if i == 0 else in_term(t.right, rest))
        if isinstance(t, Enc):
            return Enc(in_term(t.body, rest) if i == 0 else t.body,
                       t.key if i == 0 else in_term(t.key, rest))
        if isinstance(t, App):
            args = list(t.args)
            args[i] = in_term(args[i], rest)
            return App(t.ctor, tuple(args))
        raise AssertionError("bad term path")

    def walk(a: Assertion, p: tuple) -> Assertion:
        i, rest = p[0], p[1:]
        if isinstance(a, (And, Or)):
            cls = type(a)
            if i == 0:
                return cls(walk(a.left, rest), a.right)
            return cls(a.left, walk(a.right, rest))
        if isinstance(a, Exists):
            return Exists(a.var, walk(a.body, rest))
        if isinstance(a, (Says, SentA)):
            cls = type(a)
            return cls(a.agent, walk(a.body, rest))
        if isinstance(a, SentT):
            return SentT(a.agent, in_term(a.term, rest))
        if isinstance(a, Eq):
            if i == 0:
                return Eq(in_term(a.lhs, rest), a.rhs)
            return Eq(a.lhs, in_term(a.rhs, rest))
        if isinstance(a, Pred):
            args = list(a.args)
            args[i] = in_term(args[i], rest)
            return Pred(a.name, tuple(args))
        raise AssertionError("bad assertion path")

    return walk(a, path)


# ---------------------------------------------------------------------------
# context and public entry points

class DeriveContext:
    """Expansion and per-branch congruence closure for one (X, Phi) context,
    reusable across many goals."""

    def __init__(self, X, Phi, budget: SearchBudget = DEFAULT_BUDGET,
                 safe: bool = False):
        self.X = frozenset(X)
        self.Phi = frozenset(normalize(a) for a in Phi)
        self.budget = budget
        self.safe = safe
        self.dyctx = DYContext(self.X)
        self.alloc = _WitnessAllocator()
        self.build_failed = False
        counters = _Counters(budget)
        hyps = set(self.Phi)
        origin = {a: ("ax",) for a in hyps}
        try:
            self.tree = _expand(hyps, origin, sorted_assertions(hyps),
                                self.alloc, counters, safe)
            for leaf in self.tree.leaves():
                cc = EqClasses(self.dyctx, budget.merge_cap)
                _build_classes(cc, self.X, leaf.hyps)
                leaf.cc = cc
                leaf.bottom = check_bottom(cc)
        except BudgetExhausted:
            self.build_failed = True
        self.branch_count = len(self.tree.leaves()) if not self.build_failed else 0

    def query(self, goal: Assertion) -> Verdict:
        goal = normalize(goal)
        if self.build_failed:
            return Verdict(False, budget_exhausted=True,
                           witness_depth=self.budget.witness_depth,
                           branches=self.branch_count)
        counters = _Counters(self.budget)
        counters.branches = self.branch_count
        proofs: dict[int, ProofNode] = {}
        provers: dict[int, _BranchProver] = {}
        try:
            for leaf in self.tree.leaves():
                cc = leaf.cc.clone()
                prover = _BranchProver(self, leaf, cc, counters)
                _register_assertion_terms(cc, goal)
                p = prover.prove(goal)
                if p is None:
                    return Verdict(False, budget_exhausted=counters.truncated,
                                   witness_depth=self.budget.witness_depth,
                                   branches=self.branch_count)
                proofs[id(leaf)] = p
                provers[id(leaf)] = prover
        except BudgetExhausted:
            return Verdict(False, budget_exhausted=True,
                           witness_depth=self.budget.witness_depth,
                           branches=self.branch_count)
        proof = self._assemble(self.tree, goal, proofs, provers)
        return Verdict(True, proof, branches=self.branch_count)

    def _assemble(self, node: _ExpNode, goal: Assertion, proofs, provers) -> ProofNode:
        leftmost = node.leaves()[0]
        prover = provers[id(leftmost)]
        if node.split is not None:
            or_elem, lt, rt = node.split
            inner = ProofNode(
                "or_e", goal,
                (prover.resolve(or_elem),
                 self._assemble(lt, goal, proofs, provers),
                 self._assemble(rt, goal, proofs, provers)))
        else:
            inner = proofs[id(node.leaf)]
        for psi, inst, var in reversed(node.wits):
            inner = ProofNode("exists_e", goal, (prover.resolve(psi), inner),
                              fresh=var)
        return inner


def prove_goal(X, branch, classes: EqClasses | None, goal: Assertion,
               budget: SearchBudget = DEFAULT_BUDGET) -> ProofNode | None:
    """Goal decomposition against one already-expanded branch."""
    leaf = _Leaf(frozenset(normalize(a) for a in branch),
                 {normalize(a): ("ax",) for a in branch})
    cc = classes.clone() if classes is not None else congruence_close(X, leaf.hyps, budget)
    ctx = DeriveContext(X, frozenset(), budget)
    leaf.bottom = check_bottom(cc)
    prover = _BranchProver(ctx, leaf, cc, _Counters(budget))
    goal = normalize(goal)
    _register_assertion_terms(cc, goal)
    return prover.prove(goal)


def derive(X, Phi, goal: Assertion, budget: SearchBudget = DEFAULT_BUDGET) -> Verdict:
    ctx = DeriveContext(X, Phi, budget, safe=False)
    v = ctx.query(goal)
    _maybe_replay(ctx, goal, v)
    return v


def derive_safe(X, Phi, goal: Assertion, budget: SearchBudget = DEFAULT_BUDGET) -> Verdict:
    ctx = DeriveContext(X, Phi, budget, safe=True)
    v = ctx.query(goal)
    _maybe_replay(ctx, goal, v)
    return v


def _maybe_replay(ctx: DeriveContext, goal: Assertion, v: Verdict) -> None:
    if not (REPLAY_CHECK and v.derivable):
        return
    from .checker import replay_assertion_proof

    ok, err = replay_assertion_proof(v.proof, ctx.X, ctx.Phi, normalize(goal))
    if not ok:
        raise AssertionError(f"proof replay failed: {err}")
