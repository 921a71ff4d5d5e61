from __future__ import annotations

import random

from protassert import (
    And,
    App,
    Basic,
    DeriveContext,
    Enc,
    Eq,
    Exists,
    Or,
    Pair,
    Pred,
    Says,
    SearchBudget,
    SentA,
    SentT,
    Var,
    derive,
    derive_safe,
    sk,
    vk,
)
from protassert.engine import case_split, witness_close

from oracles import AssertionOracle

A = Basic("A", "agent")
B = Basic("B", "agent")
n = Basic("n", "nonce")
m = Basic("m", "nonce")
v = Basic("v", "nonce")
zero = Basic("0", "nonce")
one = Basic("1", "nonce")
two = Basic("2", "nonce")
k = Basic("k", "key")
k2 = Basic("k2", "key")


def x(name: str) -> Var:
    return Var(name)


# ---------------------------------------------------------------------------
# expansion stages


def test_witness_close_opens_existentials():
    phi = {Exists("q", Eq(x("q"), n))}
    closed, wits = witness_close(phi)
    opened = [a for a in closed if isinstance(a, Eq)]
    assert len(opened) == 1
    lhs = opened[0].lhs
    assert isinstance(lhs, Var) and lhs.name.startswith("_w")


def test_witness_close_shares_witnesses_per_assertion():
    # the same hypothesis opens to the same witness, a different one does not
    a1 = Exists("q", Pred("p", (x("q"),)))
    a2 = Exists("q", Pred("r", (x("q"),)))
    closed, _ = witness_close({a1, a2})
    names = {h.args[0].name for h in closed if isinstance(h, Pred)}
    assert len(names) == 2


def test_case_split_multiplies_branches():
    phi = {Or(Eq(n, n), Eq(m, m)), Or(Eq(k, k), Eq(k2, k2))}
    branches = case_split(frozenset(phi))
    assert len(branches) == 4
    for b in branches:
        assert not any(isinstance(h, Or) for h in b)


def test_case_split_raises_past_branch_cap():
    import pytest
    from protassert.engine import BudgetExhausted
    phi = frozenset(Or(Pred("p", (Basic(f"c{i}", "nonce"),)),
                       Pred("q", (Basic(f"c{i}", "nonce"),)))
                    for i in range(6))
    with pytest.raises(BudgetExhausted):
        case_split(phi, SearchBudget(branch_cap=8))


# ---------------------------------------------------------------------------
# plain derivation


def test_hypothesis_and_conjunction():
    assert derive((), {Pred("p", (n,))}, Pred("p", (n,)))
    assert derive((), {And(Pred("p", (n,)), Pred("q", (m,)))}, Pred("q", (m,)))
    assert derive((), {Pred("p", (n,)), Pred("q", (m,))},
                  And(Pred("p", (n,)), Pred("q", (m,))))


def test_disjunction_introduction_and_elimination():
    assert derive((), {Pred("p", (n,))}, Or(Pred("p", (n,)), Eq(n, m)))
    # both branches reach the weaker disjunction
    phi = {Or(Pred("p", (n,)), Pred("q", (n,)))}
    assert derive((), phi, Or(Pred("q", (n,)), Pred("p", (n,))))
    assert not derive((), phi, Pred("p", (n,)))


def test_equality_symmetry_transitivity():
    phi = {Eq(Enc(n, k), Enc(m, k2)), Eq(Enc(m, k2), Enc(v, k))}
    assert derive((), phi, Eq(Enc(v, k), Enc(n, k)))


def test_congruence_composes_upward():
    phi = {Eq(Enc(n, k), Enc(m, k))}
    # the shared component v needs a provable reflexivity, so it must be
    # constructible from the term knowledge
    assert derive({v}, phi, Eq(Pair(Enc(n, k), v), Pair(Enc(m, k), v)))
    assert not derive((), phi, Eq(Pair(Enc(n, k), v), Pair(Enc(m, k), v)))


def test_enc_projection_needs_both_inverse_keys():
    # holding k lets the pairing of ciphertexts reveal body equality
    phi = {Eq(Enc(n, k), Enc(m, k))}
    assert derive({k}, phi, Eq(n, m))
    assert not derive((), phi, Eq(n, m))
    # a signing key that is not ours blocks the projection
    phi2 = {Eq(Enc(n, sk(A)), Enc(m, sk(A)))}
    assert not derive((), phi2, Eq(n, m))
    assert derive({vk(A)}, phi2, Eq(n, m))


def test_existential_introduction():
    phi = {Pred("p", (Enc(n, k),))}
    assert derive((), phi, Exists("u", Pred("p", (x("u"),))))
    assert derive((), phi, Exists("u", Exists("w", Pred("p", (Enc(x("u"), x("w")),)))))


def test_existential_matching_across_binders():
    # hypothesis and goal bind in different orders but align positionally
    phi = {Exists("a", Exists("b", Eq(Pair(x("a"), x("b")), Pair(n, m))))}
    assert derive((), phi, Exists("q", Exists("r", Eq(Pair(x("q"), x("r")), Pair(n, m)))))


def test_bottom_explodes():
    phi = {Eq(n, m)}  # two distinct atomic values equal: inconsistent
    assert derive((), phi, Pred("anything", (k,)))
    assert derive((), phi, Eq(k, k2))
    assert derive((), phi, Exists("u", Eq(x("u"), x("u"))))


def test_bottom_through_projection():
    phi = {Eq(Enc(n, k), Enc(m, k))}
    assert not derive((), phi, Eq(k, k2))
    assert derive({k}, phi, Eq(k, k2))  # projection exposes n = m


def test_congruence_chain_with_blocked_first_member():
    # rebuilding the shared-child reflexivity premise of a congruence step
    # must skip class members that only became equal after that step
    phi = [
        Eq(k, A),
        Eq(Pair(A, k), Enc(n, k)),
        Eq(Enc(n, k), Pair(k, m)),
        Eq(Pair(A, n), Pair(n, A)),
    ]
    goal = Pred("p", (Pair(A, m),))
    assert derive((), phi, goal)
    assert derive_safe((), phi, goal)


def test_says_strip():
    phi = {Says(A, Pred("p", (n,)))}
    assert derive((), phi, Pred("p", (n,)))


def test_says_introduction_gated_by_signing_key():
    phi = {Pred("p", (n,))}
    goal = Says(A, Pred("p", (n,)))
    assert not derive((), phi, goal)
    assert derive({sk(A)}, phi, goal)
    assert not derive({sk(B)}, phi, goal)
    assert not derive({vk(A)}, phi, goal)


def test_sent_facts_are_not_invented():
    phi = {SentT(A, n)}
    assert derive((), phi, SentT(A, n))
    assert not derive((), phi, SentT(B, n))
    assert not derive((), phi, SentA(A, Pred("p", (n,))))


def test_sent_facts_match_up_to_equalities():
    phi = {SentT(A, Enc(n, k)), Eq(Enc(n, k), Enc(m, k2))}
    assert derive((), phi, SentT(A, Enc(m, k2)))


# ---------------------------------------------------------------------------
# the certificate overlap leak


def leak_context():
    commit = Enc(v, k)
    cert = lambda alt: Exists("x", Exists("y", And(
        Eq(commit, Enc(x("x"), x("y"))),
        Or(Eq(x("x"), zero), Eq(x("x"), alt)))))
    return {commit}, {cert(one), cert(two)}


def test_two_overlapping_certificates_leak_the_plaintext():
    X, phi = leak_context()
    goal = Exists("y", Eq(Enc(v, k), Enc(zero, x("y"))))
    verdict = derive(X, phi, goal)
    assert verdict.derivable
    rules = set()

    def walk(p):
        rules.add(p.rule)
        for q in p.premises:
            walk(q)

    walk(verdict.proof)
    assert "exists_e" in rules
    assert "or_e" in rules
    assert "exists_i" in rules


def test_leak_needs_both_certificates():
    X, phi = leak_context()
    goal = Exists("y", Eq(Enc(v, k), Enc(zero, x("y"))))
    for one_cert in phi:
        assert not derive(X, {one_cert}, goal)


def test_safe_mode_blocks_the_leak():
    X, phi = leak_context()
    goal = Exists("y", Eq(Enc(v, k), Enc(zero, x("y"))))
    verdict = derive_safe(X, phi, goal)
    assert not verdict.derivable
    assert not verdict.budget_exhausted


def test_safe_mode_still_proves_directly():
    phi = {Pred("p", (n,)), Says(A, Pred("q", (m,)))}
    assert derive_safe((), phi, Pred("p", (n,)))
    assert derive_safe((), phi, Pred("q", (m,)))
    assert derive_safe((), phi, And(Pred("p", (n,)), Pred("q", (m,))))


# ---------------------------------------------------------------------------
# budgets


def test_budget_exhaustion_is_marked():
    phi = frozenset(Or(Pred("p", (Basic(f"c{i}", "nonce"),)),
                       Pred("q", (Basic(f"c{i}", "nonce"),)))
                    for i in range(8))
    tight = SearchBudget(branch_cap=4)
    verdict = derive((), phi, Pred("p", (Basic("c0", "nonce"),)),
                     budget=tight)
    assert not verdict.derivable
    assert verdict.budget_exhausted


def test_exhaustion_never_reported_as_positive():
    X, phi = leak_context()
    goal = Exists("y", Eq(Enc(v, k), Enc(zero, x("y"))))
    tight = SearchBudget(node_cap=3)
    verdict = derive(X, phi, goal, budget=tight)
    assert verdict.derivable or verdict.budget_exhausted


def test_context_reuse_matches_one_shot():
    X, phi = leak_context()
    ctx = DeriveContext(X, phi)
    goals = [Exists("y", Eq(Enc(v, k), Enc(zero, x("y")))),
             Eq(v, zero),
             Exists("u", Eq(Enc(v, k), Enc(x("u"), k)))]
    for g in goals:
        assert ctx.query(g).derivable == derive(X, phi, g).derivable
    # queries must not contaminate one another
    assert ctx.query(goals[0]).derivable == derive(X, phi, goals[0]).derivable


# ---------------------------------------------------------------------------
# oracle cross-check and properties


def _rand_ground_term(rng, depth):
    pool = [A, B, n, m, v, k, k2]
    if depth <= 0 or rng.random() < 0.45:
        return rng.choice(pool)
    r = rng.random()
    if r < 0.45:
        return Pair(_rand_ground_term(rng, depth - 1), _rand_ground_term(rng, depth - 1))
    if r < 0.85:
        return Enc(_rand_ground_term(rng, depth - 1), rng.choice([k, k2, sk(A)]))
    return App("g", (_rand_ground_term(rng, depth - 1),))


def _rand_flat_assertion(rng, depth):
    t = lambda: _rand_ground_term(rng, 2)
    leaves = [lambda: Eq(t(), t()),
              lambda: Pred(rng.choice("pq"), (t(),)),
              lambda: SentT(rng.choice([A, B]), t())]
    if depth <= 0 or rng.random() < 0.5:
        return rng.choice(leaves)()
    r = rng.random()
    if r < 0.5:
        return And(_rand_flat_assertion(rng, depth - 1),
                   _rand_flat_assertion(rng, depth - 1))
    return Says(rng.choice([A, B]), _rand_flat_assertion(rng, depth - 1))


def test_oracle_agreement_flat_contexts():
    # engine against the naive closure oracle on quantifier-free inputs
    rng = random.Random(777)
    mismatches = []
    for i in range(300):
        X = frozenset(_rand_ground_term(rng, 2) for _ in range(rng.randint(0, 3)))
        phi = [_rand_flat_assertion(rng, 2) for _ in range(rng.randint(1, 4))]
        goal = _rand_flat_assertion(rng, 2)
        got = derive(X, phi, goal)
        want = AssertionOracle(X, phi).holds(goal)
        if bool(got) != want:
            mismatches.append((i, X, phi, goal, bool(got), want))
    assert not mismatches, mismatches[:2]


def test_derive_monotone_in_hypotheses_property():
    rng = random.Random(888)
    for _ in range(200):
        X = frozenset(_rand_ground_term(rng, 2) for _ in range(rng.randint(0, 2)))
        phi = [_rand_flat_assertion(rng, 1) for _ in range(rng.randint(1, 3))]
        goal = _rand_flat_assertion(rng, 1)
        if not derive(X, phi, goal):
            continue
        extra = [_rand_flat_assertion(rng, 1)]
        assert derive(X, phi + extra, goal), (phi, extra, goal)


def test_safe_subset_of_full_property():
    rng = random.Random(999)
    for _ in range(200):
        X = frozenset(_rand_ground_term(rng, 2) for _ in range(rng.randint(0, 2)))
        phi = [_rand_flat_assertion(rng, 2) for _ in range(rng.randint(1, 3))]
        goal = _rand_flat_assertion(rng, 2)
        if derive_safe(X, phi, goal):
            assert derive(X, phi, goal), (X, phi, goal)
