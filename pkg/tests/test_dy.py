from __future__ import annotations

import random

from protassert import App, Basic, DYContext, Enc, Pair, Var, dy_derive, sk, vk
from protassert.dy import derivable_from, dy_saturate
from protassert.checker import replay_term_proof

from oracles import oracle_dy, random_instance

A = Basic("A", "agent")
B = Basic("B", "agent")
n = Basic("n", "nonce")
m = Basic("m", "nonce")
k = Basic("k", "key")
k2 = Basic("k2", "key")


def test_projection_and_decryption():
    X = {Pair(n, m), Enc(A, k), k}
    S, _ = dy_saturate(X)
    assert n in S and m in S and A in S


def test_decryption_needs_inverse_key():
    S, _ = dy_saturate({Enc(n, k)})
    assert n not in S
    S, _ = dy_saturate({Enc(n, sk(A)), vk(A)})
    assert n in S


def test_nested_release():
    # the outer layer unlocks the key that opens the inner layer
    X = {Pair(k, Enc(Enc(n, k2), k)), k2}
    assert dy_derive(X, n).derivable


def test_composition():
    X = {n, k}
    assert dy_derive(X, Enc(n, k)).derivable
    assert dy_derive(X, Pair(n, Pair(n, k))).derivable
    assert dy_derive(X, App("h", (n,))).derivable


def test_atomic_things_cannot_be_made():
    X = {n, A}
    assert not dy_derive(X, k).derivable
    assert not dy_derive(X, sk(A)).derivable
    assert not dy_derive(X, vk(A)).derivable


def test_variables_are_free():
    assert dy_derive(frozenset(), Var("x")).derivable
    assert dy_derive({n}, Enc(n, Var("y"))).derivable


def test_signing_key_stays_atomic_even_composed():
    X = {A}
    assert not dy_derive(X, sk(A)).derivable  # not buildable from its argument
    assert dy_derive({sk(A)}, sk(A)).derivable


def test_proofs_replay():
    X = {Pair(n, Enc(m, k)), k}
    v = dy_derive(X, Pair(m, n))
    assert v.derivable
    ok, err = replay_term_proof(v.proof, X)
    assert ok, err


def test_context_caches_agree():
    X = frozenset({Pair(n, m), k})
    ctx = DYContext(X)
    for t in (n, m, k, Enc(n, k), sk(A)):
        assert ctx.derivable(t) == dy_derive(X, t).derivable
    assert ctx.inv_derivable(k)
    assert not ctx.inv_derivable(sk(A))


def test_oracle_agreement_small():
    X = {Pair(n, Enc(m, k))}
    for t, want in [(n, True), (m, False), (Pair(n, n), True), (k, False)]:
        assert dy_derive(X, t).derivable == want
        assert oracle_dy(X, t) == want


def test_oracle_agreement_random():
    # brute-force closure oracle against the engine on 1000 random instances
    rng = random.Random(20260822)
    mismatches = []
    positives = 0
    for i in range(1000):
        X, q = random_instance(rng)
        got = dy_derive(X, q)
        want = oracle_dy(X, q)
        if got.derivable != want:
            mismatches.append((i, X, q, got.derivable, want))
        if got.derivable:
            positives += 1
            ok, err = replay_term_proof(got.proof, X)
            assert ok, (i, err)
    assert not mismatches, mismatches[:3]
    assert positives > 100  # the generator keeps both verdicts in play


def test_monotone_in_knowledge():
    rng = random.Random(7)
    for _ in range(200):
        X, q = random_instance(rng)
        if not dy_derive(X, q).derivable:
            continue
        extra, _ = random_instance(rng)
        assert dy_derive(X | extra, q).derivable


def test_derivable_from_is_composition_only():
    # analysis is not re-run on the already-analyzed set
    S = frozenset({Pair(n, m)})
    assert derivable_from(S, Pair(n, m))
    assert not derivable_from(S, n)
