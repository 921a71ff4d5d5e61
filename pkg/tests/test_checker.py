from __future__ import annotations

from dataclasses import replace

from protassert import (
    And,
    Basic,
    Enc,
    Eq,
    Exists,
    Or,
    Pair,
    Pred,
    ProofNode,
    Says,
    Var,
    derive,
    dy_derive,
    normalize,
    replay_assertion_proof,
    replay_term_proof,
    sk,
)
from protassert.dy import TermProof

A = Basic("A", "agent")
n = Basic("n", "nonce")
m = Basic("m", "nonce")
v = Basic("v", "nonce")
zero = Basic("0", "nonce")
one = Basic("1", "nonce")
two = Basic("2", "nonce")
k = Basic("k", "key")


def leak():
    commit = Enc(v, k)
    cert = lambda alt: Exists("x", Exists("y", And(
        Eq(commit, Enc(Var("x"), Var("y"))),
        Or(Eq(Var("x"), zero), Eq(Var("x"), alt)))))
    X = frozenset({commit})
    phi = frozenset({cert(one), cert(two)})
    goal = Exists("y", Eq(commit, Enc(zero, Var("y"))))
    return X, phi, goal


def proved(X, phi, goal):
    verdict = derive(X, phi, goal)
    assert verdict.derivable
    return verdict.proof


def nodes(p: ProofNode):
    yield p
    for q in p.premises:
        yield from nodes(q)


def rewrite(p: ProofNode, victim: ProofNode, new: ProofNode) -> ProofNode:
    if p is victim:
        return new
    return replace(p, premises=tuple(rewrite(q, victim, new) for q in p.premises))


def test_honest_proofs_replay():
    X, phi, goal = leak()
    p = proved(X, phi, goal)
    ok, err = replay_assertion_proof(p, X, phi, goal)
    assert ok, err


def test_root_must_conclude_the_goal():
    X, phi, goal = leak()
    p = proved(X, phi, goal)
    other = Exists("y", Eq(Enc(v, k), Enc(one, Var("y"))))
    ok, err = replay_assertion_proof(p, X, phi, other)
    assert not ok and "goal" in err


def test_fabricated_hypothesis_rejected():
    phi = {Pred("p", (n,))}
    p = proved((), phi, Pred("p", (n,)))
    fake = ProofNode("ax", normalize(Pred("p", (m,))))
    ok, err = replay_assertion_proof(fake, frozenset(), phi, Pred("p", (m,)))
    assert not ok and "ax" in err
    assert replay_assertion_proof(p, frozenset(), phi, Pred("p", (n,)))[0]


def test_tampered_premise_rejected():
    X, phi, goal = leak()
    p = proved(X, phi, goal)
    # claim a different conclusion somewhere inside the or elimination
    victims = [q for q in nodes(p) if q.rule == "or_e"]
    assert victims
    bad = replace(victims[0], concl=normalize(Eq(v, one)))
    ok, err = replay_assertion_proof(rewrite(p, victims[0], bad), X, phi, goal)
    assert not ok


def test_wrong_witness_rejected():
    phi = {Pred("p", (n,))}
    goal = Exists("u", Pred("p", (Var("u"),)))
    p = proved((), phi, goal)
    ei = [q for q in nodes(p) if q.rule == "exists_i"]
    assert ei
    bad = replace(ei[0], witness=m)
    ok, err = replay_assertion_proof(rewrite(p, ei[0], bad), frozenset(), phi, goal)
    assert not ok


def test_says_without_signing_key_rejected():
    phi = {Pred("p", (n,))}
    goal = Says(A, Pred("p", (n,)))
    p = proved({sk(A)}, phi, goal)
    says = [q for q in nodes(p) if q.rule == "says"]
    assert says
    # replay against knowledge that lacks the signing key
    ok, err = replay_assertion_proof(p, frozenset(), phi, goal)
    assert not ok


def test_unknown_rule_rejected():
    phi = {Pred("p", (n,))}
    p = proved((), phi, Pred("p", (n,)))
    bad = replace(p, rule="hocus")
    ok, err = replay_assertion_proof(bad, frozenset(), phi, Pred("p", (n,)))
    assert not ok and "hocus" in err


def test_dropped_premises_rejected():
    X, phi, goal = leak()
    p = proved(X, phi, goal)
    for q in nodes(p):
        if q.rule in ("trans", "and_i") and q.premises:
            bad = replace(q, premises=q.premises[:1])
            ok, _ = replay_assertion_proof(rewrite(p, q, bad), X, phi, goal)
            assert not ok
            return
    raise AssertionError("no node found to corrupt")


def test_term_proofs_replay_and_reject():
    X = frozenset({Pair(n, Enc(m, k)), k})
    vd = dy_derive(X, Pair(m, n))
    assert vd.derivable
    ok, err = replay_term_proof(vd.proof, X)
    assert ok, err
    # claiming an axiom that is not in the knowledge set
    fake = TermProof("ax", sk(A))
    ok, err = replay_term_proof(fake, X)
    assert not ok
    # a composition that misstates its conclusion
    bad = TermProof("pair", Pair(n, n),
                    (TermProof("ax", Pair(n, Enc(m, k))),
                     TermProof("ax", k)))
    ok, err = replay_term_proof(bad, X)
    assert not ok


def test_every_leak_rule_is_checked():
    X, phi, goal = leak()
    p = proved(X, phi, goal)
    seen = {q.rule for q in nodes(p)}
    assert {"exists_e", "or_e", "exists_i"} <= seen
