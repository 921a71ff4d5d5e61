from __future__ import annotations

import random

import pytest

from protassert import (
    Basic,
    Enc,
    Eq,
    Exists,
    Pair,
    ParseError,
    Var,
    normalize,
    parse_assertion,
    parse_protocol,
    parse_sequent,
    parse_sessions,
    parse_term,
    print_assertion,
    print_protocol,
    print_term,
)
from protassert.builtins import FOO_SOURCE, HELIOS_SOURCE
from protassert.syntax import Declarations


def decls() -> Declarations:
    d = Declarations()
    d.agents |= {"A", "B"}
    d.nonces |= {"n", "m"}
    d.keys |= {"k"}
    d.predicates["p"] = 1
    d.constructors["h"] = 1
    return d


def test_term_round_trips():
    d = decls()
    for text in ("n", "(n, m)", "{n}k", "{(n, m)}sk(A)", "h(n)", "x",
                 "{x}y", "((n, m), k)"):
        t = parse_term(text, d)
        assert parse_term(print_term(t), d) == t


def test_term_classification():
    d = decls()
    assert parse_term("n", d) == Basic("n", "nonce")
    assert parse_term("q", d) == Var("q")
    assert parse_term("{n}k", d) == Enc(Basic("n", "nonce"), Basic("k", "key"))


def test_bad_terms_rejected():
    d = decls()
    for text in ("{n}", "(n,", "{n}(m, k)", "h(", ""):
        with pytest.raises(ParseError):
            parse_term(text, d)


def test_assertion_round_trips():
    d = decls()
    texts = [
        "n = m",
        "p(n)",
        "n = m /\\ p(k)",
        "n = m \\/ (p(n) /\\ p(m))",
        "ex x: {x}k = {n}k",
        "ex x, y: ({x}y = {n}k /\\ p(x))",
        "A says p(n)",
        "A says (ex u: n = u)",
        "A sent n",
        "A sent <p(n)>",
    ]
    for text in texts:
        a = parse_assertion(text, d)
        assert parse_assertion(print_assertion(a), d) == a


def test_assertions_come_back_normalized():
    d = decls()
    a = parse_assertion("ex q: q = n", d)
    assert a.var == "%1"
    assert a == parse_assertion("ex w: w = n", d)


def test_predicate_arity_checked():
    d = decls()
    with pytest.raises(ParseError):
        parse_assertion("p(n, m)", d)


def test_operator_structure():
    d = decls()
    a = parse_assertion("n = m /\\ p(n) \\/ p(m)", d)
    # conjunction binds tighter than disjunction
    assert type(a).__name__ == "Or"
    b = parse_assertion("ex x: x = n /\\ p(x)", d)
    assert type(b).__name__ == "Exists"
    assert type(b.body).__name__ == "And"


def test_sequent_with_sections_and_inline_lists():
    seq = parse_sequent(
        """
        nonces: v, 0, 1
        keys: k
        terms: {v}k, k
        assertions: ex x: ({v}k = {x}k /\\ (x = 0 \\/ x = 1))
        goal: ex y: {v}k = {0}y
        """
    )
    assert len(seq.terms) == 2
    assert len(seq.assertions) == 1
    assert seq.goal == normalize(seq.goal)
    assert "0" in seq.decls.nonces


def test_sequent_numeral_constants_must_be_declared():
    with pytest.raises(ParseError):
        parse_sequent("nonces: v\nkeys: k\nterms: {v}k\ngoal: v = 0\n")


def test_protocol_round_trip_builtins():
    for src in (FOO_SOURCE, HELIOS_SOURCE):
        proto = parse_protocol(src)
        again = parse_protocol(print_protocol(proto))
        assert again.name == proto.name
        assert set(again.roles) == set(proto.roles)
        for rname in proto.roles:
            assert again.roles[rname].actions == proto.roles[rname].actions


def test_protocol_reports_location_on_error():
    src = "protocol bad\nagents A\nrole r(v):\n  send id : undeclared_ctor(v)\n"
    with pytest.raises(ParseError) as e:
        parse_protocol(src)
    assert "line" in str(e.value) or "undeclared" in str(e.value)


def test_parse_sessions():
    proto = parse_protocol(FOO_SOURCE)
    ss = parse_sessions("voter(id=V0, v=v0); counter(id=Cnt)", proto)
    assert ss[0][0] == "voter"
    assert ss[0][1]["v"] == Basic("v0", "nonce")
    assert ss[1][0] == "counter"


def _rand_term(rng: random.Random, d: Declarations, depth: int):
    pool = [Basic("n", "nonce"), Basic("m", "nonce"), Basic("k", "key"),
            Basic("A", "agent"), Var("x")]
    if depth <= 0 or rng.random() < 0.4:
        return rng.choice(pool)
    r = rng.random()
    if r < 0.4:
        return Pair(_rand_term(rng, d, depth - 1), _rand_term(rng, d, depth - 1))
    if r < 0.8:
        return Enc(_rand_term(rng, d, depth - 1), Basic("k", "key"))
    from protassert import App
    return App("h", (_rand_term(rng, d, depth - 1),))


def test_term_print_parse_identity_property():
    rng = random.Random(40)
    d = decls()
    for _ in range(200):
        t = _rand_term(rng, d, 3)
        assert parse_term(print_term(t), d) == t


def test_assertion_print_parse_identity_property():
    rng = random.Random(41)
    d = decls()
    base = ["n = m", "p(n)", "ex x: p(x)", "A says p(n)", "A sent n",
            "A sent <n = m>"]
    ops = ["/\\", "\\/"]
    for _ in range(200):
        parts = [rng.choice(base) for _ in range(rng.randint(1, 3))]
        text = (" " + rng.choice(ops) + " ").join(f"({p})" for p in parts)
        a = parse_assertion(text, d)
        assert parse_assertion(print_assertion(a), d) == a
