"""Message derivation: can a set of terms produce a term?

Decision procedure is the standard two-phase one: saturate the knowledge set
under analysis (projection of pairs, decryption when the inverse key is
available), then check the target by composition (pairing, encryption,
constructor application).  Variables are axiomatically derivable, matching the
convention used by the assertion rules for open terms.

Every positive answer carries a proof tree; the independent checker replays
these against the rule schemas.
"""
from __future__ import annotations

from dataclasses import dataclass

from .terms import (
    App,
    Basic,
    Enc,
    KEY_CONSTRUCTORS,
    KEYS,
    Pair,
    Term,
    Var,
    is_key_position,
    sorted_terms,
)

# rules: ax (member), var (variable convention), pair, split, enc, dec, app


@dataclass(frozen=True)
class TermProof:
    rule: str
    concl: Term
    premises: tuple["TermProof", ...] = ()


@dataclass(frozen=True)
class DYVerdict:
    derivable: bool
    proof: TermProof | None = None


Provenance = dict  # Term -> ("ax",) | ("split", parent) | ("dec", parent)


def dy_saturate(X) -> tuple[frozenset[Term], Provenance]:
    """Close X under pair projection and decryption.  Returns the analyzed set
    and a provenance map recording how each element was obtained."""
    prov: Provenance = {}
    S: set[Term] = set()

    def add(t: Term, how: tuple) -> bool:
        if t in S:
            return False
        S.add(t)
        prov[t] = how
        return True

    for t in sorted_terms(X):
        add(t, ("ax",))

    changed = True
    while changed:
        changed = False
        for t in sorted_terms(S):
            if isinstance(t, Pair):
                changed |= add(t.left, ("split", t))
                changed |= add(t.right, ("split", t))
            elif isinstance(t, Enc):
                ik = KEYS.inverse(t.key)
                if isinstance(ik, Var) or ik in S:
                    changed |= add(t.body, ("dec", t))
    return frozenset(S), prov


def _synth_ok(S: frozenset[Term], t: Term) -> bool:
    if t in S or isinstance(t, Var):
        return True
    if isinstance(t, Pair):
        return _synth_ok(S, t.left) and _synth_ok(S, t.right)
    if isinstance(t, Enc):
        return _synth_ok(S, t.body) and _synth_ok(S, t.key)
    if isinstance(t, App) and t.ctor not in KEY_CONSTRUCTORS:
        return all(_synth_ok(S, a) for a in t.args)
    return False  # basics and key-constructor applications are atomic


def derivable_from(S: frozenset[Term], t: Term) -> bool:
    """Composition check against an already-analyzed set."""
    return _synth_ok(S, t)


def _analysis_proof(t: Term, prov: Provenance, memo: dict) -> TermProof:
    if t in memo:
        return memo[t]
    how = prov[t]
    if how[0] == "ax":
        p = TermProof("ax", t)
    elif how[0] == "split":
        p = TermProof("split", t, (_analysis_proof(how[1], prov, memo),))
    else:  # dec
        parent: Enc = how[1]
        ik = KEYS.inverse(parent.key)
        if isinstance(ik, Var):
            key_proof = TermProof("var", ik)
        else:
            key_proof = _analysis_proof(ik, prov, memo)
        p = TermProof("dec", t, (_analysis_proof(parent, prov, memo), key_proof))
    memo[t] = p
    return p


def _synth_proof(S: frozenset[Term], t: Term, prov: Provenance, memo: dict) -> TermProof:
    if t in S:
        return _analysis_proof(t, prov, memo)
    if isinstance(t, Var):
        return TermProof("var", t)
    if isinstance(t, Pair):
        return TermProof(
            "pair", t,
            (_synth_proof(S, t.left, prov, memo), _synth_proof(S, t.right, prov, memo)),
        )
    if isinstance(t, Enc):
        return TermProof(
            "enc", t,
            (_synth_proof(S, t.body, prov, memo), _synth_proof(S, t.key, prov, memo)),
        )
    if isinstance(t, App) and t.ctor not in KEY_CONSTRUCTORS:
        return TermProof("app", t, tuple(_synth_proof(S, a, prov, memo) for a in t.args))
    raise ValueError(f"not derivable: {t!r}")


def dy_derive(X, t: Term) -> DYVerdict:
    S, prov = dy_saturate(X)
    if not _synth_ok(S, t):
        return DYVerdict(False)
    return DYVerdict(True, _synth_proof(S, t, prov, {}))


class DYContext:
    """Saturates once, answers many queries; proof construction on demand."""

    def __init__(self, X):
        self.X = frozenset(X)
        self.saturated, self._prov = dy_saturate(self.X)
        self._memo: dict = {}

    def derivable(self, t: Term) -> bool:
        return _synth_ok(self.saturated, t)

    def proof(self, t: Term) -> TermProof:
        return _synth_proof(self.saturated, t, self._prov, self._memo)

    def inv_derivable(self, key: Term) -> bool:
        if not is_key_position(key):
            return False
        return self.derivable(KEYS.inverse(key))

    def inv_proof(self, key: Term) -> TermProof:
        return self.proof(KEYS.inverse(key))
