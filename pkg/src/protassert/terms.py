"""Term algebra: basics, variables, pairs, encryptions, constructor applications.

Terms are immutable; structural equality and hashing come from the dataclasses.
Encryption keys are constrained at construction: a key position holds a basic of
sort key, a variable, or an application of a key constructor (sk/vk).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

AGENT = "agent"
NONCE = "nonce"
KEY = "key"
SORTS = (AGENT, NONCE, KEY)

# Reserved constructors that build key material.  They are atomic for
# derivation purposes: never synthesized from their arguments and never
# decomposed, unlike ordinary constructors which are composition-only.
KEY_CONSTRUCTORS = frozenset({"sk", "vk"})


class Term:
    __slots__ = ()


@dataclass(frozen=True)
class Basic(Term):
    name: str
    sort: str

    def __post_init__(self) -> None:
        if self.sort not in SORTS:
            raise ValueError(f"unknown sort {self.sort!r}")


@dataclass(frozen=True)
class Var(Term):
    name: str


@dataclass(frozen=True)
class Pair(Term):
    left: Term
    right: Term


@dataclass(frozen=True)
class Enc(Term):
    body: Term
    key: Term

    def __post_init__(self) -> None:
        if not is_key_position(self.key):
            raise ValueError(f"encryption key must be key material, got {self.key!r}")


@dataclass(frozen=True)
class App(Term):
    ctor: str
    args: tuple[Term, ...]


def is_key_position(t: Term) -> bool:
    """True when t may occur in the key slot of an encryption."""
    if isinstance(t, Var):
        return True
    if isinstance(t, Basic):
        return t.sort == KEY
    if isinstance(t, App):
        return t.ctor in KEY_CONSTRUCTORS
    return False


def sk(agent: Term) -> Term:
    return App("sk", (agent,))


def vk(agent: Term) -> Term:
    return App("vk", (agent,))


class KeyStructure:
    """Inverse-key map: sk(A) and vk(A) are mutually inverse, basic keys and
    variables are self-inverse."""

    def inverse(self, t: Term) -> Term:
        if isinstance(t, Var):
            return t
        if isinstance(t, Basic) and t.sort == KEY:
            return t
        if isinstance(t, App) and t.ctor == "sk":
            return App("vk", t.args)
        if isinstance(t, App) and t.ctor == "vk":
            return App("sk", t.args)
        raise ValueError(f"not key material: {t!r}")


KEYS = KeyStructure()


def iter_subterms(t: Term) -> Iterator[Term]:
    yield t
    if isinstance(t, Pair):
        yield from iter_subterms(t.left)
        yield from iter_subterms(t.right)
    elif isinstance(t, Enc):
        yield from iter_subterms(t.body)
        yield from iter_subterms(t.key)
    elif isinstance(t, App):
        for a in t.args:
            yield from iter_subterms(a)


def subterms(t: Term) -> frozenset[Term]:
    return frozenset(iter_subterms(t))


def subterms_of(terms) -> frozenset[Term]:
    out: set[Term] = set()
    for t in terms:
        out.update(iter_subterms(t))
    return frozenset(out)


def term_vars(t: Term) -> frozenset[str]:
    return frozenset(s.name for s in iter_subterms(t) if isinstance(s, Var))


def is_ground(t: Term) -> bool:
    return not any(isinstance(s, Var) for s in iter_subterms(t))


def term_depth(t: Term) -> int:
    if isinstance(t, Pair):
        return 1 + max(term_depth(t.left), term_depth(t.right))
    if isinstance(t, Enc):
        return 1 + max(term_depth(t.body), term_depth(t.key))
    if isinstance(t, App):
        return 1 + max((term_depth(a) for a in t.args), default=0)
    return 0


_SORT_RANK = {AGENT: 0, NONCE: 1, KEY: 2}


def term_key(t: Term):
    """Total ordering key: basics by sort then name, then variables, then
    structure for compound terms."""
    if isinstance(t, Basic):
        return (0, _SORT_RANK[t.sort], t.name)
    if isinstance(t, Var):
        return (1, t.name)
    if isinstance(t, Pair):
        return (2, term_key(t.left), term_key(t.right))
    if isinstance(t, Enc):
        return (3, term_key(t.body), term_key(t.key))
    if isinstance(t, App):
        return (4, t.ctor, tuple(term_key(a) for a in t.args))
    raise TypeError(f"not a term: {t!r}")


def sorted_terms(terms) -> list[Term]:
    return sorted(terms, key=term_key)


def subst_term(t: Term, sigma: dict[str, Term]) -> Term:
    if isinstance(t, Var):
        return sigma.get(t.name, t)
    if isinstance(t, Pair):
        return Pair(subst_term(t.left, sigma), subst_term(t.right, sigma))
    if isinstance(t, Enc):
        return Enc(subst_term(t.body, sigma), subst_term(t.key, sigma))
    if isinstance(t, App):
        return App(t.ctor, tuple(subst_term(a, sigma) for a in t.args))
    return t


def replace_term(t: Term, mapping: dict[Term, Term]) -> Term:
    """Replace every occurrence of each mapping key (matched as a whole
    subterm, outermost first) by its image."""
    if t in mapping:
        return mapping[t]
    if isinstance(t, Pair):
        return Pair(replace_term(t.left, mapping), replace_term(t.right, mapping))
    if isinstance(t, Enc):
        return Enc(replace_term(t.body, mapping), replace_term(t.key, mapping))
    if isinstance(t, App):
        return App(t.ctor, tuple(replace_term(a, mapping) for a in t.args))
    return t
