"""Protocol model: actions, roles, validation, and instantiation.

An action is one of send, send* (anonymous send), recv, confirm, deny,
insert.  Sends may declare fresh variables; send and recv carry a term and
optionally an assertion; the local actions carry an assertion only.  A role
is one principal's finite action sequence; a protocol is a set of roles plus
declarations.
"""
from __future__ import annotations

from dataclasses import dataclass

from .assertions import Assertion, free_vars, substitute
from .dy import dy_saturate
from .syntax import Declarations
from .terms import (
    AGENT,
    App,
    Basic,
    Enc,
    KEY,
    KEY_CONSTRUCTORS,
    NONCE,
    Pair,
    Term,
    Var,
    is_ground,
    iter_subterms,
    subst_term,
    term_vars,
)

COMMUNICATING = ("send", "send*", "recv")
LOCAL = ("confirm", "deny", "insert")


@dataclass(frozen=True)
class Action:
    kind: str
    agent: Term
    fresh: tuple[str, ...] = ()
    term: Term | None = None
    assertion: Assertion | None = None
    phase: int = 0

    def __post_init__(self) -> None:
        if self.kind not in COMMUNICATING + LOCAL:
            raise ValueError(f"unknown action kind {self.kind!r}")
        if self.kind in COMMUNICATING and self.term is None:
            raise ValueError(f"{self.kind} action needs a term")
        if self.kind in LOCAL and (self.assertion is None or self.term is not None):
            raise ValueError(f"{self.kind} action carries exactly an assertion")
        if self.fresh and self.kind not in ("send", "send*"):
            raise ValueError("only sends declare fresh variables")

    def is_ground(self) -> bool:
        """No free variable anywhere (assertion-bound variables are fine)."""
        if isinstance(self.agent, Var):
            return False
        if self.term is not None and not is_ground(self.term):
            return False
        if self.assertion is not None and free_vars(self.assertion):
            return False
        return True

    def used_vars(self) -> frozenset[str]:
        out: set[str] = set()
        if isinstance(self.agent, Var):
            out.add(self.agent.name)
        if self.term is not None:
            out |= term_vars(self.term)
        if self.assertion is not None:
            out |= free_vars(self.assertion)
        return frozenset(out)


@dataclass(frozen=True)
class Role:
    name: str
    params: tuple[str, ...]
    actions: tuple[Action, ...]


@dataclass
class Protocol:
    name: str
    decls: Declarations
    roles: dict[str, Role]
    phases: tuple[str, ...] = ()

    def agent_names(self) -> list[str]:
        return sorted(self.decls.agents)

    def constants(self) -> list[Basic]:
        d = self.decls
        out = [Basic(n, AGENT) for n in sorted(d.agents)]
        out += [Basic(n, NONCE) for n in sorted(d.nonces)]
        out += [Basic(n, KEY) for n in sorted(d.keys)]
        return out


@dataclass(frozen=True)
class Diagnostic:
    code: str
    role: str
    index: int
    detail: str

    def __str__(self) -> str:
        return f"{self.role}[{self.index}]: {self.code}: {self.detail}"


def _assertion_top_reveal_skip(t: Term) -> bool:
    """Revealed terms mentioning assertion-bound variables (reserved %names)
    are hidden by their quantifier and not checkable."""
    return any(isinstance(s, Var) and s.name.startswith("%") for s in iter_subterms(t))


def _strict_synth(S: frozenset[Term], t: Term) -> bool:
    # like message derivation, but variables are NOT axiomatic: they must be
    # in the seed set themselves
    if t in S:
        return True
    if isinstance(t, Pair):
        return _strict_synth(S, t.left) and _strict_synth(S, t.right)
    if isinstance(t, Enc):
        return _strict_synth(S, t.body) and _strict_synth(S, t.key)
    if isinstance(t, App) and t.ctor not in KEY_CONSTRUCTORS:
        return all(_strict_synth(S, a) for a in t.args)
    return False


def validate_role(role: Role, proto: Protocol) -> list[Diagnostic]:
    """Static discipline checks.  Empty list means the role is well-formed."""
    diags: list[Diagnostic] = []
    d = proto.decls
    grounded: set[str] = set(role.params) | {"id"}
    seen: set[str] = set(grounded)
    payloads: list[Term] = []
    principal = role.actions[0].agent if role.actions else None

    for i, act in enumerate(role.actions):
        if principal is not None and act.agent != principal:
            diags.append(Diagnostic("mixed-principal", role.name, i,
                                    f"expected {principal}, found {act.agent}"))
        used = act.used_vars() - {"id"}

        if act.kind in ("send", "send*"):
            for v in act.fresh:
                if v in seen:
                    diags.append(Diagnostic("fresh-reuse", role.name, i, v))
            scope = grounded | set(act.fresh)
            for v in sorted(used - scope):
                if v not in seen:
                    diags.append(Diagnostic("unbound-variable", role.name, i, v))
                # a variable already flagged (or received earlier) is not re-flagged
            grounded |= set(act.fresh)
        elif act.kind == "recv":
            # pattern variables originating here become bound
            grounded |= used
        else:
            for v in sorted(used - grounded):
                diags.append(Diagnostic("unbound-variable", role.name, i,
                                        f"{v} in {act.kind}"))
        seen |= used | set(act.fresh)

        if act.term is not None:
            payloads.append(act.term)

        if act.kind in ("send", "send*") and act.assertion is not None:
            from .assertions import reveals

            seed = set(payloads)
            seed.update(Var(v) for v in grounded)
            seed.update(Basic(n, AGENT) for n in d.agents)
            seed.update(Basic(n, NONCE) for n in d.nonces)
            analyzed, _ = dy_saturate(seed)
            for t in sorted(reveals(act.assertion), key=lambda s: str(s)):
                if _assertion_top_reveal_skip(t):
                    continue
                if isinstance(t, Var):
                    continue
                if isinstance(t, Basic) and t.sort in (AGENT, NONCE) and t.name in (d.agents | d.nonces):
                    continue
                if not _strict_synth(analyzed, t):
                    diags.append(Diagnostic("reveal-violation", role.name, i,
                                            f"revealed term never communicated: {t!r}"))
    return diags


def validate_protocol(proto: Protocol) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    for name in sorted(proto.roles):
        out.extend(validate_role(proto.roles[name], proto))
    return out


def action_subst(act: Action, sigma: dict[str, Term]) -> Action:
    sigma = {k: v for k, v in sigma.items() if k not in act.fresh}
    return Action(
        act.kind,
        subst_term(act.agent, sigma),
        act.fresh,
        None if act.term is None else subst_term(act.term, sigma),
        None if act.assertion is None else substitute(act.assertion, sigma),
        act.phase,
    )


def suitable(sigma: dict[str, Term], role: Role, proto: Protocol) -> bool:
    """True when sigma grounds the role: defined on id and every parameter,
    id maps to a declared agent, values are ground and sort-respecting."""
    needed = set(role.params) | {"id"}
    if not needed <= set(sigma):
        return False
    ag = sigma["id"]
    if not (isinstance(ag, Basic) and ag.sort == AGENT):
        return False
    for v in needed:
        if not is_ground(sigma[v]):
            return False
    try:
        instantiate(role, sigma)
    except (ValueError, TypeError):
        return False
    return True


def instantiate(role: Role, sigma: dict[str, Term]) -> tuple[Action, ...]:
    return tuple(action_subst(a, sigma) for a in role.actions)
