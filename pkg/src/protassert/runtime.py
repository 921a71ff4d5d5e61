"""Run semantics: per-agent knowledge states, action enabling, a seeded
scheduler, trace serialization, and run validation.

Knowledge is tracked per agent name (all sessions of one agent share state),
plus a distinguished network observer who sees every message.  Send actions
require the payload to be derivable and the attached assertion to be
derivable without the composition-unsound rules; receives bind variables by
matching patterns against prior traffic and are enabled only if the observer
could produce the message; confirm needs a full derivation, deny a definite
refusal (a budget-capped refusal blocks and is reported); insert always
fires but warns when it makes the agent's own theory inconsistent.

Actions are scheduled lowest-phase-first among enabled candidates, with a
seeded random choice among ties, so runs are reproducible from their seed.
"""
from __future__ import annotations

import random
import re
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
    free_vars,
    normalize,
    substitute,
)
from .dy import DYContext
from .engine import DEFAULT_BUDGET, DeriveContext, SearchBudget, derive, derive_safe
from .protocol import Action, Protocol
from .builtins import Setup
from .syntax import (
    Declarations,
    ParseError,
    parse_assertion,
    parse_term,
    print_action,
    print_term,
)
from .terms import (
    AGENT,
    App,
    Basic,
    Enc,
    KEY,
    NONCE,
    Pair,
    Term,
    Var,
    is_ground,
    iter_subterms,
    subst_term,
)


@dataclass
class Knowledge:
    terms: set[Term] = field(default_factory=set)
    assertions: set[Assertion] = field(default_factory=set)


@dataclass(frozen=True)
class Traffic:
    term: Term
    assertion: Assertion | None
    sender: str | None  # None: anonymous channel


@dataclass
class SessionState:
    role: str
    sigma: dict[str, Term]
    pc: int = 0


@dataclass
class WorldState:
    proto: Protocol
    setup: Setup
    knowledge: dict[str, Knowledge]
    sessions: list[SessionState]
    traffic: list[Traffic] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    used_basics: set[str] = field(default_factory=set)

    def agent_of(self, s: SessionState) -> str:
        ag = s.sigma["id"]
        assert isinstance(ag, Basic)
        return ag.name


@dataclass(frozen=True)
class Step:
    session: int  # 1-based
    action: Action  # fully instantiated
    fresh: tuple[tuple[str, Basic], ...] = ()
    binds: tuple[tuple[str, Term], ...] = ()


@dataclass
class Run:
    proto: Protocol
    setup: Setup
    seed: int | None
    steps: list[Step]
    complete: bool = True
    warnings: list[str] = field(default_factory=list)


def initial_state(proto: Protocol, setup: Setup) -> WorldState:
    names = set(proto.decls.agents) | {setup.intruder}
    for _, sigma in setup.sessions:
        ag = sigma.get("id")
        if not isinstance(ag, Basic) or ag.sort != AGENT:
            raise ValueError("every session needs a declared agent for id")
        names.add(ag.name)
    public: set[Term] = {Basic(n, AGENT) for n in names}
    public |= {App("vk", (Basic(n, AGENT),)) for n in names}
    public |= {Basic(n, NONCE) for n in proto.decls.nonces}
    knowledge: dict[str, Knowledge] = {}
    for n in sorted(names):
        k = Knowledge(set(public), set())
        k.terms.add(App("sk", (Basic(n, AGENT),)))
        k.terms |= setup.agent_terms.get(n, set())
        k.assertions |= {normalize(a) for a in setup.agent_assertions.get(n, set())}
        knowledge[n] = k
    intr = knowledge[setup.intruder]
    intr.terms |= setup.intruder_terms
    intr.assertions |= {normalize(a) for a in setup.intruder_assertions}
    sessions = [SessionState(role, dict(sigma)) for role, sigma in setup.sessions]
    state = WorldState(proto, setup, knowledge, sessions)
    for k in knowledge.values():
        for t in k.terms:
            for s in iter_subterms(t):
                if isinstance(s, Basic):
                    state.used_basics.add(s.name)
    state.used_basics |= proto.decls.basics()
    return state


# ---------------------------------------------------------------------------
# syntactic pattern matching (binds free variables, rigid elsewhere)

def match_term(pat: Term, tgt: Term, binding: dict[str, Term]) -> dict[str, Term] | None:
    if isinstance(pat, Var):
        if pat.name.startswith("%"):
            return binding if pat == tgt else None
        bound = binding.get(pat.name)
        if bound is not None:
            return binding if bound == tgt else None
        if any(isinstance(s, Var) and s.name.startswith("%") for s in iter_subterms(tgt)):
            return None
        return {**binding, pat.name: tgt}
    if isinstance(pat, Basic):
        return binding if pat == tgt else None
    if type(pat) is not type(tgt):
        return None
    if isinstance(pat, Pair):
        b = match_term(pat.left, tgt.left, binding)
        return match_term(pat.right, tgt.right, b) if b is not None else None
    if isinstance(pat, Enc):
        b = match_term(pat.body, tgt.body, binding)
        return match_term(pat.key, tgt.key, b) if b is not None else None
    if isinstance(pat, App):
        if pat.ctor != tgt.ctor or len(pat.args) != len(tgt.args):
            return None
        b: dict[str, Term] | None = binding
        for x, y in zip(pat.args, tgt.args):
            b = match_term(x, y, b)
            if b is None:
                return None
        return b
    return None


def match_assertion(pat: Assertion, tgt: Assertion,
                    binding: dict[str, Term]) -> dict[str, Term] | None:
    if type(pat) is not type(tgt):
        return None
    if isinstance(pat, (And, Or)):
        b = match_assertion(pat.left, tgt.left, binding)
        return match_assertion(pat.right, tgt.right, b) if b is not None else None
    if isinstance(pat, Exists):
        if pat.var != tgt.var:
            return None
        return match_assertion(pat.body, tgt.body, binding)
    if isinstance(pat, (Says, SentA)):
        b = match_term(pat.agent, tgt.agent, binding)
        return match_assertion(pat.body, tgt.body, b) if b is not None else None
    if isinstance(pat, SentT):
        b = match_term(pat.agent, tgt.agent, binding)
        return match_term(pat.term, tgt.term, b) if b is not None else None
    if isinstance(pat, Eq):
        b = match_term(pat.lhs, tgt.lhs, binding)
        return match_term(pat.rhs, tgt.rhs, b) if b is not None else None
    if isinstance(pat, Pred):
        if pat.name != tgt.name or len(pat.args) != len(tgt.args):
            return None
        b: dict[str, Term] | None = binding
        for x, y in zip(pat.args, tgt.args):
            b = match_term(x, y, b)
            if b is None:
                return None
        return b
    return None


# ---------------------------------------------------------------------------
# instantiation helpers

def _apply(action: Action, sigma: dict[str, Term]) -> Action:
    agent = sigma.get(action.agent.name, action.agent) if isinstance(action.agent, Var) \
        else action.agent
    term = subst_term(action.term, sigma) if action.term is not None else None
    assertion = substitute(action.assertion, sigma) if action.assertion is not None else None
    return Action(action.kind, agent, action.fresh, term, assertion, action.phase)


def fresh_sort(action: Action, name: str) -> str:
    """A fresh value used in key position anywhere in the action is a key."""
    terms: list[Term] = []
    if action.term is not None:
        terms.append(action.term)
    if action.assertion is not None:
        from .assertions import assertion_terms

        terms.extend(assertion_terms(action.assertion))
    for t in terms:
        for s in iter_subterms(t):
            if isinstance(s, Enc) and isinstance(s.key, Var) and s.key.name == name:
                return KEY
    return NONCE


def _allocate_fresh(state: WorldState, session_index: int,
                    action: Action) -> tuple[tuple[str, Basic], ...]:
    out: list[tuple[str, Basic]] = []
    for name in action.fresh:
        base = f"{name}_{session_index}"
        cand = base
        n = 1
        while cand in state.used_basics:
            n += 1
            cand = f"{base}_{n}"
        out.append((name, Basic(cand, fresh_sort(action, name))))
    return tuple(out)


# ---------------------------------------------------------------------------
# enabling

@dataclass(frozen=True)
class Candidate:
    session: int  # 1-based
    action: Action  # instantiated
    phase: int
    fresh: tuple[tuple[str, Basic], ...] = ()
    binds: tuple[tuple[str, Term], ...] = ()


def _ground_or_none(action: Action) -> Action | None:
    return action if action.is_ground() else None


def candidates_for(state: WorldState, idx: int,
                   budget: SearchBudget = DEFAULT_BUDGET,
                   synth: bool = False) -> tuple[list[Candidate], bool]:
    """Enabled instantiations of session idx's next action, plus a flag set
    when the session is permanently stuck.  Knowledge only ever grows, so a
    deny whose assertion is already derivable can never fire later."""
    sess = state.sessions[idx]
    role = state.proto.roles[sess.role]
    if sess.pc >= len(role.actions):
        return [], False
    action = role.actions[sess.pc]
    agent = state.agent_of(sess)
    know = state.knowledge[agent]
    intr = state.knowledge[state.setup.intruder]

    if action.kind in ("send", "send*"):
        fresh = _allocate_fresh(state, idx + 1, action)
        sigma = dict(sess.sigma)
        for name, value in fresh:
            sigma[name] = value
        inst = _ground_or_none(_apply(action, sigma))
        if inst is None:
            return [], False
        base = frozenset(know.terms) | {b for _, b in fresh}
        if not DYContext(base).derivable(inst.term):
            return [], False
        if inst.assertion is not None:
            v = derive_safe(base, frozenset(know.assertions), inst.assertion, budget)
            if not v.derivable:
                if v.budget_exhausted:
                    state.warnings.append(
                        f"session {idx + 1}: send assertion hit the search budget")
                return [], False
        return [Candidate(idx + 1, inst, action.phase, fresh=fresh)], False

    if action.kind == "recv":
        pat = _apply(action, sess.sigma)
        found: list[Candidate] = []
        seen_binds: set[tuple] = set()
        pairs: list[tuple[Term, Assertion | None]] = [
            (tr.term, tr.assertion) for tr in state.traffic]
        if synth and action.assertion is not None:
            from .assertions import sorted_assertions

            pairs += [(tr.term, a) for tr in state.traffic
                      for a in sorted_assertions(intr.assertions)]
        for term, assertion in pairs:
            b = match_term(pat.term, term, {})
            if b is None:
                continue
            if pat.assertion is not None:
                if assertion is None:
                    continue
                b = match_assertion(substitute(pat.assertion, b), assertion, b)
                if b is None:
                    continue
            binds = tuple(sorted(b.items()))
            if binds in seen_binds:
                continue
            seen_binds.add(binds)
            sigma = dict(sess.sigma)
            sigma.update(b)
            inst = _ground_or_none(_apply(action, sigma))
            if inst is None:
                continue
            if not DYContext(frozenset(intr.terms)).derivable(inst.term):
                continue
            if inst.assertion is not None:
                v = derive_safe(frozenset(intr.terms), frozenset(intr.assertions),
                                inst.assertion, budget)
                if not v.derivable:
                    if v.budget_exhausted:
                        state.warnings.append(
                            f"session {idx + 1}: receive check hit the search budget")
                    continue
            found.append(Candidate(idx + 1, inst, action.phase, binds=binds))
        return found, False

    # local actions
    sigma = dict(sess.sigma)
    inst = _ground_or_none(_apply(action, sigma))
    if inst is None:
        return [], False
    if action.kind == "confirm":
        v = derive(frozenset(know.terms), frozenset(know.assertions),
                   inst.assertion, budget)
        if v.derivable:
            return [Candidate(idx + 1, inst, action.phase)], False
        if v.budget_exhausted:
            state.warnings.append(
                f"session {idx + 1}: confirm hit the search budget")
        return [], False
    if action.kind == "deny":
        v = derive(frozenset(know.terms), frozenset(know.assertions),
                   inst.assertion, budget)
        if v.derivable:
            return [], True
        if v.budget_exhausted:
            state.warnings.append(
                f"session {idx + 1}: deny blocked, refusal not definite "
                f"under the search budget")
            return [], False
        return [Candidate(idx + 1, inst, action.phase)], False
    # insert
    return [Candidate(idx + 1, inst, action.phase)], False


def enabled_actions(state: WorldState, budget: SearchBudget = DEFAULT_BUDGET,
                    synth: bool = False) -> tuple[list[Candidate], bool]:
    """All enabled candidates at the lowest enabled phase, plus whether some
    incomplete session can never move again."""
    out: list[Candidate] = []
    wedged = False
    for i in range(len(state.sessions)):
        cands, w = candidates_for(state, i, budget, synth)
        out.extend(cands)
        wedged = wedged or w
    if not out:
        return [], wedged
    low = min(c.phase for c in out)
    return [c for c in out if c.phase == low], wedged


def apply_candidate(state: WorldState, cand: Candidate) -> Step:
    sess = state.sessions[cand.session - 1]
    agent = state.agent_of(sess)
    know = state.knowledge[agent]
    intr = state.knowledge[state.setup.intruder]
    act = cand.action

    if act.kind in ("send", "send*"):
        for name, value in cand.fresh:
            know.terms.add(value)
            state.used_basics.add(value.name)
            sess.sigma[name] = value
        intr.terms.add(act.term)
        if act.assertion is not None:
            intr.assertions.add(act.assertion)
        if act.kind == "send":
            intr.assertions.add(SentT(act.agent, act.term))
            if act.assertion is not None:
                intr.assertions.add(SentA(act.agent, act.assertion))
            state.traffic.append(Traffic(act.term, act.assertion, agent))
        else:
            state.traffic.append(Traffic(act.term, act.assertion, None))
    elif act.kind == "recv":
        know.terms.add(act.term)
        if act.assertion is not None:
            know.assertions.add(act.assertion)
        sess.sigma.update(dict(cand.binds))
    elif act.kind == "insert":
        know.assertions.add(act.assertion)
        ctx = DeriveContext(frozenset(know.terms), frozenset(know.assertions))
        if not ctx.build_failed and any(l.bottom for l in ctx.tree.leaves()):
            state.warnings.append(
                f"session {cand.session}: insert made {agent}'s theory inconsistent")
    # confirm and deny leave knowledge unchanged
    sess.pc += 1
    return Step(cand.session, act, cand.fresh, cand.binds)


def _copy_state(s: WorldState) -> WorldState:
    return WorldState(
        s.proto, s.setup,
        {n: Knowledge(set(k.terms), set(k.assertions)) for n, k in s.knowledge.items()},
        [SessionState(x.role, dict(x.sigma), x.pc) for x in s.sessions],
        list(s.traffic), list(s.warnings), set(s.used_basics))


def _all_done(state: WorldState) -> bool:
    return all(s.pc >= len(state.proto.roles[s.role].actions)
               for s in state.sessions)


def _fingerprint(state: WorldState):
    """Two interleavings with the same counters, bindings and traffic give
    the same knowledge everywhere, so this identifies the state."""
    return (
        tuple(s.pc for s in state.sessions),
        tuple(tuple(sorted(s.sigma.items())) for s in state.sessions),
        frozenset((tr.term, tr.assertion, tr.sender) for tr in state.traffic),
    )


def simulate(proto: Protocol, setup: Setup, seed: int = 0,
             budget: SearchBudget = DEFAULT_BUDGET,
             synth: bool = False, max_states: int = 20_000) -> tuple[Run, WorldState]:
    """Search for a run that completes every session, exploring candidate
    choices depth first in a seeded random order.  Branches where a session
    is permanently stuck are cut early.  Returns the first completing run,
    or the longest partial run found if none completes within max_states."""
    rng = random.Random(seed)
    visited = 0
    best: tuple[list[Step], WorldState] | None = None
    seen: set = set()

    def rec(state: WorldState, steps: list[Step]) -> tuple[list[Step], WorldState] | None:
        nonlocal visited, best
        if _all_done(state):
            return steps, state
        fp = _fingerprint(state)
        if fp in seen:
            return None
        seen.add(fp)
        visited += 1
        if visited > max_states:
            return None
        cands, wedged = enabled_actions(state, budget, synth)
        if wedged or not cands:
            if best is None or len(steps) > len(best[0]):
                best = (steps, state)
            return None
        # A step without bindings has no choice in it and only ever adds
        # knowledge, so taking it can never make a completable state
        # uncompletable.  Apply one straight away instead of branching.
        eager = [c for c in cands if not c.binds]
        if eager:
            cand = min(eager, key=lambda c: c.session)
            child = _copy_state(state)
            step = apply_candidate(child, cand)
            return rec(child, steps + [step])
        # Branch over the bindings of a single session first (the one with
        # the fewest options).  Only if all of those fail fall back to the
        # other sessions' candidates, in case this session's good option has
        # not been sent yet; the memo keeps the fallback from re-walking
        # states the first pass already settled.
        by_sess: dict[int, list[Candidate]] = {}
        for c in cands:
            by_sess.setdefault(c.session, []).append(c)
        picked = min(by_sess.values(), key=lambda cs: (len(cs), cs[0].session))
        rest = [c for c in cands if c.session != picked[0].session]
        for group in (picked, rest):
            group.sort(key=lambda c: (c.session, repr(c.binds)))
            rng.shuffle(group)
            for cand in group:
                child = _copy_state(state)
                step = apply_candidate(child, cand)
                hit = rec(child, steps + [step])
                if hit is not None:
                    return hit
        return None

    state0 = initial_state(proto, setup)
    hit = rec(state0, [])
    if hit is not None:
        steps, state = hit
        return Run(proto, setup, seed, steps, complete=True,
                   warnings=list(state.warnings)), state
    if best is None:
        best = ([], state0)
    steps, state = best
    state.warnings.append("no completing run found")
    return Run(proto, setup, seed, steps, complete=False,
               warnings=list(state.warnings)), state


# ---------------------------------------------------------------------------
# validation

def validate_run(run: Run, budget: SearchBudget = DEFAULT_BUDGET) -> tuple[bool, list[str], WorldState]:
    state = initial_state(run.proto, run.setup)
    problems: list[str] = []
    for n, step in enumerate(run.steps, 1):
        if not 1 <= step.session <= len(state.sessions):
            problems.append(f"step {n}: no session {step.session}")
            break
        sess = state.sessions[step.session - 1]
        role = run.proto.roles[sess.role]
        if sess.pc >= len(role.actions):
            problems.append(f"step {n}: session {step.session} already finished")
            break
        action = role.actions[sess.pc]
        agent = state.agent_of(sess)
        know = state.knowledge[agent]
        intr = state.knowledge[state.setup.intruder]

        sigma = dict(sess.sigma)
        for name, value in step.fresh:
            if name not in action.fresh:
                problems.append(f"step {n}: unexpected fresh variable {name}")
            if value.name in state.used_basics:
                problems.append(f"step {n}: fresh value {value.name} is not fresh")
            sigma[name] = value
        if set(n0 for n0, _ in step.fresh) != set(action.fresh):
            problems.append(f"step {n}: fresh variables do not match the action")
        sigma.update(dict(step.binds))
        inst = _apply(action, sigma)
        if not inst.is_ground():
            problems.append(f"step {n}: action not ground after instantiation")
            break
        if inst != step.action:
            problems.append(f"step {n}: recorded action does not match the role")
            break

        if action.kind in ("send", "send*"):
            base = frozenset(know.terms) | {b for _, b in step.fresh}
            if not DYContext(base).derivable(inst.term):
                problems.append(f"step {n}: payload not derivable by {agent}")
            if inst.assertion is not None:
                v = derive_safe(base, frozenset(know.assertions), inst.assertion, budget)
                if not v.derivable:
                    problems.append(f"step {n}: send assertion not derivable")
        elif action.kind == "recv":
            ok = any(tr.term == inst.term
                     and (inst.assertion is None or tr.assertion == inst.assertion)
                     for tr in state.traffic)
            if not ok:
                problems.append(f"step {n}: received message never offered")
            if not DYContext(frozenset(intr.terms)).derivable(inst.term):
                problems.append(f"step {n}: message not derivable on the network")
            if inst.assertion is not None:
                v = derive_safe(frozenset(intr.terms), frozenset(intr.assertions),
                                inst.assertion, budget)
                if not v.derivable:
                    problems.append(f"step {n}: network cannot justify the assertion")
        elif action.kind == "confirm":
            v = derive(frozenset(know.terms), frozenset(know.assertions),
                       inst.assertion, budget)
            if not v.derivable:
                problems.append(f"step {n}: confirm not derivable")
        elif action.kind == "deny":
            v = derive(frozenset(know.terms), frozenset(know.assertions),
                       inst.assertion, budget)
            if v.derivable:
                problems.append(f"step {n}: deny of a derivable assertion")
            elif v.budget_exhausted:
                problems.append(f"step {n}: deny not definite under the budget")

        cand = Candidate(step.session, inst, action.phase, step.fresh, step.binds)
        apply_candidate(state, cand)
    return (not problems, problems, state)


# ---------------------------------------------------------------------------
# traces

def write_trace(run: Run) -> str:
    lines = [f"run {run.proto.name} seed={run.seed if run.seed is not None else '-'}"]
    for i, (role, sigma) in enumerate(run.setup.sessions, 1):
        parts = ", ".join(f"{k}={print_term(v)}" for k, v in sorted(sigma.items()))
        lines.append(f"session {i} {role} {parts}")
    for i, step in enumerate(run.steps, 1):
        line = f"step {i} session {step.session}"
        if step.fresh:
            line += " fresh " + ", ".join(f"{n}={b.name}:{b.sort}"
                                          for n, b in step.fresh)
        if step.binds:
            line += " bind " + ", ".join(f"{k}={print_term(v)}"
                                         for k, v in step.binds)
        lines.append(line)
    return "\n".join(lines) + "\n"


_RUN_RE = re.compile(r"^run\s+(\S+)\s+seed=(\S+)$")
_SESSION_RE = re.compile(r"^session\s+(\d+)\s+(\w+)\s*(.*)$")
_STEP_RE = re.compile(r"^step\s+(\d+)\s+session\s+(\d+)\s*(.*)$")


def parse_trace(text: str, proto: Protocol, setup: Setup | None = None) -> Run:
    """Rebuild a run from its trace.  The protocol must be the one the trace
    was produced from; the setup (initial knowledge) defaults to bare
    sessions as listed in the trace."""
    decls = Declarations(
        agents=set(proto.decls.agents),
        nonces=set(proto.decls.nonces),
        keys=set(proto.decls.keys),
        predicates=dict(proto.decls.predicates),
        constructors=dict(proto.decls.constructors),
    )
    lines = [l.strip() for l in text.splitlines() if l.strip()]
    if not lines:
        raise ParseError("empty trace", "trace")
    m = _RUN_RE.match(lines[0])
    if not m or m.group(1) != proto.name:
        raise ParseError(f"trace is not for protocol {proto.name}", "trace:1")
    seed = None if m.group(2) == "-" else int(m.group(2))

    sessions: list[tuple[str, dict[str, Term]]] = []
    i = 1
    while i < len(lines) and lines[i].startswith("session"):
        m = _SESSION_RE.match(lines[i])
        if not m:
            raise ParseError(f"bad session line: {lines[i]!r}", f"trace:{i + 1}")
        if int(m.group(1)) != len(sessions) + 1:
            raise ParseError("sessions out of order", f"trace:{i + 1}")
        role = m.group(2)
        if role not in proto.roles:
            raise ParseError(f"unknown role {role!r}", f"trace:{i + 1}")
        sigma: dict[str, Term] = {}
        rest = m.group(3).strip()
        if rest:
            for part in rest.split(","):
                k, _, vtxt = part.partition("=")
                sigma[k.strip()] = parse_term(vtxt.strip(), decls, f"trace:{i + 1}")
        sessions.append((role, sigma))
        i += 1

    if setup is None:
        setup = Setup(sessions=sessions)
    else:
        if [(r, dict(s)) for r, s in setup.sessions] != sessions:
            raise ParseError("trace sessions do not match the given setup", "trace")

    sess_states = [SessionState(r, dict(s)) for r, s in sessions]
    steps: list[Step] = []
    for j in range(i, len(lines)):
        line = lines[j]
        loc = f"trace:{j + 1}"
        m = _STEP_RE.match(line)
        if not m:
            raise ParseError(f"bad step line: {line!r}", loc)
        if int(m.group(1)) != len(steps) + 1:
            raise ParseError("steps out of order", loc)
        snum = int(m.group(2))
        if not 1 <= snum <= len(sessions):
            raise ParseError(f"no session {snum}", loc)
        rest = m.group(3).strip()
        fresh: list[tuple[str, Basic]] = []
        binds: list[tuple[str, Term]] = []
        if rest:
            if rest.startswith("fresh"):
                body = rest[len("fresh"):].strip()
                bind_part = None
                if " bind " in body:
                    body, bind_part = body.split(" bind ", 1)
                for chunk in body.split(","):
                    nm, _, bs = chunk.strip().partition("=")
                    bname, _, bsort = bs.partition(":")
                    if bsort not in (NONCE, KEY):
                        raise ParseError(f"bad fresh sort {bsort!r}", loc)
                    b = Basic(bname, bsort)
                    fresh.append((nm.strip(), b))
                    getattr(decls, "keys" if bsort == KEY else "nonces").add(bname)
                rest = ("bind " + bind_part) if bind_part else ""
            if rest.startswith("bind"):
                body = rest[len("bind"):].strip()
                depth = 0
                chunks, cur = [], []
                for ch in body:
                    if ch in "({":
                        depth += 1
                    elif ch in ")}":
                        depth -= 1
                    if ch == "," and depth == 0:
                        chunks.append("".join(cur))
                        cur = []
                    else:
                        cur.append(ch)
                chunks.append("".join(cur))
                for chunk in chunks:
                    k, _, vtxt = chunk.strip().partition("=")
                    binds.append((k.strip(), parse_term(vtxt.strip(), decls, loc)))
            elif rest and not rest.startswith("fresh"):
                raise ParseError(f"bad step suffix {rest!r}", loc)

        st = sess_states[snum - 1]
        role = proto.roles[st.role]
        if st.pc >= len(role.actions):
            raise ParseError(f"session {snum} has no pending action", loc)
        action = role.actions[st.pc]
        sigma = dict(st.sigma)
        for nm, b in fresh:
            sigma[nm] = b
        sigma.update(dict(binds))
        inst = _apply(action, sigma)
        if not inst.is_ground():
            raise ParseError(f"step {len(steps) + 1} leaves variables unbound", loc)
        steps.append(Step(snum, inst, tuple(fresh), tuple(binds)))
        st.sigma = sigma
        st.pc += 1

    return Run(proto, setup, seed, steps)
