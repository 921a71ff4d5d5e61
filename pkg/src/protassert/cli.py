"""Command line interface.

Exit codes: 0 for a positive outcome (derivable, valid, complete,
indistinguishable), 1 for a definite negative one, 2 for usage or parse
errors, 3 when the search budget left the question open.
"""
from __future__ import annotations

import argparse
import sys

from .anonymity import check_anonymity, render_report
from .builtins import BUILTINS, builtin_setup
from .engine import DEFAULT_BUDGET, ProofNode, SearchBudget, derive, derive_safe
from .dy import TermProof
from .protocol import Protocol, validate_protocol
from .runtime import parse_trace, simulate, validate_run, write_trace
from .syntax import (
    ParseError,
    parse_protocol,
    parse_sequent,
    parse_sessions,
    print_assertion,
    print_term,
)
from .builtins import Setup

EX_OK = 0
EX_NEGATIVE = 1
EX_USAGE = 2
EX_INCONCLUSIVE = 3


def _budget(args) -> SearchBudget:
    return SearchBudget(
        witness_depth=args.depth,
        branch_cap=args.branches,
        merge_cap=DEFAULT_BUDGET.merge_cap,
        node_cap=DEFAULT_BUDGET.node_cap,
        candidate_cap=DEFAULT_BUDGET.candidate_cap,
    )


def _load_protocol(name_or_path: str):
    if name_or_path in BUILTINS:
        return name_or_path, BUILTINS[name_or_path]()
    with open(name_or_path, encoding="utf-8") as fh:
        text = fh.read()
    return None, parse_protocol(text, name_or_path)


def _render_term_proof(p: TermProof, indent: str, out: list[str]) -> None:
    out.append(f"{indent}[{p.rule}] {print_term(p.concl)}")
    for q in p.premises:
        _render_term_proof(q, indent + "  ", out)


def _render_proof(node: ProofNode, indent: str, out: list[str]) -> None:
    extra = ""
    if node.witness is not None:
        extra = f" witness {print_term(node.witness)}"
    if node.fresh is not None:
        extra += f" fresh {node.fresh}"
    out.append(f"{indent}[{node.rule}] {print_assertion(node.concl)}{extra}")
    for tp in node.term_proofs:
        _render_term_proof(tp, indent + "  | ", out)
    for q in node.premises:
        _render_proof(q, indent + "  ", out)


def cmd_derive(args) -> int:
    try:
        with open(args.file, encoding="utf-8") as fh:
            seq = parse_sequent(fh.read(), args.file)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EX_USAGE
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EX_USAGE
    fn = derive_safe if args.safe else derive
    verdict = fn(seq.terms, seq.assertions, seq.goal, _budget(args))
    if verdict.derivable:
        print("derivable")
        if args.proof and verdict.proof is not None:
            lines: list[str] = []
            _render_proof(verdict.proof, "", lines)
            print("\n".join(lines))
        return EX_OK
    if verdict.budget_exhausted:
        print("inconclusive: search budget exhausted")
        return EX_INCONCLUSIVE
    print("not derivable")
    return EX_NEGATIVE


def cmd_validate(args) -> int:
    try:
        _, proto = _load_protocol(args.protocol)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EX_USAGE
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EX_USAGE
    diags = validate_protocol(proto)
    for d in diags:
        where = f"{d.role}[{d.index + 1}]" if d.role is not None else proto.name
        print(f"{d.code} at {where}: {d.detail}")
    if diags:
        return EX_NEGATIVE
    print(f"protocol {proto.name} validates: "
          f"{len(proto.roles)} roles, {len(proto.phases)} phases")
    return EX_OK


def _setup_for(args, name: str | None, proto: Protocol,
               anonymity: bool = False) -> Setup:
    if getattr(args, "sessions", None):
        return Setup(sessions=parse_sessions(args.sessions, proto))
    if name is None:
        raise ParseError("a protocol file needs --sessions", "cli")
    voters = getattr(args, "voters", None) or 2
    return builtin_setup(name, proto, anonymity=anonymity, voters=voters)


def cmd_simulate(args) -> int:
    try:
        name, proto = _load_protocol(args.protocol)
        setup = _setup_for(args, name, proto)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EX_USAGE
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EX_USAGE
    run, state = simulate(proto, setup, seed=args.seed, budget=_budget(args))
    sys.stdout.write(write_trace(run))
    for w in run.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return EX_OK if run.complete else EX_NEGATIVE


def cmd_replay(args) -> int:
    try:
        name, proto = _load_protocol(args.protocol)
        with open(args.trace, encoding="utf-8") as fh:
            text = fh.read()
        setup = None
        if getattr(args, "sessions", None):
            setup = Setup(sessions=parse_sessions(args.sessions, proto))
        elif name is not None:
            setup = builtin_setup(name, proto)
        run = parse_trace(text, proto, setup)
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EX_USAGE
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EX_USAGE
    ok, problems, _ = validate_run(run, _budget(args))
    for p in problems:
        print(p)
    if ok:
        print(f"run replays: {len(run.steps)} steps check out")
        return EX_OK
    return EX_NEGATIVE


def cmd_anonymity(args) -> int:
    try:
        name, proto = _load_protocol(args.protocol)
        setup = _setup_for(args, name, proto, anonymity=True)
    except (OSError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EX_USAGE
    except ParseError as e:
        print(f"parse error: {e}", file=sys.stderr)
        return EX_USAGE
    verdicts: list[str] = []
    for seed in range(args.seeds):
        rep = check_anonymity(proto, setup, seed=seed, tests=args.tests,
                              depth=args.test_depth, budget=_budget(args),
                              voter_role=args.voter_role)
        print(render_report(rep))
        verdicts.append(rep.verdict)
    if all(v == "indistinguishable" for v in verdicts):
        print(f"all {args.seeds} seeds indistinguishable")
        return EX_OK
    if any(v == "distinguished" for v in verdicts):
        return EX_NEGATIVE
    return EX_INCONCLUSIVE


def cmd_examples(args) -> int:
    from .builtins import FOO_LINKED_SOURCE, FOO_SOURCE, HELIOS_SOURCE

    sources = {
        "foo": FOO_SOURCE,
        "foo-linked": FOO_LINKED_SOURCE,
        "helios": HELIOS_SOURCE,
    }
    if args.name:
        if args.name not in sources:
            print(f"error: unknown example {args.name!r}; "
                  f"pick from {', '.join(sorted(sources))}", file=sys.stderr)
            return EX_USAGE
        sys.stdout.write(sources[args.name])
        return EX_OK
    for name in sorted(sources):
        print(name)
    return EX_OK


def build_parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(
        prog="protassert",
        description="symbolic analysis of protocols that send assertions "
                    "along with their messages",
    )
    sub = top.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--depth", type=int, default=2,
                       help="witness instantiation depth (default 2)")
        p.add_argument("--branches", type=int, default=4096,
                       help="case split limit (default 4096)")

    p = sub.add_parser("derive", help="decide a sequent from a file")
    p.add_argument("file", help="sequent file: terms/assertions/goal sections")
    p.add_argument("--safe", action="store_true",
                   help="only rules that transfer to any larger context")
    p.add_argument("--proof", action="store_true", help="print the proof tree")
    common(p)
    p.set_defaults(fn=cmd_derive)

    p = sub.add_parser("validate", help="check a protocol definition")
    p.add_argument("protocol", help="builtin name or protocol file")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser("simulate", help="search for a completing run")
    p.add_argument("protocol", help="builtin name or protocol file")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sessions", help="session list, e.g. 'voter(id=V0, v=v0); ...'")
    common(p)
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("replay", help="re-check every step of a recorded run")
    p.add_argument("protocol", help="builtin name or protocol file")
    p.add_argument("trace", help="trace file produced by simulate")
    p.add_argument("--sessions", help="override the initial knowledge scenario")
    common(p)
    p.set_defaults(fn=cmd_replay)

    p = sub.add_parser("anonymity", help="vote privacy check by run swapping")
    p.add_argument("protocol", help="builtin name or protocol file")
    p.add_argument("--seeds", type=int, default=20,
                   help="number of independent runs (default 20)")
    p.add_argument("--tests", type=int, default=500,
                   help="random observer tests per run (default 500)")
    p.add_argument("--test-depth", type=int, default=3,
                   help="random test nesting depth (default 3)")
    p.add_argument("--voter-role", help="role that casts the votes")
    p.add_argument("--voters", type=int, default=2,
                   help="voter sessions in the builtin scenarios (2 to 4)")
    p.add_argument("--sessions", help="override the scenario")
    common(p)
    p.set_defaults(fn=cmd_anonymity)

    p = sub.add_parser("examples", help="list or print the builtin protocols")
    p.add_argument("name", nargs="?", help="print this protocol's definition")
    p.set_defaults(fn=cmd_examples)

    return top


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EX_USAGE if e.code not in (0, None) else 0
    return args.fn(args)


if __name__ == "__main__":
    raise SystemExit(main())
