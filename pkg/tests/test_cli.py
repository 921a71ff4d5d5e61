from __future__ import annotations

from protassert.cli import main
from protassert.syntax import parse_protocol

LEAK = """\
# an agent holding only the ciphertext learns the plaintext from two
# certificates that each reveal it only up to a disjunction
nonces: v, 0, 1, 2
keys: k
terms: {v}k
assertions:
ex x, y: ({v}k = {x}y /\\ (x = 0 \\/ x = 1))
ex x, y: ({v}k = {x}y /\\ (x = 0 \\/ x = 2))
goal: ex y: {v}k = {0}y
"""

UNDERIVABLE = """\
nonces: n, m
terms: n
goal: n = m
"""


def _write(tmp_path, name: str, text: str) -> str:
    f = tmp_path / name
    f.write_text(text, encoding="utf-8")
    return str(f)


def test_derive_leak_exits_zero(tmp_path, capsys):
    path = _write(tmp_path, "leak.seq", LEAK)
    assert main(["derive", path]) == 0
    assert "derivable" in capsys.readouterr().out


def test_derive_proof_flag_prints_the_tree(tmp_path, capsys):
    path = _write(tmp_path, "leak.seq", LEAK)
    assert main(["derive", path, "--proof"]) == 0
    out = capsys.readouterr().out
    assert "[exists_e]" in out
    assert "[or_e]" in out
    assert "[exists_i]" in out


def test_derive_safe_mode_blocks_the_leak(tmp_path, capsys):
    path = _write(tmp_path, "leak.seq", LEAK)
    assert main(["derive", path, "--safe"]) == 1
    assert "not derivable" in capsys.readouterr().out


def test_derive_negative_exits_one(tmp_path, capsys):
    path = _write(tmp_path, "bad.seq", UNDERIVABLE)
    assert main(["derive", path]) == 1
    assert "not derivable" in capsys.readouterr().out


def test_derive_parse_error_exits_two(tmp_path, capsys):
    path = _write(tmp_path, "broken.seq", "goal: ] [\n")
    assert main(["derive", path]) == 2
    assert "parse error" in capsys.readouterr().err


def test_derive_missing_file_exits_two(tmp_path, capsys):
    assert main(["derive", str(tmp_path / "nope.seq")]) == 2
    assert "error" in capsys.readouterr().err


def test_validate_builtins(capsys):
    for name in ("foo", "foo-linked", "helios"):
        assert main(["validate", name]) == 0
        assert "validates" in capsys.readouterr().out


def test_validate_flags_a_broken_protocol(tmp_path, capsys):
    src = """\
protocol bad
agents A, B
nonces n

role r:
  send id : (n, x)
"""
    path = _write(tmp_path, "bad.proto", src)
    assert main(["validate", path]) == 1
    assert "unbound-variable" in capsys.readouterr().out


def test_simulate_is_reproducible(capsys):
    assert main(["simulate", "foo", "--seed", "3"]) == 0
    first = capsys.readouterr().out
    assert main(["simulate", "foo", "--seed", "3"]) == 0
    second = capsys.readouterr().out
    assert first == second
    assert first.startswith("run foo seed=3")


def test_replay_accepts_a_simulated_trace(tmp_path, capsys):
    assert main(["simulate", "helios", "--seed", "1"]) == 0
    trace = capsys.readouterr().out
    path = _write(tmp_path, "run.trace", trace)
    assert main(["replay", "helios", path]) == 0
    assert "steps check out" in capsys.readouterr().out


def test_replay_rejects_a_tampered_trace(tmp_path, capsys):
    assert main(["simulate", "foo", "--seed", "0"]) == 0
    trace = capsys.readouterr().out
    # claim the first commitment came from the other voter
    tampered = trace.replace("bind W=V0, env={v0}k_3",
                             "bind W=V1, env={v0}k_3", 1)
    assert tampered != trace
    path = _write(tmp_path, "cut.trace", tampered)
    assert main(["replay", "foo", path]) == 1
    out = capsys.readouterr().out
    assert "never offered" in out or "cannot justify" in out


def test_anonymity_foo_is_clean(capsys):
    rc = main(["anonymity", "foo", "--seeds", "1", "--tests", "60"])
    out = capsys.readouterr().out
    assert rc == 0, out
    assert "verdict=indistinguishable" in out
    assert "all 1 seeds indistinguishable" in out


def test_anonymity_linked_variant_fails(capsys):
    rc = main(["anonymity", "foo-linked", "--seeds", "1", "--tests", "60"])
    out = capsys.readouterr().out
    assert rc == 1, out
    assert "verdict=distinguished" in out


def test_anonymity_three_voters(capsys):
    rc = main(["anonymity", "foo", "--seeds", "1", "--tests", "40",
               "--voters", "3"])
    out = capsys.readouterr().out
    assert rc == 0, out


def test_examples_listing_and_source(capsys):
    assert main(["examples"]) == 0
    names = capsys.readouterr().out.split()
    assert names == ["foo", "foo-linked", "helios"]
    assert main(["examples", "foo"]) == 0
    src = capsys.readouterr().out
    proto = parse_protocol(src, "foo")
    assert proto.name == "foo"


def test_examples_unknown_name(capsys):
    assert main(["examples", "nonesuch"]) == 2
    assert "unknown example" in capsys.readouterr().err


def test_usage_error_exits_two(capsys):
    assert main(["frobnicate"]) == 2
