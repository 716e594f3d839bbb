"""Acceptance gate: every criterion at its stated tolerance, one line each.

Run with ``pytest tests/test_acceptance.py`` (the lines appear in the
terminal summary) or ``python tests/test_acceptance.py``.
"""
import json

import pytest

from roadfield import cli
from roadfield.verification import CHECKS

from conftest import ACCEPTANCE_LINES

SEED = 0
# cheap checks that exercise the seeded random inputs
DETERMINISM_CHECKS = ("separable", "oracle", "scheme-properties")


def record(criterion, name, passed, margin):
    flag = "PASS" if passed else "FAIL"
    line = f"[{flag}] {criterion:2d} {name:<22s} margin {margin:+.3e}"
    ACCEPTANCE_LINES[criterion] = line
    print(line)
    return line


@pytest.mark.slow
@pytest.mark.parametrize("name", list(CHECKS))
def test_criterion(name):
    result = CHECKS[name](SEED)
    record(result.criterion, result.name, result.passed, result.margin)
    assert result.passed, json.dumps(result.as_dict(), default=str)[:2000]


def _verify_digests(tmp_path, tag):
    out = tmp_path / tag
    argv = ["verify", "--seed", str(SEED), "--out", str(out)]
    for name in DETERMINISM_CHECKS:
        argv += ["--check", name]
    assert cli.run(argv) == 0
    return json.loads((out / "manifest.json").read_text())["outputs"]


def test_determinism(tmp_path):
    first = _verify_digests(tmp_path, "first")
    second = _verify_digests(tmp_path, "second")
    same = bool(first) and first == second
    record(18, "determinism", same, 0.0 if same else -1.0)
    assert same


if __name__ == "__main__":
    import sys
    import tempfile
    from pathlib import Path

    ok = True
    for name, fn in CHECKS.items():
        r = fn(SEED)
        record(r.criterion, r.name, r.passed, r.margin)
        ok &= r.passed
    with tempfile.TemporaryDirectory() as tmp:
        same = _verify_digests(Path(tmp), "first") == _verify_digests(Path(tmp), "second")
        record(18, "determinism", same, 0.0 if same else -1.0)
    sys.exit(0 if ok and same else 1)
