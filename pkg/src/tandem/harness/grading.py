"""Answer extraction and grading.

``boxed_math`` takes the last ``\\boxed{...}`` (falling back to the last
number in the text), normalizes LaTeX spacing, and compares numerically when
both sides parse as rationals or decimals, otherwise as strings.
"""

from __future__ import annotations

import json
import re
import shlex
import shutil
import subprocess
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Sequence

from ..errors import GraderUnavailableError

GRADERS = ("boxed_math", "numeric", "exact", "external")
NUMERIC_TOL = 1e-6

_NUMBER = re.compile(r"-?\d+(?:,\d{3})*(?:\.\d+)?(?:/\d+)?|-?\.\d+")


def extract_boxed(text: str) -> str | None:
    """Content of the last well-formed ``\\boxed{...}`` (or ``\\fbox{...}``), braces balanced."""
    if not text:
        return None
    starts = [m.end() for m in re.finditer(r"\\(?:boxed|fbox)\s*", text)]
    for i in reversed(starts):
        if i >= len(text) or text[i] != "{":
            continue
        depth = 0
        for j in range(i, len(text)):
            if text[j] == "{":
                depth += 1
            elif text[j] == "}":
                depth -= 1
                if depth == 0:
                    return text[i + 1 : j].strip()
    return None


def extract_last_number(text: str) -> str | None:
    found = _NUMBER.findall(text or "")
    return found[-1] if found else None


def _unwrap(s: str, command: str) -> str:
    # \text{abc} -> abc, one level at a time
    pattern = re.compile(r"\\" + command + r"\s*\{([^{}]*)\}")
    while True:
        new = pattern.sub(r"\1", s)
        if new == s:
            return s
        s = new


def normalize(s: str) -> str:
    s = s.strip().strip("$").strip()
    s = re.sub(r"\\[dt]frac", r"\\frac", s)
    for cmd in ("text", "textbf", "mathrm", "mbox"):
        s = _unwrap(s, cmd)
    s = re.sub(r"\\left|\\right|\\displaystyle", "", s)
    s = re.sub(r"\\[!,;:]|\\ |~", "", s)
    s = s.replace("^\\circ", "").replace("^{\\circ}", "").replace("\\%", "").replace("%", "")
    s = re.sub(r"\s+", "", s)
    s = s.rstrip(".")
    # \frac12 style shorthand
    s = re.sub(r"\\frac(\d)(\d)", r"\\frac{\1}{\2}", s)
    return s


def parse_number(s: str) -> Fraction | None:
    """Rational value of a normalized answer, or None if it is not a plain number."""
    s = normalize(s)
    m = re.fullmatch(r"(-?)\\frac\{(-?[\d.]+)\}\{(-?[\d.]+)\}", s)
    try:
        if m:
            value = Fraction(m.group(2)) / Fraction(m.group(3))
            return -value if m.group(1) else value
        if re.fullmatch(r"-?\d{1,3}(,\d{3})+(\.\d+)?", s):
            s = s.replace(",", "")
        if re.fullmatch(r"[-+]?(\d+(\.\d*)?|\.\d+)([eE][-+]?\d+)?(/\d+)?", s):
            return Fraction(s)
    except (ZeroDivisionError, ValueError):
        return None
    return None


def _numbers_match(a: Fraction, b: Fraction) -> bool:
    return abs(float(a - b)) <= NUMERIC_TOL * max(1.0, abs(float(a)), abs(float(b)))


def _equivalent(pred: str, gold: str) -> bool:
    a, b = parse_number(pred), parse_number(gold)
    if a is not None and b is not None:
        return _numbers_match(a, b)
    return normalize(pred) == normalize(gold)


@dataclass(frozen=True)
class GradeResult:
    correct: int
    extracted: str | None
    used_fallback: bool = False


def grade_boxed_math(answer: str, gold: str) -> GradeResult:
    pred = extract_boxed(answer)
    fallback = pred is None
    if fallback:
        pred = extract_last_number(answer)
    if pred is None:
        return GradeResult(0, None, True)
    target = extract_boxed(gold) or gold
    return GradeResult(int(_equivalent(pred, target)), pred, fallback)


def grade_numeric(answer: str, gold: str) -> GradeResult:
    a = parse_number(answer)
    if a is None:
        tail = extract_last_number(answer)
        a = parse_number(tail) if tail is not None else None
    b = parse_number(gold)
    if b is None:
        tail = extract_last_number(gold)
        b = parse_number(tail) if tail is not None else None
    if a is None or b is None:
        return GradeResult(0, None)
    return GradeResult(int(_numbers_match(a, b)), str(a))


def grade_exact(answer: str, gold: str) -> GradeResult:
    return GradeResult(int(answer.strip() == gold.strip()), answer.strip())


def grade_external(answer: str, gold: str, command: str | Sequence[str], timeout: float = 60.0) -> GradeResult:
    """Run ``command`` with ``{"answer", "gold"}`` JSON on stdin; stdout must be 0 or 1."""
    argv = shlex.split(command) if isinstance(command, str) else list(command)
    if not argv or shutil.which(argv[0]) is None:
        raise GraderUnavailableError(f"external grader command not found: {argv[:1]}")
    try:
        proc = subprocess.run(
            argv,
            input=json.dumps({"answer": answer, "gold": gold}),
            capture_output=True,
            text=True,
            timeout=timeout,
        )
    except (OSError, subprocess.TimeoutExpired) as exc:
        raise GraderUnavailableError(f"external grader failed: {exc}") from exc
    verdict = proc.stdout.strip()
    if proc.returncode != 0 or verdict not in ("0", "1"):
        raise GraderUnavailableError(
            f"external grader exited {proc.returncode} with output {verdict[:80]!r}"
        )
    return GradeResult(int(verdict), None)


def grade_detail(
    answer: str, gold: str, grader: str = "boxed_math", command: str | Sequence[str] | None = None
) -> GradeResult:
    if not gold:
        raise ValueError("gold answer must be non-empty")
    if grader == "boxed_math":
        return grade_boxed_math(answer, gold)
    if grader == "numeric":
        return grade_numeric(answer, gold)
    if grader == "exact":
        return grade_exact(answer, gold)
    if grader == "external":
        if command is None:
            raise GraderUnavailableError("external grader needs a command")
        return grade_external(answer, gold, command)
    raise ValueError(f"unknown grader {grader!r}; expected one of {GRADERS}")


def grade_answer(
    answer: str, gold: str, grader: str = "boxed_math", command: str | Sequence[str] | None = None
) -> int:
    return grade_detail(answer or "", gold, grader, command).correct


def make_grader(grader: str = "boxed_math", command: str | Sequence[str] | None = None) -> Callable[[str, str], int]:
    if grader not in GRADERS:
        raise ValueError(f"unknown grader {grader!r}; expected one of {GRADERS}")
    return lambda answer, gold: grade_answer(answer, gold, grader, command)
