"""Shared registry for the acceptance summary printed after the test run.

Each acceptance test records exactly one line describing its outcome; the
``pytest_terminal_summary`` hook in ``conftest.py`` prints the collected lines
so the verdict for every criterion is visible even when stdout is captured.
"""

lines: list[str] = []


def record(criterion: str, passed: bool, detail: str, status: str | None = None) -> None:
    tag = status if status is not None else ("PASS" if passed else "FAIL")
    lines.append(f"[{tag}] {criterion}: {detail}")
