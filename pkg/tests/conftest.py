"""Collects acceptance outcomes and prints one line per criterion at the end of the run."""

import contextlib

import pytest

ACCEPTANCE: dict[str, tuple[str, str]] = {}


@contextlib.contextmanager
def criterion(key: str, title: str):
    """Record PASS/FAIL/SKIP for an acceptance criterion around the checking block."""
    notes: list[str] = []
    try:
        yield notes
    except pytest.skip.Exception as exc:
        ACCEPTANCE[key] = ("SKIP", f"{title}: {exc.msg}")
        raise
    except BaseException as exc:
        ACCEPTANCE[key] = ("FAIL", f"{title}: {type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        raise
    else:
        ACCEPTANCE[key] = ("PASS", f"{title}" + (f" ({'; '.join(notes)})" if notes else ""))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.rstrip("abcdefghijklmnopqrstuvwxyz")), k)):
        status, text = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key:<4} {status:<4}  {text}")
