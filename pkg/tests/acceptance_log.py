"""Collects one PASS/FAIL line per acceptance criterion."""
from __future__ import annotations

LINES: list[str] = []


def record(number: int, passed: bool, text: str) -> str:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d}: {text}"
    LINES.append(line)
    print(line, flush=True)
    return line
