"""Shared store for acceptance PASS/FAIL lines, printed in the terminal summary."""

LINES: list[str] = []
