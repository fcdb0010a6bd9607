"""Collects one pass/fail line per acceptance criterion."""
LINES = []


def verdict(number: int, title: str, passed: bool, detail: str) -> bool:
    line = f"[{'PASS' if passed else 'FAIL'}] AC{number:02d} {title}: {detail}"
    LINES.append(line)
    print(line)
    return passed
