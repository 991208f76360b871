"""Harmonized System helpers: code validation and the chapter to Section table."""

from __future__ import annotations

import csv
import re
from pathlib import Path

HS4_PATTERN = re.compile(r"^\d{4}$")

# (first chapter, last chapter, section number)
_SECTION_RANGES = [
    (1, 5, 1),
    (6, 14, 2),
    (15, 15, 3),
    (16, 24, 4),
    (25, 27, 5),
    (28, 38, 6),
    (39, 40, 7),
    (41, 43, 8),
    (44, 46, 9),
    (47, 49, 10),
    (50, 63, 11),
    (64, 67, 12),
    (68, 70, 13),
    (71, 71, 14),
    (72, 83, 15),
    (84, 85, 16),
    (86, 89, 17),
    (90, 92, 18),
    (93, 93, 19),
    (94, 96, 20),
    (97, 97, 21),
]

CHAPTER_SECTION = {
    ch: sec for lo, hi, sec in _SECTION_RANGES for ch in range(lo, hi + 1)
}


def is_hs4(code: str) -> bool:
    return bool(HS4_PATTERN.match(code))


def section_of(code: str) -> int | None:
    """Section (1..21) of a 4-digit code from its chapter, or None."""
    if not is_hs4(code):
        return None
    return CHAPTER_SECTION.get(int(code[:2]))


def default_section_table(codes) -> dict[str, int]:
    table = {}
    for code in codes:
        sec = section_of(code)
        if sec is not None:
            table[code] = sec
    return table


def load_sections(path: str | Path) -> dict[str, int]:
    """Read ``hs4,section`` rows."""
    table = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or not {"hs4", "section"} <= set(reader.fieldnames):
            raise ValueError(f"{path}: expected header 'hs4,section'")
        for row in reader:
            code = row["hs4"].strip()
            sec = int(row["section"])
            if not is_hs4(code) or not 1 <= sec <= 21:
                raise ValueError(f"{path}: bad section row {row!r}")
            table[code] = sec
    return table


def write_sections(path: str | Path, table: dict[str, int]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["hs4", "section"])
        for code in sorted(table):
            w.writerow([code, table[code]])
