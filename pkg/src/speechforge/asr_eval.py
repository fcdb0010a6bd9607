"""Word error rate scoring and table-style aggregation."""
from __future__ import annotations

import json
import math
import re
import string
from dataclasses import asdict, dataclass, field
from pathlib import Path


@dataclass(frozen=True)
class NormalizationPolicy:
    uppercase: bool = True
    # Apostrophes are kept so contractions stay one token.
    strip_chars: str = string.punctuation.replace("'", "")


DEFAULT_POLICY = NormalizationPolicy()


def normalize_transcript(text: str, policy: NormalizationPolicy = DEFAULT_POLICY) -> list[str]:
    if policy.uppercase:
        text = text.upper()
    if policy.strip_chars:
        text = re.sub("[" + re.escape(policy.strip_chars) + "]", " ", text)
    return text.split()


@dataclass(frozen=True)
class WerCounts:
    S: int
    D: int
    I: int
    N: int

    @property
    def errors(self) -> int:
        return self.S + self.D + self.I

    @property
    def wer_pct(self) -> float:
        return 100.0 * self.errors / self.N

    def __add__(self, other: "WerCounts") -> "WerCounts":
        return WerCounts(self.S + other.S, self.D + other.D, self.I + other.I, self.N + other.N)


def edit_distance(ref, hyp) -> int:
    prev = list(range(len(hyp) + 1))
    for i, r in enumerate(ref, 1):
        cur = [i] + [0] * len(hyp)
        for j, h in enumerate(hyp, 1):
            cur[j] = min(prev[j - 1] + (r != h), prev[j] + 1, cur[j - 1] + 1)
        prev = cur
    return prev[-1]


def wer(ref, hyp) -> WerCounts:
    """Minimum edit alignment with unit costs.

    When several alignments are optimal the backtrace prefers, at each step,
    match/substitution, then insertion, then deletion.
    """
    ref, hyp = list(ref), list(hyp)
    if not ref:
        raise ValueError("empty reference")
    n, m = len(ref), len(hyp)
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        cost[i][0] = i
    for j in range(m + 1):
        cost[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost[i][j] = min(
                cost[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]),
                cost[i][j - 1] + 1,
                cost[i - 1][j] + 1,
            )
    S = D = I = 0
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and cost[i][j] == cost[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            S += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j > 0 and cost[i][j] == cost[i][j - 1] + 1:
            I += 1
            j -= 1
        else:
            D += 1
            i -= 1
    return WerCounts(S, D, I, n)


@dataclass(frozen=True)
class TranscriptPair:
    utterance_id: str
    reference: tuple
    hypothesis: tuple
    tags: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.reference:
            raise ValueError(f"{self.utterance_id}: empty reference")


@dataclass
class WerReport:
    grouping: str
    utterances: dict  # id -> WerCounts
    conditions: dict  # condition label -> WER %
    condition_counts: dict  # condition label -> pooled WerCounts
    average: float
    mode: str = "pooled"

    def to_dict(self) -> dict:
        return {
            "grouping": self.grouping,
            "mode": self.mode,
            "average": self.average,
            "conditions": self.conditions,
            "condition_counts": {k: asdict(v) for k, v in self.condition_counts.items()},
            "utterances": {k: asdict(v) for k, v in self.utterances.items()},
        }


def table_average(values) -> float:
    """Unweighted mean of condition WERs (the 'Avg' column)."""
    values = list(values)
    if not values:
        raise ValueError("nothing to average")
    return math.fsum(values) / len(values)


def _condition_key(value):
    # Numeric labels sort numerically, others lexically.
    try:
        return (0, float(value), "")
    except (TypeError, ValueError):
        return (1, 0.0, str(value))


def aggregate(pairs, grouping: str | None = None, mode: str = "pooled") -> WerReport:
    """Score ``pairs`` and group them by the tag named ``grouping``.

    Condition WER is pooled ``sum(S+D+I) / sum(N)`` (``mode="pooled"``) or
    the mean of utterance WERs (``mode="mean"``). The overall ``average`` is
    the unweighted mean across conditions.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no transcript pairs")
    if mode not in ("pooled", "mean"):
        raise ValueError(f"mode must be 'pooled' or 'mean', got {mode!r}")
    utt = {}
    groups: dict = {}
    for p in pairs:
        c = wer(p.reference, p.hypothesis)
        utt[p.utterance_id] = c
        if grouping is None:
            label = "all"
        else:
            if grouping not in p.tags:
                raise ValueError(f"unknown grouping tag {grouping!r} for {p.utterance_id}")
            label = p.tags[grouping]
        groups.setdefault(label, []).append(c)
    conditions, counts = {}, {}
    for label in sorted(groups, key=_condition_key):
        cs = groups[label]
        pooled = cs[0]
        for c in cs[1:]:
            pooled = pooled + c
        counts[str(label)] = pooled
        if mode == "pooled":
            conditions[str(label)] = pooled.wer_pct
        else:
            conditions[str(label)] = math.fsum(c.wer_pct for c in cs) / len(cs)
    return WerReport(grouping or "all", utt, conditions, counts, table_average(conditions.values()), mode)


def relative_improvement(baseline_wer: float, new_wer: float) -> float:
    """Relative WER reduction in percent."""
    if baseline_wer <= 0:
        raise ValueError("baseline WER must be positive")
    return 100.0 * (baseline_wer - new_wer) / baseline_wer


# --- files -------------------------------------------------------------------


def read_transcripts(path) -> dict:
    """``<utterance_id> <text ...>`` per line."""
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        uid, _, text = line.partition(" ")
        out[uid] = text.strip()
    return out


def pair_transcripts(refs: dict, hyps: dict, tags: dict | None = None,
                     policy: NormalizationPolicy = DEFAULT_POLICY) -> list[TranscriptPair]:
    """Join by id; a missing hypothesis counts as an empty one."""
    tags = tags or {}
    return [
        TranscriptPair(uid, tuple(normalize_transcript(refs[uid], policy)),
                       tuple(normalize_transcript(hyps.get(uid, ""), policy)), tags.get(uid, {}))
        for uid in refs
    ]


def write_wer_tables(report: WerReport, directory, system: str = "system") -> dict:
    """Per-utterance TSV, condition TSV in table layout, and a JSON variant."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    utt_path = directory / "wer_utterances.tsv"
    with open(utt_path, "w", encoding="utf-8") as fh:
        fh.write("utterance_id\tS\tD\tI\tN\twer_pct\n")
        for uid, c in report.utterances.items():
            fh.write(f"{uid}\t{c.S}\t{c.D}\t{c.I}\t{c.N}\t{c.wer_pct:.2f}\n")
    cond_path = directory / "wer_conditions.tsv"
    labels = list(report.conditions)
    with open(cond_path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(["system"] + labels + ["Avg"]) + "\n")
        cells = [f"{report.conditions[k]:.2f}" for k in labels] + [f"{report.average:.2f}"]
        fh.write("\t".join([system] + cells) + "\n")
    json_path = directory / "wer_report.json"
    json_path.write_text(json.dumps(report.to_dict(), indent=2) + "\n", encoding="utf-8")
    return {"utterances": utt_path, "conditions": cond_path, "json": json_path}


def read_condition_table(path) -> dict:
    """Read a condition TSV back into ``{system: {condition: wer}}`` (Avg dropped)."""
    lines = [l for l in Path(path).read_text(encoding="utf-8").splitlines() if l.strip()]
    header = lines[0].split("\t")
    out = {}
    for line in lines[1:]:
        cells = line.split("\t")
        out[cells[0]] = {h: float(v) for h, v in zip(header[1:], cells[1:]) if h != "Avg"}
    return out
