"""``speechforge`` command line: one verb per pipeline stage.

Each stage reads its section of a YAML config (``gen_rirs``, ``synth``,
``enhance``, ``score_enh``, ``feats``, ``score_asr``, ``report``), writes into
an output directory, and leaves a ``run_ledger.json`` there with everything
needed to re-run it. Without ``--out`` the directory is
``runs/<stage>-<config hash>``; an existing directory built from a different
config is refused unless ``--force`` is given.

Exit codes: 0 success, 1 usage/config error or missing upstream artifact,
2 some records failed, 3 every record failed.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import corpus, room
from .asr_eval import (
    aggregate,
    pair_transcripts,
    read_condition_table,
    read_transcripts,
    table_average,
    write_wer_tables,
)
from .enhance import Enhancer, run_enhancement_pass
from .features import MelConfig, extract, write_feature_file, write_index
from .metrics import pcm_loss, read_score_table, si_sdr, stoi, write_score_table
from .seeding import STAGE_RIRS, STAGE_SOURCES, derive_seed
from .synthetic import NOISE_GENERATORS, speech_like
from .wavio import write_wav

log = logging.getLogger("speechforge")

LEDGER_NAME = "run_ledger.json"
EXIT_OK, EXIT_USAGE, EXIT_PARTIAL, EXIT_FAILED = 0, 1, 2, 3
DEFAULT_SEED = 0
STAGES = ("gen-rirs", "synth", "enhance", "score-enh", "feats", "score-asr", "report")


class UsageError(Exception):
    """Bad config or missing upstream artifact; maps to exit code 1."""


# --- run bookkeeping --------------------------------------------------------


def config_hash(stage: str, config: dict, seed: int) -> str:
    blob = json.dumps({"stage": stage, "config": config, "seed": int(seed)},
                      sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def resolve_out(args, stage: str, config: dict, seed: int) -> tuple[Path, str]:
    digest = config_hash(stage, config, seed)
    out = Path(args.out) if args.out else Path("runs") / f"{stage}-{digest[:12]}"
    ledger = out / LEDGER_NAME
    if ledger.exists() and not args.force:
        prev = json.loads(ledger.read_text())
        if prev.get("config_hash") != digest:
            raise UsageError(f"{out} holds a {prev.get('stage')} run with a different config "
                             f"(hash {prev.get('config_hash', '?')[:12]}); use --force or another --out")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable")
    return out, digest


def write_ledger(out: Path, stage: str, config: dict, digest: str, seed: int, argv, status: dict):
    ledger = {
        "tool": "speechforge",
        "version": __version__,
        "stage": stage,
        "config": config,
        "config_hash": digest,
        "seed": int(seed),
        "argv": list(argv),
        "status": status,
    }
    (out / LEDGER_NAME).write_text(json.dumps(ledger, indent=2, sort_keys=True, default=str) + "\n")


def upstream(path, stage: str, marker: str) -> Path:
    """Locate an upstream artifact or fail naming the stage that makes it."""
    if path is None:
        raise UsageError(f"no input given; expected output of stage '{stage}'")
    p = Path(path)
    if p.is_dir():
        p = p / marker
    if not p.exists():
        raise UsageError(f"missing upstream artifact from stage '{stage}': {p}")
    return p


def upstream_hash(directory: Path) -> str | None:
    ledger = directory / LEDGER_NAME
    if ledger.exists():
        return json.loads(ledger.read_text()).get("config_hash")
    return None


def exit_for(n_ok: int, n_total: int) -> int:
    if n_total == 0 or n_ok == n_total:
        return EXIT_OK
    return EXIT_FAILED if n_ok == 0 else EXIT_PARTIAL


def _pool_map(fn, jobs, workers: int):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [fn(j) for j in jobs]


# --- gen-rirs ---------------------------------------------------------------

GEN_RIRS_DEFAULTS = {"count": 10, "t60_range": [0.2, 1.0], "max_order": 6,
                     "sample_rate_hz": 16000, "prefix": "rir"}


def _rir_job(args):
    rir_id, seed, cfg, out = args
    spec = room.sample_room(seed, cfg["t60_range"])
    rir = room.simulate_rir(spec, cfg["max_order"], cfg["sample_rate_hz"])
    return room.save_rir(out, rir_id, rir, spec, seed, cfg["max_order"])


def cmd_gen_rirs(cfg: dict, seed: int, out: Path, workers: int) -> tuple[int, dict]:
    count = int(cfg["count"])
    if count < 0:
        raise UsageError("gen_rirs.count must be >= 0")
    previous = {}
    if (out / room.SIDECAR_NAME).exists():
        previous = room.read_sidecar(out)
    ids = [f"{cfg['prefix']}_{i:06d}" for i in range(count)]
    jobs = []
    for i, rid in enumerate(ids):
        have = rid in previous and (out / f"{rid}.wav").exists() and (out / f"{rid}.direct.wav").exists()
        if not have:
            jobs.append((rid, derive_seed(seed, STAGE_RIRS, i), cfg, out))
    log.info("gen-rirs: %d requested, %d already present", count, count - len(jobs))
    fresh = {rec["rir_id"]: rec for rec in _pool_map(_rir_job, jobs, workers)}
    records = [fresh.get(rid) or previous[rid] for rid in ids]
    room.write_sidecar(out, records)
    return EXIT_OK, {"count": count, "generated": len(jobs), "reused": count - len(jobs)}


# --- synth ------------------------------------------------------------------

PRESETS = {
    "wsj-dn-train": corpus.WSJ_DN_TRAIN,
    "wsj-dn-valid": corpus.WSJ_DN_VALID,
    "wsj-dn-test": corpus.WSJ_DN_TEST,
    "wsj-dr-test": corpus.WSJ_DR_TEST,
}


def make_synthetic_sources(spec: dict, seed: int, directory: Path, fs: int) -> tuple[Path, Path]:
    """Write a small generated clean/noise pool for desk-scale runs."""
    n_clean = int(spec.get("clean", 4))
    duration = float(spec.get("duration_s", 2.0))
    noises = list(spec.get("noises", ["babble", "cafeteria"]))
    unknown = [n for n in noises if n not in NOISE_GENERATORS]
    if unknown:
        raise UsageError(f"unknown synthetic noise types {unknown}; choose from {sorted(NOISE_GENERATORS)}")
    clean_dir, noise_dir = directory / "clean", directory / "noise"
    for i in range(n_clean):
        wave = speech_like(derive_seed(seed, STAGE_SOURCES, i), duration, fs)
        write_wav(clean_dir / f"utt{i:03d}.wav", wave, dtype="float64")
    for j, name in enumerate(noises):
        # Noise is longer than speech so random crops have room to move.
        wave = NOISE_GENERATORS[name](derive_seed(seed, STAGE_SOURCES, 10_000 + j), 2 * duration + 1, fs)
        write_wav(noise_dir / f"{name}.wav", wave, dtype="float64")
    return clean_dir, noise_dir


def cmd_synth(cfg: dict, seed: int, out: Path, workers: int) -> tuple[int, dict]:
    proto = cfg.get("protocol", "wsj-dn-test")
    if isinstance(proto, str):
        if proto not in PRESETS:
            raise UsageError(f"unknown protocol preset {proto!r}; choose from {sorted(PRESETS)}")
        proto = dict(PRESETS[proto])
    proto = {**proto, **cfg.get("protocol_overrides", {})}
    try:
        protocol = corpus.Protocol.from_dict(proto)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad synth protocol: {exc}") from exc
    fs = protocol.sample_rate_hz
    if cfg.get("synthetic_sources"):
        clean_dir, noise_dir = make_synthetic_sources(cfg["synthetic_sources"], seed, out / "sources", fs)
    else:
        clean_dir, noise_dir = cfg.get("clean_dir"), cfg.get("noise_dir")
        if clean_dir is None:
            raise UsageError("synth needs clean_dir or synthetic_sources")
    rir_dir = cfg.get("rir_dir")
    if protocol.reverberant:
        rir_dir = upstream(rir_dir, "gen-rirs", room.SIDECAR_NAME).parent
    try:
        pool = corpus.SourcePool.from_dirs(clean_dir, noise_dir, rir_dir, fs)
        manifest = corpus.build_manifest(protocol, pool, seed)
    except (FileNotFoundError, ValueError) as exc:
        raise UsageError(str(exc)) from exc
    done = corpus.synthesize(manifest, pool, out, workers)
    n_ok = sum(r.ok for r in done.records)
    for r in done.records:
        if not r.ok:
            log.error("record %s failed: %s", r.spec.utterance_id, r.error)
    return exit_for(n_ok, len(done)), {"records": len(done), "ok": n_ok}


# --- enhance ----------------------------------------------------------------


def cmd_enhance(cfg: dict, seed: int, out: Path, workers: int) -> tuple[int, dict]:
    src = upstream(cfg.get("input"), "synth", corpus.MANIFEST_NAME)
    try:
        enhancer = Enhancer.from_dict(cfg.get("enhancer", {"kind": "passthrough"}))
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad enhancer config: {exc}") from exc
    done = run_enhancement_pass(src, enhancer, out, workers)
    attempted = [r for r in done.records if "enhancer_kind" in r.extra]
    n_ok = sum(r.ok for r in attempted)
    return exit_for(n_ok, len(attempted)), {"records": len(attempted), "ok": n_ok, "enhancer": enhancer.kind}


# --- score-enh ----------------------------------------------------------------

SCORE_FILE = "scores.tsv"
UNPROCESSED = "unprocessed"


def condition_label(value) -> str:
    """Canonical text for a condition tag shared by score and WER tables."""
    if value is None or value == "":
        return "-"
    if isinstance(value, str):
        try:
            value = float(value)
        except ValueError:
            return value
    if math.isinf(value):
        return "clean"
    return f"{value:g}"


def _score_job(args):
    record, base, metrics = args
    uid = record.spec.utterance_id
    ref = corpus.load_part(record, base, "ref")
    mix = corpus.load_part(record, base, "mix")
    candidates = [(UNPROCESSED, mix)]
    if "enhanced" in record.output_paths:
        candidates.append((record.extra.get("enhancer_kind", "enhanced"),
                           corpus.load_part(record, base, "enhanced")))
    rows, errors = [], []
    for label, est in candidates:
        for m in metrics:
            try:
                if m == "stoi":
                    v = stoi(ref, est)
                elif m == "si_sdr":
                    v = si_sdr(ref, est)
                else:
                    v = pcm_loss(ref, est, mix)
            except ValueError as exc:
                errors.append(f"{label}/{m}: {exc}")
                continue
            rows.append({"utterance_id": uid, "enhancer": label, "metric": m, "value": float(v),
                         "snr_db": record.spec.snr_db, "t60_bin": record.spec.t60_bin or "",
                         "noise": record.spec.noise_id or ""})
    return rows, errors


def cmd_score_enh(cfg: dict, seed: int, out: Path, workers: int) -> tuple[int, dict]:
    src = upstream(cfg.get("input"), "enhance", corpus.MANIFEST_NAME)
    metrics = list(cfg.get("metrics", ["stoi", "si_sdr"]))
    bad = [m for m in metrics if m not in ("stoi", "si_sdr", "pcm")]
    if bad:
        raise UsageError(f"unknown metrics {bad}")
    manifest = corpus.Manifest.load(src)
    todo = [r for r in manifest.records if r.ok]
    results = _pool_map(_score_job, [(r, src.parent, metrics) for r in todo], workers)
    rows, n_ok = [], 0
    for r, (rs, errs) in zip(todo, results):
        rows.extend(rs)
        n_ok += not errs
        for e in errs:
            log.error("scoring %s: %s", r.spec.utterance_id, e)
    write_score_table(rows, out / SCORE_FILE)
    return exit_for(n_ok, len(todo)), {"records": len(todo), "ok": n_ok, "rows": len(rows)}


# --- feats ------------------------------------------------------------------


def _feat_job(args):
    record, base, part, mel, out = args
    uid = record.spec.utterance_id
    try:
        feat = extract(corpus.load_part(record, base, part), mel)
        path = write_feature_file(out / "feats" / f"{uid}.feat", feat.frames)
        return (uid, path.relative_to(out).as_posix(), *feat.shape), None
    except Exception as exc:  # per-record failure
        return None, f"{type(exc).__name__}: {exc}"


def cmd_feats(cfg: dict, seed: int, out: Path, workers: int) -> tuple[int, dict]:
    src = upstream(cfg.get("input"), "synth or enhance", corpus.MANIFEST_NAME)
    try:
        mel = MelConfig(**cfg.get("mel", {}))
    except TypeError as exc:
        raise UsageError(f"bad mel config: {exc}") from exc
    manifest = corpus.Manifest.load(src)
    todo = [r for r in manifest.records if r.ok]
    part = cfg.get("source")
    jobs = [(r, src.parent, part or ("enhanced" if "enhanced" in r.output_paths else "mix"), mel, out)
            for r in todo]
    results = _pool_map(_feat_job, jobs, workers)
    entries = []
    for r, (entry, err) in zip(todo, results):
        if err:
            log.error("features for %s: %s", r.spec.utterance_id, err)
        else:
            entries.append(entry)
    write_index(out, entries)
    return exit_for(len(entries), len(todo)), {"records": len(todo), "ok": len(entries)}


# --- score-asr ----------------------------------------------------------------


def manifest_tags(path) -> dict:
    manifest = corpus.Manifest.load(path)
    return {r.spec.utterance_id: {"snr_db": condition_label(r.spec.snr_db),
                                  "t60_bin": condition_label(r.spec.t60_bin),
                                  "noise": condition_label(r.spec.noise_id)}
            for r in manifest.records}


def cmd_score_asr(cfg: dict, seed: int, out: Path, workers: int) -> tuple[int, dict]:
    refs_path = upstream(cfg.get("references"), "reference transcripts", "text")
    hyps_path = upstream(cfg.get("hypotheses"), "external recognizer", "text")
    tags = {}
    if cfg.get("manifest"):
        tags = manifest_tags(upstream(cfg["manifest"], "synth", corpus.MANIFEST_NAME))
    refs, hyps = read_transcripts(refs_path), read_transcripts(hyps_path)
    if not refs:
        raise UsageError(f"no reference transcripts in {refs_path}")
    missing = sorted(set(refs) - set(hyps))
    for uid in missing:
        log.warning("no hypothesis for %s; scored as empty", uid)
    grouping = cfg.get("grouping", "snr_db" if tags else None)
    try:
        report = aggregate(pair_transcripts(refs, hyps, tags), grouping, cfg.get("mode", "pooled"))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    write_wer_tables(report, out, cfg.get("system", "system"))
    return EXIT_OK, {"utterances": len(refs), "missing_hypotheses": len(missing), "average": report.average}


# --- report -----------------------------------------------------------------

REPORT_FILE = "report.tsv"
REPORT_JSON = "report.json"


def _condition_order(labels):
    def key(v):
        try:
            return (0, float(v), "")
        except ValueError:
            return (1, 0.0, v)
    return sorted(labels, key=key)


def build_report(score_rows, wer_tables: dict, grouping: str = "snr_db") -> dict:
    """Combine per-utterance scores and WER condition tables into one layout.

    Rows are (system, enhancer kind, measure); columns are the conditions
    plus the unweighted ``Avg``. STOI is shown in percent, with its gain over
    the unprocessed mixture both absolute and relative. PESQ is a reserved
    row and is left empty.
    """
    if not score_rows and not wer_tables:
        raise ValueError("report needs at least one score table or WER table")
    cells: dict = {}
    for r in score_rows:
        cond = condition_label(r.get(grouping))
        cells.setdefault((r["enhancer"], r["metric"]), {}).setdefault(cond, []).append(float(r["value"]))
    means = {k: {c: math.fsum(v) / len(v) for c, v in d.items()} for k, d in cells.items()}
    conditions = set()
    for d in means.values():
        conditions |= set(d)
    for t in wer_tables.values():
        conditions |= set(t)
    conditions = _condition_order(conditions)
    rows = []

    def add(system, kind, measure, values):
        vals = {c: values.get(c) for c in conditions}
        present = [v for v in vals.values() if v is not None]
        rows.append({"system": system, "enhancer": kind, "measure": measure, "values": vals,
                     "Avg": table_average(present) if present else None})

    for system, table in wer_tables.items():
        add(system, "-", "wer", table)
    base = means.get((UNPROCESSED, "stoi"), {})
    for kind in sorted({k for k, _ in means}, key=lambda k: (k != UNPROCESSED, k)):
        if (kind, "stoi") in means:
            st = means[(kind, "stoi")]
            add(kind, kind, "stoi_pct", {c: 100.0 * v for c, v in st.items()})
            if kind != UNPROCESSED and base:
                add(kind, kind, "stoi_gain_abs_pct",
                    {c: 100.0 * (v - base[c]) for c, v in st.items() if c in base})
                add(kind, kind, "stoi_gain_rel_pct",
                    {c: 100.0 * (v - base[c]) / base[c] for c, v in st.items() if base.get(c)})
        for metric in ("si_sdr", "pcm"):
            if (kind, metric) in means:
                add(kind, kind, metric, means[(kind, metric)])
        add(kind, kind, "pesq", {})
    return {"conditions": conditions, "rows": rows, "grouping": grouping}


def write_report(report: dict, out: Path) -> Path:
    path = out / REPORT_FILE
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(["system", "enhancer", "measure"] + report["conditions"] + ["Avg"]) + "\n")
        for row in report["rows"]:
            cells = [row["values"][c] for c in report["conditions"]] + [row["Avg"]]
            text = ["" if v is None else f"{v:.2f}" for v in cells]
            fh.write("\t".join([row["system"], row["enhancer"], row["measure"]] + text) + "\n")
    (out / REPORT_JSON).write_text(json.dumps(report, indent=2) + "\n")
    return path


def cmd_report(cfg: dict, seed: int, out: Path, workers: int) -> tuple[int, dict]:
    score_rows = []
    for p in cfg.get("scores", []):
        score_rows.extend(read_score_table(upstream(p, "score-enh", SCORE_FILE)))
    wer_tables = {}
    for p in cfg.get("wer", []):
        wer_tables.update(read_condition_table(upstream(p, "score-asr", "wer_conditions.tsv")))
    try:
        report = build_report(score_rows, wer_tables, cfg.get("grouping", "snr_db"))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    write_report(report, out)
    return EXIT_OK, {"rows": len(report["rows"]), "conditions": len(report["conditions"])}


# --- entry point --------------------------------------------------------------

COMMANDS = {
    "gen-rirs": (cmd_gen_rirs, "gen_rirs", GEN_RIRS_DEFAULTS),
    "synth": (cmd_synth, "synth", {}),
    "enhance": (cmd_enhance, "enhance", {}),
    "score-enh": (cmd_score_enh, "score_enh", {}),
    "feats": (cmd_feats, "feats", {}),
    "score-asr": (cmd_score_asr, "score_asr", {}),
    "report": (cmd_report, "report", {}),
}

# Stage inputs that may be given on the command line instead of the config.
INPUT_FLAGS = {
    "enhance": ("input",), "score-enh": ("input",), "feats": ("input",),
    "score-asr": ("references", "hypotheses", "manifest"), "synth": ("rir_dir",),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="speechforge", description="Seeded speech corpus and scoring pipeline.")
    parser.add_argument("--version", action="version", version=f"speechforge {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES:
        p = sub.add_parser(name)
        p.add_argument("--config", help="YAML file; the stage reads its own section")
        p.add_argument("--seed", type=int, default=None, help="master seed (u64)")
        p.add_argument("--workers", type=int, default=1)
        p.add_argument("--out", help="output directory (default runs/<stage>-<hash>)")
        p.add_argument("--force", action="store_true", help="reuse --out even if its config differs")
        for flag in INPUT_FLAGS.get(name, ()):
            p.add_argument(f"--{flag.replace('_', '-')}", dest=flag)
        if name == "gen-rirs":
            p.add_argument("--count", type=int)
        if name == "report":
            p.add_argument("--scores", action="append", help="score-enh output (repeatable)")
            p.add_argument("--wer", action="append", help="score-asr output (repeatable)")
    return parser


def load_config(path) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise UsageError(f"config file {p} not found")
    try:
        data = yaml.safe_load(p.read_text()) or {}
    except yaml.YAMLError as exc:
        raise UsageError(f"cannot parse {p}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"{p}: top level must be a mapping")
    return data


def stage_config(args, full: dict) -> tuple[dict, int]:
    fn, section, defaults = COMMANDS[args.command]
    cfg = {**defaults, **(full.get(section) or {})}
    for flag in INPUT_FLAGS.get(args.command, ()):
        if getattr(args, flag, None) is not None:
            cfg[flag] = getattr(args, flag)
    if args.command == "gen-rirs" and args.count is not None:
        cfg["count"] = args.count
    if args.command == "report":
        if args.scores:
            cfg["scores"] = args.scores
        if args.wer:
            cfg["wer"] = args.wer
    seed = args.seed if args.seed is not None else full.get("seed", DEFAULT_SEED)
    if not (isinstance(seed, int) and 0 <= seed < 2**64):
        raise UsageError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    # Tie the run to the exact upstream runs it consumed.
    ups = {}
    for key in ("input", "rir_dir", "manifest"):
        if cfg.get(key):
            d = Path(cfg[key])
            h = upstream_hash(d if d.is_dir() else d.parent)
            if h:
                ups[key] = h
    for key in ("scores", "wer"):
        for i, p in enumerate(cfg.get(key, [])):
            h = upstream_hash(Path(p) if Path(p).is_dir() else Path(p).parent)
            if h:
                ups[f"{key}[{i}]"] = h
    if ups:
        cfg["_upstream"] = ups
    return cfg, seed


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    logging.basicConfig(level=os.environ.get("SPEECHFORGE_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    fn = COMMANDS[args.command][0]
    try:
        if args.workers < 1:
            raise UsageError("--workers must be >= 1")
        cfg, seed = stage_config(args, load_config(args.config))
        out, digest = resolve_out(args, args.command, cfg, seed)
        code, status = fn(cfg, seed, out, args.workers)
    except UsageError as exc:
        print(f"speechforge {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    write_ledger(out, args.command, cfg, digest, seed, argv, {**status, "exit_code": code})
    print(out)
    return code


if __name__ == "__main__":
    sys.exit(main())
