"""Command-line entry point: ``dindex <subcommand> [--config FILE] [--key value ...]``.

Settings come from an INI file (``key = value`` under section headers) and
any key can be overridden by a flag of the same name. Exit status is 0 on
success, 1 on a user error (bad input, bad settings) and 2 on anything else.
"""

from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import sys
import traceback
from pathlib import Path

from . import pipeline, synth
from .errors import DindexError


def _csv(kind):
    def parse(text: str):
        items = [t.strip() for t in str(text).split(",") if t.strip()]
        return tuple(kind(t) for t in items)
    return parse


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _optional_int(text: str):
    t = str(text).strip().lower()
    return None if t in ("", "none") else int(t)


def _year_range(text: str):
    t = str(text).strip()
    if not t:
        return None
    lo, _, hi = t.partition("-")
    return int(lo), int(hi or lo)


def _optional_path(text: str):
    return Path(text) if str(text).strip() else None


def _delimiter(text: str) -> str:
    return "\t" if text in ("tab", "\\t") else text


# key -> (section, parser, RunConfig field or "generator.<field>", help)
KEYS = {
    "out": ("run", Path, "out", "output directory"),
    "workers": ("run", int, "workers", "worker threads for the indicators stage"),
    "seed": ("run", int, "seed", "seed for matching and the generator"),
    "papers": ("input", _optional_path, "papers", "papers file (default: <out>/papers.csv)"),
    "citations": ("input", _optional_path, "citations",
                  "citations file (default: <out>/citations.csv)"),
    "delimiter": ("input", _delimiter, "delimiter", "field delimiter ('tab' for TAB)"),
    "strict": ("input", _bool, "strict",
               "reject edges to unknown papers (false: keep them as stubs)"),
    "doc_types": ("input", _csv(str), "doc_types", "keep only these document types"),
    "focal_doc_types": ("focal", _csv(str), "focal_doc_types", "focal document types"),
    "focal_journals": ("focal", _csv(str), "focal_journals", "focal journals"),
    "focal_years": ("focal", _year_range, "focal_years", "focal year range, e.g. 1980-2000"),
    "thresholds": ("indicators", _csv(int), "thresholds", "link thresholds, e.g. 1,5"),
    "dep_mode": ("indicators", str, "dep_mode", "DEP aggregation: mean or total"),
    "window": ("indicators", _optional_int, "window", "citation window in years"),
    "outcomes": ("models", _csv(str), "outcomes", "outcome columns"),
    "predictors": ("models", _csv(str), "predictors", "control columns"),
    "robust": ("models", _bool, "robust", "HC1 robust standard errors"),
    "exclude_ids": ("models", _optional_path, "exclude_ids",
                    "file of paper ids to leave out of the models"),
    "ref_year": ("models", _optional_int, "ref_year",
                 "reference year for paper age (default: latest year)"),
    "bins": ("summaries", int, "bins", "histogram bins"),
    "covariates": ("matching", str, "covariates",
                   "'paper' or col[:quintile|identity|c1;c2...],..."),
    "preset": ("generate", str, "preset", f"generator preset: {', '.join(synth.PRESETS)}"),
    "n_papers": ("generate", int, "generator.n_papers", "papers to generate"),
    "years": ("generate", _year_range, "generator.years", "year range, e.g. 1980-2002"),
    "journals": ("generate", int, "generator.journals", "number of journals"),
    "mean_out_degree": ("generate", float, "generator.mean_out_degree",
                        "mean references per paper"),
    "attachment": ("generate", str, "generator.attachment", "uniform or preferential"),
    "planted_disruptive": ("generate", int, "generator.planted_disruptive",
                           "planted disruptive milestone papers"),
    "planted_effect": ("generate", float, "generator.planted_effect",
                       "log attachment boost of planted papers"),
    "planted_refs": ("generate", int, "generator.planted_refs",
                     "references of each planted paper"),
}

SUBCOMMANDS = {
    "generate": "write a synthetic corpus with a manifest",
    "ingest": "validate a corpus and write ingest_report.txt",
    "indicators": "compute DI/DEP/citation indicators",
    "summarize": "yearly percentiles, milestone medians, histograms, timelines",
    "regress": "OLS and logistic models with diagnostics",
    "cem": "coarsened exact matching and treatment effects",
    "oracle-check": "recompute indicators by brute force and compare",
    "report": "collate all outputs into report.txt",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise DindexError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dindex", description="Citation disruption analysis pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, help_text in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", type=Path, help="INI settings file")
        for key, (section, _, _, h) in KEYS.items():
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None,
                           metavar=key.upper(), help=f"[{section}] {h}")
    return parser


def read_config(path: Path | None) -> dict[str, str]:
    """Flatten an INI file into ``key -> raw string``, rejecting unknown keys."""
    if path is None:
        return {}
    if not Path(path).exists():
        raise DindexError(f"{path}: config file not found")
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=(";", "#"))
    try:
        cp.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise DindexError(f"{path}: {e}") from None
    values = {}
    for section in cp.sections():
        for key, value in cp.items(section):
            key = key.replace("-", "_")
            if key not in KEYS:
                raise DindexError(f"{path}: unknown key {key!r} in [{section}]")
            values[key] = value
    return values


def make_config(raw: dict[str, str]) -> pipeline.RunConfig:
    cfg = pipeline.RunConfig()
    gen = {}
    preset = raw.get("preset")
    if preset:
        if preset not in synth.PRESETS:
            raise DindexError(f"unknown preset {preset!r} (choose from "
                              f"{', '.join(synth.PRESETS)})")
        base = synth.PRESETS[preset]
    else:
        base = synth.GeneratorParams()
    top = {}
    for key, text in raw.items():
        _, parse, target, _ = KEYS[key]
        try:
            value = parse(text)
        except (TypeError, ValueError) as e:
            raise DindexError(f"setting {key!r}: cannot parse {text!r} ({e})") from None
        if target.startswith("generator."):
            gen[target.split(".", 1)[1]] = value
        else:
            top[target] = value
    if "seed" in top:
        gen["seed"] = top["seed"]
    cfg = dataclasses.replace(cfg, **top, generator=dataclasses.replace(base, **gen))
    try:
        cfg.indicator_config()
    except ValueError as e:
        raise DindexError(f"indicator settings: {e}") from None
    cfg.generator.validate()
    return cfg


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except DindexError as e:
        print(f"dindex: error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = read_config(args.config)
        raw.update({k: getattr(args, k) for k in KEYS if getattr(args, k) is not None})
        cfg = make_config(raw)
        result = pipeline.STAGES[args.command](cfg)
        status = 0
        if isinstance(result, tuple):
            result, status = result
        print(result)
        return status
    except (DindexError, OSError) as e:
        print(f"dindex {args.command}: error: {e}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        print(f"dindex {args.command}: internal error", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
