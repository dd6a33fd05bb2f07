"""Command-line pipeline: one subcommand per stage plus ``run`` for all of them.

Every stage reads the artifacts of earlier stages from the output directory,
checks their hashes, and writes its own artifacts with metadata sidecars.
Exit codes: 0 success, 2 configuration error (nothing written), 3 stage
error (FAILED marker written), 4 stale upstream artifact.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import os
import platform
import sys
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import pandas as pd
import scipy

from . import __version__, artifacts as art
from ._kernels import BACKEND
from .bartik import bartik_table
from .errors import ConfigError, KnowflowError, StaleArtifactError
from .ingest import ClassificationTable, PanelDataset, parse_spells, write_spells
from .pipeline import (MODELS, TABLES, AnalysisConfig, ame_table, birth_years, classify,
                       covariate_table, fig3_grids, fit_models, flow_years, networks, phi_profile,
                       records_from_table, relatedness_years, render_grid, render_table,
                       results_record, shock_cells, table_frames, table_models, table_of)
from .pioneers import firm_table
from .relatedness import RelatednessMatrix, node_table
from .synth import SynthConfig, generate_panel, write_synthetic

log = logging.getLogger("knowflow")

EXIT_OK, EXIT_CONFIG, EXIT_STAGE, EXIT_STALE = 0, 2, 3, 4
STAGES = ("ingest", "relatedness", "pioneers", "knowledge", "bartik", "estimate", "report")
KINDS = ("industry", "occupation")
INPUT_KEYS = ("spells", "delimiter", "tolerance", "epochs", "industry_tables",
              "occupation_tables", "region_tables", "table_delimiter")


@dataclass
class RunConfig:
    """Parsed configuration file with command-line overrides applied."""

    path: str | None
    spells: str | None
    delimiter: str = ","
    tolerance: float = 0.01
    epochs: tuple[int, ...] = (2006,)
    tables: dict[str, list[str]] = field(default_factory=dict)
    table_delimiter: str = ","
    analysis: AnalysisConfig = AnalysisConfig()
    out: str | None = None
    synth: SynthConfig | None = None

    def input_paths(self) -> dict[str, str]:
        paths = {"spells": self.spells} if self.spells else {}
        for col, files in sorted(self.tables.items()):
            for k, p in enumerate(files):
                paths[f"{col}_table_{k}"] = p
        return paths

    def record(self) -> dict:
        """Everything that determines the numbers, for the manifest and its hash."""
        return {
            "input": {"delimiter": self.delimiter, "tolerance": self.tolerance,
                      "epochs": list(self.epochs), "table_delimiter": self.table_delimiter,
                      "tables": {c: len(v) for c, v in sorted(self.tables.items())}},
            # thread count never changes a number
            "analysis": {k: v for k, v in self.analysis.to_dict().items() if k != "threads"},
            "synth": self.synth.to_dict() if self.synth else None,
        }


def _resolve(base: str, p: str) -> str:
    p = os.path.expanduser(p.strip())
    return p if os.path.isabs(p) else os.path.normpath(os.path.join(base, p))


def load_config(path: str | None, out: str | None = None, threads: int | None = None,
                need_input: bool = True) -> RunConfig:
    """Read an INI config; relative paths resolve against the file's directory.

    Raises :class:`ConfigError` for unreadable files, unknown keys, bad values
    or (with ``need_input``) missing input files.
    """
    parser = configparser.ConfigParser(interpolation=None)
    base = os.getcwd()
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"config file {path} not found")
        try:
            parser.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"unreadable config {path}: {exc}") from exc
        base = os.path.dirname(os.path.abspath(path))
    unknown = set(parser.sections()) - {"input", "analysis", "output", "synth"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    inp = dict(parser["input"]) if parser.has_section("input") else {}
    bad = set(inp) - set(INPUT_KEYS)
    if bad:
        raise ConfigError(f"unknown input keys {sorted(bad)}")
    try:
        tolerance = float(inp.get("tolerance", 0.01))
        epochs = tuple(int(x) for x in inp.get("epochs", "2006").replace(";", ",").split(",") if x.strip())
    except ValueError as exc:
        raise ConfigError(f"bad input value: {exc}") from exc
    if not 0 <= tolerance <= 1:
        raise ConfigError("tolerance must lie in [0, 1]")
    delimiter = inp.get("delimiter", ",")
    delimiter = {"comma": ",", "semicolon": ";", "tab": "\t", r"\t": "\t"}.get(delimiter, delimiter)
    if len(delimiter) != 1:
        raise ConfigError(f"delimiter must be one character, got {delimiter!r}")
    tables = {}
    for col in ("industry", "occupation", "region"):
        raw = inp.get(f"{col}_tables", "").strip()
        if raw:
            tables[col] = [_resolve(base, p) for p in raw.split(";") if p.strip()]
    spells = _resolve(base, inp["spells"]) if inp.get("spells", "").strip() else None
    if need_input:
        if spells is None:
            raise ConfigError("config has no [input] spells path")
        missing = [p for p in [spells, *(p for v in tables.values() for p in v)] if not os.path.isfile(p)]
        if missing:
            raise ConfigError(f"input file(s) not found: {', '.join(missing)}")
    analysis = AnalysisConfig.from_mapping(dict(parser["analysis"]) if parser.has_section("analysis") else {})
    if threads is not None:
        if threads < 1:
            raise ConfigError("--threads must be positive")
        analysis = replace(analysis, threads=threads)
    elif "threads" not in (parser["analysis"] if parser.has_section("analysis") else {}):
        analysis = replace(analysis, threads=os.cpu_count() or 1)
    synth = None
    if parser.has_section("synth"):
        synth = SynthConfig.from_mapping(dict(parser["synth"]))
    if out is None and parser.has_section("output") and parser["output"].get("dir", "").strip():
        out = _resolve(base, parser["output"]["dir"])
    return RunConfig(path=path, spells=spells, delimiter=delimiter, tolerance=tolerance,
                     epochs=epochs, tables=tables, table_delimiter=inp.get("table_delimiter", ","),
                     analysis=analysis, out=out, synth=synth)


# ---------------------------------------------------------------------------
# stages


@dataclass
class Context:
    cfg: RunConfig
    out: str
    force: bool = False
    echo: Callable[[str], None] = print
    _panel: tuple[str, PanelDataset] | None = None  # (spells sha256, parsed panel)

    def path(self, *parts: str) -> str:
        return os.path.join(self.out, *parts)

    def table(self, *parts: str) -> pd.DataFrame:
        return art.read_table(self.path(*parts), self.out, self.force)

    def panel(self) -> PanelDataset:
        p = self.path("spells.csv")
        art.check_fresh(p, self.out, self.force)
        digest = art.sha256_file(p)
        if self._panel is None or self._panel[0] != digest:
            self._panel = (digest, parse_spells(p, tolerance=0.0, epoch_boundaries=self.cfg.epochs))
        return self._panel[1]

    def relatedness(self, kind: str, years: Sequence[int] | None = None) -> dict[int, RelatednessMatrix]:
        fits = self.table("relatedness", "fits.csv")
        fits = fits[fits["kind"] == kind]
        out = {}
        for row in fits.itertuples(index=False):
            t = int(row.year)
            if years is not None and t not in years:
                continue
            long = self.table("relatedness", f"{kind}_{t}.csv")
            meta = {k: getattr(row, k) for k in ("beta0", "beta1", "beta2", "r2", "n_pairs", "n_fitted")}
            out[t] = RelatednessMatrix.from_long(long, kind, t, meta)
        return out


def stage_ingest(ctx: Context) -> None:
    cfg = ctx.cfg
    tables = {c: ClassificationTable.from_files(c, files, delimiter=cfg.table_delimiter)
              for c, files in cfg.tables.items()}
    panel = parse_spells(cfg.spells, delimiter=cfg.delimiter, tables=tables,
                         tolerance=cfg.tolerance, epoch_boundaries=cfg.epochs)
    inputs = cfg.input_paths()
    dest = ctx.path("spells.csv")
    os.makedirs(ctx.out, exist_ok=True)
    write_spells(panel, dest)
    art.write_meta(dest, ctx.out, "ingest", {"format": "csv", "columns": [
        {"name": c, "dtype": str(panel.spells[c].dtype)} for c in panel.spells.columns]},
        len(panel), inputs, {"year_range": list(panel.year_range)})
    report = panel.report.as_dict() if panel.report is not None else {}
    art.write_json(ctx.path("ingest_report.json"), report, root=ctx.out, stage="ingest", inputs=inputs)
    ctx.echo(f"ingest: {len(panel)} spells, years {panel.year_range[0]}-{panel.year_range[1]}")


def stage_relatedness(ctx: Context) -> None:
    panel = ctx.panel()
    cfg = ctx.cfg.analysis
    years = sorted(set(flow_years(panel)) | set(birth_years(panel, cfg)))
    phi, psi = relatedness_years(panel, years, cfg.threads)
    src = {"spells": ctx.path("spells.csv")}
    fits = []
    for kind, mats in (("industry", phi), ("occupation", psi)):
        for t, m in sorted(mats.items()):
            art.write_table(ctx.path("relatedness", f"{kind}_{t}.csv"), m.to_long(),
                            root=ctx.out, stage="relatedness", inputs=src)
            fits.append({"kind": kind, "year": t, **m.fit_meta})
    art.write_table(ctx.path("relatedness", "fits.csv"), pd.DataFrame(fits),
                    root=ctx.out, stage="relatedness", inputs=src)
    edges = pd.concat([networks(phi, cfg.network_threshold), networks(psi, cfg.network_threshold)],
                      ignore_index=True)
    art.write_table(ctx.path("networks", "edges.csv"), edges, root=ctx.out, stage="relatedness", inputs=src)
    nodes = []
    for kind, mats in (("industry", phi), ("occupation", psi)):
        parents = {}
        if kind in ctx.cfg.tables:
            t = ClassificationTable.from_files(kind, ctx.cfg.tables[kind], delimiter=ctx.cfg.table_delimiter)
            parents = {c: t.top_level(c) for c in t.codes}
        ents = panel.labels(kind)
        n = node_table(ents, parents)
        n.insert(0, "kind", kind)
        nodes.append(n)
    art.write_table(ctx.path("networks", "nodes.csv"), pd.concat(nodes, ignore_index=True),
                    root=ctx.out, stage="relatedness", inputs=src)
    ctx.echo(f"relatedness: {len(phi)} industry and {len(psi)} occupation matrices, "
             f"{len(edges)} network edges")


def stage_pioneers(ctx: Context) -> None:
    panel = ctx.panel()
    records = classify(panel, ctx.cfg.analysis)
    firms = firm_table(records)
    art.write_table(ctx.path("firms.csv"), firms, root=ctx.out, stage="pioneers",
                    inputs={"spells": ctx.path("spells.csv")})
    n_p = int(firms["is_pioneer"].astype(bool).sum()) if len(firms) else 0
    ctx.echo(f"pioneers: {len(firms)} new firms, {n_p} pioneers")


def stage_knowledge(ctx: Context) -> None:
    panel = ctx.panel()
    firms = ctx.table("firms.csv")
    records = records_from_table(firms)
    years = sorted({r.birth_year for r in records})
    phi, psi = ctx.relatedness("industry", years), ctx.relatedness("occupation", years)
    cov = covariate_table(panel, records, phi, psi, ctx.cfg.analysis)
    inputs = {"spells": ctx.path("spells.csv"), "firms": ctx.path("firms.csv"),
              **{f"{k}_{t}": ctx.path("relatedness", f"{k}_{t}.csv") for k in KINDS for t in years}}
    art.write_table(ctx.path("covariates.csv"), cov, root=ctx.out, stage="knowledge", inputs=inputs,
                    extra={"year_range": list(panel.year_range)})
    ctx.echo(f"knowledge: {len(cov)} firms with knowledge stocks")


def stage_bartik(ctx: Context) -> None:
    panel = ctx.panel()
    cov = ctx.table("covariates.csv")
    cells = shock_cells(cov)
    years = sorted({t for _, _, t in cells})
    phi = ctx.relatedness("industry", years)
    b = bartik_table(panel, phi, cells, ctx.cfg.analysis.local_employment_year)
    inputs = {"spells": ctx.path("spells.csv"), "covariates": ctx.path("covariates.csv"),
              **{f"industry_{t}": ctx.path("relatedness", f"industry_{t}.csv") for t in years}}
    art.write_table(ctx.path("bartik.csv"), b, root=ctx.out, stage="bartik", inputs=inputs)
    ctx.echo(f"bartik: {len(b)} shock cells, {int(b['B'].isna().sum())} undefined")


def _estimation_inputs(ctx: Context, names: Sequence[str]):
    cov_path = ctx.path("covariates.csv")
    cov = ctx.table("covariates.csv")
    last_year = int(art.read_meta(cov_path)["extra"]["year_range"][1])
    inputs = {"covariates": cov_path}
    bartik = None
    if any(MODELS[n].family.startswith("iv") for n in names):
        bartik = ctx.table("bartik.csv")
        inputs["bartik"] = ctx.path("bartik.csv")
    return cov, bartik, last_year, inputs


def stage_estimate(ctx: Context, spec: str | None = None) -> None:
    if spec is not None and spec not in MODELS:
        raise ConfigError(f"unknown model {spec!r}; choose from {', '.join(MODELS)}")
    names = [spec] if spec else list(MODELS)
    cov, bartik, last_year, inputs = _estimation_inputs(ctx, names)
    fits = fit_models(names, cov, ctx.cfg.analysis, bartik, last_year)
    groups = {spec: [spec]} if spec else {t: table_models(t) for t in TABLES}
    for label, models in groups.items():
        sub = {m: fits[m] for m in models}
        coefs, stats = table_frames(sub, table_of(models[0]))
        art.write_table(ctx.path("tables", f"{label}.csv"), coefs, root=ctx.out, stage="estimate", inputs=inputs)
        art.write_table(ctx.path("tables", f"{label}_fit.csv"), stats, root=ctx.out, stage="estimate",
                        inputs=inputs)
        art.write_json(ctx.path("tables", f"{label}.json"), {m: results_record(f) for m, f in sub.items()},
                       root=ctx.out, stage="estimate", inputs=inputs)
        if spec:
            ctx.echo(render_table(table_of(spec), coefs, stats, [spec]))
    if "table1-model6" in fits:
        art.write_table(ctx.path("ame.csv"), ame_table(fits["table1-model6"]), root=ctx.out,
                        stage="estimate", inputs=inputs)
    if not spec:
        ctx.echo(f"estimate: {len(fits)} models")


def stage_report(ctx: Context, bins: int | None = None) -> None:
    cfg = ctx.cfg.analysis
    bins = cfg.fig3_bins if bins is None else bins
    if bins < 1:
        raise ConfigError("--fig3-bins must be positive")
    rendered = 0
    for t in TABLES:
        coef_path = ctx.path("tables", f"{t}.csv")
        if not os.path.exists(coef_path):
            continue
        coefs, stats = ctx.table("tables", f"{t}.csv"), ctx.table("tables", f"{t}_fit.csv")
        text = render_table(t, coefs, stats, table_models(t))
        art.write_text(ctx.path("tables", f"{t}.txt"), text, root=ctx.out, stage="report",
                       inputs={"coefs": coef_path, "fit": ctx.path("tables", f"{t}_fit.csv")})
        rendered += 1
    cov_path = ctx.path("covariates.csv")
    cov = ctx.table("covariates.csv")
    grid = fig3_grids(cov, bins, cfg.min_cell_firms)
    prof = phi_profile(cov, bins, cfg.min_cell_firms)
    src = {"covariates": cov_path}
    art.write_table(ctx.path("fig3_grid.csv"), grid, root=ctx.out, stage="report", inputs=src)
    art.write_table(ctx.path("fig3_phi_profile.csv"), prof, root=ctx.out, stage="report", inputs=src)
    text = "\n".join([render_grid(grid, "n_firms", None),
                      render_grid(grid, "survival_rate", "survival_masked"),
                      render_grid(grid, "mean_growth", "growth_masked")])
    art.write_text(ctx.path("fig3.txt"), text, root=ctx.out, stage="report", inputs=src)
    ctx.echo(f"report: {rendered} tables, {bins}x{bins} knowledge grids")


# ---------------------------------------------------------------------------
# manifest


def manifest(ctx: Context) -> dict:
    cfg = ctx.cfg
    record = cfg.record()
    return {
        "versions": {"knowflow": __version__, "backend": BACKEND, "python": platform.python_version(),
                     "numpy": np.__version__, "pandas": pd.__version__, "scipy": scipy.__version__},
        "config": record,
        "config_sha256": art.sha256_text(art.dumps(record)),
        "seed": cfg.synth.seed if cfg.synth else None,
        "inputs": {name: {"path": os.path.relpath(p, ctx.out).replace(os.sep, "/"), "sha256": art.sha256_file(p)}
                   for name, p in cfg.input_paths().items()},
        "artifacts": art.artifact_hashes(ctx.out),
    }


def run_pipeline(config_path: str | None, out: str | None = None, *, threads: int | None = None,
                 force: bool = False, echo: Callable[[str], None] | None = None) -> tuple[int, str | None]:
    """Run every stage; returns (exit status, artifact directory)."""
    try:
        cfg = load_config(config_path, out, threads)
        if cfg.out is None:
            raise ConfigError("no output directory: pass --out or set [output] dir")
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG, None
    ctx = Context(cfg, cfg.out, force, echo or (lambda s: None))
    for name in STAGES:
        status = _run_stage(ctx, name, STAGE_FUNCS[name])
        if status:
            return status, ctx.out
    art.write_json(ctx.path(art.MANIFEST), manifest(ctx), root=ctx.out, stage="run")
    return EXIT_OK, ctx.out


STAGE_FUNCS: dict[str, Callable[..., None]] = {
    "ingest": stage_ingest, "relatedness": stage_relatedness, "pioneers": stage_pioneers,
    "knowledge": stage_knowledge, "bartik": stage_bartik, "estimate": stage_estimate,
    "report": stage_report,
}


def _run_stage(ctx: Context, name: str, fn: Callable[..., None], *args) -> int:
    os.makedirs(ctx.out, exist_ok=True)
    art.clear_failed(ctx.out)
    log.info("stage %s", name)
    try:
        fn(ctx, *args)
    except StaleArtifactError as exc:
        art.mark_failed(ctx.out, name, exc)
        log.error("stage %s: stale artifact (%s): %s", name, exc.code, exc)
        return EXIT_STALE
    except ConfigError as exc:
        log.error("stage %s: config error: %s", name, exc)
        return EXIT_CONFIG
    except (KnowflowError, ValueError, KeyError, OSError) as exc:
        art.mark_failed(ctx.out, name, exc)
        log.error("stage %s failed (%s): %s", name, getattr(exc, "code", type(exc).__name__), exc)
        return EXIT_STAGE
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth


def synth_config_text(paths: dict[str, str], directory: str, cfg: SynthConfig, out_dir: str = "run") -> str:
    """INI text that runs the pipeline on a generated panel."""
    def rel(p):
        return os.path.relpath(p, directory).replace(os.sep, "/")

    lines = ["[input]", f"spells = {rel(paths['spells'])}", "delimiter = ,"]
    for col in ("industry", "occupation", "region"):
        lines.append(f"{col}_tables = " + ";".join(rel(p) for p in paths[f"{col}_tables"].split(";")))
    lines += ["", "[analysis]"]
    for k, v in AnalysisConfig().to_dict().items():
        if k == "threads":
            continue
        v = ",".join(v) if isinstance(v, list) else ("none" if v is None else v)
        lines.append(f"{k} = {v}")
    lines += ["", "[output]", f"dir = {out_dir}", "", "[synth]"]
    for k, v in cfg.to_dict().items():
        text = ",".join(repr(x) for x in v) if isinstance(v, list) else repr(v)
        lines.append(f"{k} = {text}")
    return "\n".join(lines) + "\n"


def run_synth(directory: str, cfg: SynthConfig) -> str:
    cfg.validate()
    panel, truth = generate_panel(cfg)
    paths = write_synthetic(panel, truth, directory)
    cfg_path = os.path.join(directory, "config.ini")
    with open(cfg_path, "w", encoding="utf-8", newline="") as fh:
        fh.write(synth_config_text(paths, directory, cfg))
    return cfg_path


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI configuration file")
    common.add_argument("--out", help="artifact directory (overrides [output] dir)")
    common.add_argument("--threads", type=int, help="worker threads within a stage (default: all cores)")
    common.add_argument("--force", action="store_true", help="ignore stale upstream artifacts")
    common.add_argument("--log-level", default="WARNING",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p = argparse.ArgumentParser(prog="knowflow", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"knowflow {__version__} ({BACKEND})")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="every stage in order, then the manifest")
    sub.add_parser("ingest", parents=[common], help="parse and validate spell records")
    sub.add_parser("relatedness", parents=[common], help="relatedness matrices and trimmed networks")
    pio = sub.add_parser("pioneers", parents=[common], help="new-firm and pioneer classification")
    pio.add_argument("--birth-from", type=int, help="first birth year to classify")
    pio.add_argument("--birth-to", type=int, help="last birth year to classify")
    sub.add_parser("knowledge", parents=[common], help="knowledge stocks and controls per new firm")
    sub.add_parser("bartik", parents=[common], help="related-industry shock table")
    est = sub.add_parser("estimate", parents=[common], help="fit the regression models")
    est.add_argument("--spec", help=f"a single model, e.g. table1-model6 ({len(MODELS)} available)")
    rep = sub.add_parser("report", parents=[common], help="render tables and knowledge grids")
    rep.add_argument("--fig3-bins", type=int, help="quantile bins per knowledge axis")
    syn = sub.add_parser("synth", parents=[common], help="generate a synthetic panel and its config")
    syn.add_argument("--seed", type=int, help="generator seed (overrides [synth] seed)")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    cmd = args.command

    if cmd == "synth":
        try:
            cfg = load_config(args.config, args.out, need_input=False)
            if cfg.out is None:
                raise ConfigError("synth needs --out")
            scfg = cfg.synth or SynthConfig()
            if args.seed is not None:
                scfg = replace(scfg, seed=args.seed)
            scfg.validate()
        except KnowflowError as exc:
            log.error("config error: %s", exc)
            return EXIT_CONFIG
        path = run_synth(cfg.out, scfg)
        print(path)
        return EXIT_OK

    if cmd == "run":
        status, out = run_pipeline(args.config, args.out, threads=args.threads, force=args.force, echo=print)
        if status == EXIT_OK:
            print(f"artifacts in {out}")
        return status

    try:
        cfg = load_config(args.config, args.out, args.threads, need_input=(cmd == "ingest"))
        if cfg.out is None:
            raise ConfigError("no output directory: pass --out or set [output] dir")
        if cmd == "pioneers" and (args.birth_from is not None or args.birth_to is not None):
            a = cfg.analysis
            cfg.analysis = replace(a, birth_from=args.birth_from if args.birth_from is not None else a.birth_from,
                                   birth_to=args.birth_to if args.birth_to is not None else a.birth_to)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    ctx = Context(cfg, cfg.out, args.force)
    extra = ()
    if cmd == "estimate":
        extra = (args.spec,)
    elif cmd == "report":
        extra = (args.fig3_bins,)
    return _run_stage(ctx, cmd, STAGE_FUNCS[cmd], *extra)


if __name__ == "__main__":
    sys.exit(main())
