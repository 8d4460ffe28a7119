"""Command-line entry points.

Exit codes: 0 on success, 2 on configuration or manifest errors, 3 when
--strict is set and any (artifact, family) failed while the rest of the
run completed.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from . import __version__, quiz as quiz_mod, report as report_mod
from .corpus import load_manifest
from .errors import ManifestError, PagevalError, QuizValidationError
from .gateway import Gateway, ReplayStore
from .html_analyzer import parse_html
from .link_audit import audit_external, census, check_internal
from .report import EvalConfig, load_config

EXIT_CONFIG = 2
EXIT_PARTIAL = 3


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _config(path: str | None, **overrides) -> EvalConfig:
    try:
        cfg = load_config(path) if path else EvalConfig()
        changed = {k: v for k, v in overrides.items() if v is not None}
        if changed:
            from dataclasses import replace
            cfg = replace(cfg, **changed)
            cfg.validate()
        return cfg
    except PagevalError as exc:
        _fail(str(exc), EXIT_CONFIG)


def _manifest(path: str):
    try:
        return load_manifest(path)
    except ManifestError as exc:
        _fail(str(exc), EXIT_CONFIG)


@click.group()
@click.version_option(version=__version__, prog_name="pageval")
def main():
    """Score academic project webpages against their papers."""


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="Evaluation config YAML.")
@click.option("--families", help="Comma-separated subset of rule,judge,quiz.")
@click.option("--mode", type=click.Choice(["live", "record", "replay"]),
              help="Gateway mode override.")
@click.option("--store", type=click.Path(), help="Replay store directory.")
@click.option("--workers", type=int, help="Concurrent artifact workers.")
@click.option("--out", type=click.Path(), help="Write the report here.")
@click.option("--format", "fmt", default="structured",
              type=click.Choice(["structured", "tabular", "human"]))
@click.option("--strict", is_flag=True, default=None,
              help="Exit 3 if any artifact/family failed.")
def score(manifest_path, config_path, families, mode, store, workers, out,
          fmt, strict):
    """Run the full scoring pipeline over MANIFEST_PATH."""
    manifest = _manifest(manifest_path)
    cfg = _config(
        config_path,
        families=tuple(families.split(",")) if families else None,
        gateway_mode=mode,
        replay_store=store,
        workers=workers,
        strict=strict,
    )
    try:
        report = report_mod.run(manifest, cfg)
        text = report_mod.emit(report, fmt, path=out)
    except PagevalError as exc:
        _fail(str(exc), EXIT_CONFIG)
    if out:
        click.echo(f"report written to {out}")
    else:
        click.echo(text, nl=False)
    n_failures = sum(len(c.failures) for c in report.cards)
    if n_failures and cfg.strict:
        click.echo(f"{n_failures} family failure(s); strict mode", err=True)
        sys.exit(EXIT_PARTIAL)


@main.command()
@click.argument("manifest_path", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--offline", is_flag=True, default=None,
              help="Answer from the verdict cache only.")
@click.option("--cache", "cache_path", type=click.Path(),
              help="Verdict cache file (JSON Lines).")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
def links(manifest_path, config_path, offline, cache_path, as_json):
    """Audit external and internal links for every artifact."""
    manifest = _manifest(manifest_path)
    cfg = _config(config_path)
    audit_cfg = cfg.audit
    from dataclasses import replace
    if offline is not None:
        audit_cfg = replace(audit_cfg, offline=offline)
    if cache_path:
        audit_cfg = replace(audit_cfg, cache_path=Path(cache_path))

    results = {}
    for paper, artifact in manifest.bindings():
        try:
            page = parse_html(artifact.html.read_bytes(),
                              self_hosts=frozenset(cfg.self_hosts))
        except (OSError, ValueError) as exc:
            _fail(f"cannot parse {artifact.id}: {exc}", EXIT_CONFIG)
        ext = audit_external(page.links, audit_cfg)
        internal = check_internal(page.links, page.anchors_defined)
        tally = census(page.links, ext, internal)
        results[artifact.id] = {
            "external": [v.__dict__ for v in ext],
            "internal": [v.__dict__ for v in internal],
            "census": tally.__dict__ | {"breakdown": list(tally.breakdown)},
        }
    if as_json:
        click.echo(json.dumps(results, indent=2, sort_keys=True, default=str))
        return
    for artifact_id, data in results.items():
        c = data["census"]
        click.echo(f"{artifact_id}: external {c['n_external_valid']}/"
                   f"{c['n_external_unique']} valid, internal "
                   f"{c['n_internal_valid']}/{c['n_internal_total']} valid")
        for v in data["external"] + data["internal"]:
            mark = "ok" if v["reachable"] else "FAIL"
            click.echo(f"  [{mark}] {v['target']} ({v['reason']})")


@main.group()
def quiz():
    """Generate and administer paper quizzes."""


@quiz.command("gen")
@click.argument("manifest_path", type=click.Path(exists=True))
@click.argument("paper_id")
@click.option("--config", "config_path", type=click.Path(exists=True),
              required=True)
@click.option("--out", type=click.Path(), required=True,
              help="Quiz document destination (JSON).")
def quiz_gen(manifest_path, paper_id, config_path, out):
    """Generate the 50-question quiz for PAPER_ID."""
    manifest = _manifest(manifest_path)
    cfg = _config(config_path)
    if not cfg.examiner_profile:
        _fail("config has no examiner_profile", EXIT_CONFIG)
    try:
        paper = manifest.paper(paper_id)
    except ManifestError as exc:
        _fail(str(exc), EXIT_CONFIG)
    store = ReplayStore(cfg.replay_store) if cfg.replay_store else None
    try:
        with Gateway(cfg.gateway_mode, store) as gateway:
            quiz_set = quiz_mod.generate_quiz(
                paper, gateway, cfg.profile(cfg.examiner_profile), cfg.quiz,
                tag=paper_id)
    except QuizValidationError as exc:
        for violation in exc.violations:
            click.echo(f"  violation: {violation}", err=True)
        _fail(str(exc), EXIT_PARTIAL)
    except PagevalError as exc:
        _fail(str(exc), EXIT_CONFIG)
    quiz_mod.save_quiz(quiz_set, out)
    click.echo(f"quiz for {paper_id} written to {out}")


@quiz.command("run")
@click.argument("quiz_path", type=click.Path(exists=True))
@click.argument("manifest_path", type=click.Path(exists=True))
@click.argument("artifact_id")
@click.option("--config", "config_path", type=click.Path(exists=True),
              required=True)
@click.option("--out", type=click.Path(), help="Write reader results JSON here.")
def quiz_run(quiz_path, manifest_path, artifact_id, config_path, out):
    """Administer a saved quiz against one artifact's screenshots."""
    manifest = _manifest(manifest_path)
    cfg = _config(config_path)
    if not cfg.readers:
        _fail("config has no readers", EXIT_CONFIG)
    try:
        artifact = manifest.artifact(artifact_id)
    except ManifestError as exc:
        _fail(str(exc), EXIT_CONFIG)
    if not artifact.screenshots:
        _fail(f"artifact {artifact_id} declares no screenshots", EXIT_CONFIG)

    paper_id = next((pid for pid, aids in manifest.entries
                     if artifact_id in aids), "")
    try:
        quiz_set = quiz_mod.load_quiz(quiz_path, paper_id, cfg.quiz)
    except (QuizValidationError, json.JSONDecodeError) as exc:
        _fail(f"bad quiz document: {exc}", EXIT_CONFIG)

    from .metrics import info_efficiency, verbosity_penalty
    page = parse_html(artifact.html.read_bytes())
    ratio, _ = info_efficiency(page.visible_text_length, cfg.efficiency)
    penalty = verbosity_penalty(ratio, cfg.efficiency.beta)

    store = ReplayStore(cfg.replay_store) if cfg.replay_store else None
    shots = [str(s) for s in artifact.screenshots]
    results = []
    try:
        with Gateway(cfg.gateway_mode, store) as gateway:
            for spec in cfg.readers:
                sheet = quiz_mod.administer(quiz_set, shots, gateway,
                                            cfg.profile(spec.profile),
                                            tag=artifact_id)
                result = quiz_mod.apply_penalty(
                    quiz_mod.score_reader(sheet, quiz_set), penalty)
                results.append(result)
    except PagevalError as exc:
        _fail(str(exc), EXIT_CONFIG)

    groups = {spec.profile: spec.group for spec in cfg.readers}
    panel = quiz_mod.panel_aggregate(results, groups, penalty)
    from dataclasses import asdict
    payload = {
        "artifact": artifact_id,
        "readers": [asdict(r) for r in results],
        "panel": asdict(panel),
    }
    text = json.dumps(payload, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
        click.echo(f"results written to {out}")
    else:
        click.echo(text)
    if any(r.failure for r in results):
        sys.exit(EXIT_PARTIAL)


@main.group()
def report():
    """Operate on emitted reports."""


@report.command("merge")
@click.argument("paths", nargs=-1, required=True,
                type=click.Path(exists=True))
@click.option("--out", type=click.Path(), required=True)
def report_merge(paths, out):
    """Merge disjoint reports produced under one parameter set."""
    try:
        merged = report_mod.merge([report_mod.load_report(p) for p in paths])
        report_mod.emit(merged, "structured", path=out)
    except (PagevalError, json.JSONDecodeError, KeyError) as exc:
        _fail(str(exc), EXIT_CONFIG)
    click.echo(f"merged {len(paths)} report(s) into {out}")


@main.command()
@click.argument("report_path", type=click.Path(exists=True))
def cost(report_path):
    """Print the model spend recorded in a report."""
    try:
        rep = report_mod.load_report(report_path)
    except (json.JSONDecodeError, KeyError) as exc:
        _fail(f"bad report: {exc}", EXIT_CONFIG)
    data = rep.cost or {}
    click.echo(f"total cost:   {data.get('total_cost', 0.0):.6f}")
    click.echo(f"total calls:  {data.get('total_calls', 0)}")
    click.echo(f"tokens in:    {data.get('total_tokens_in', 0)}")
    click.echo(f"tokens out:   {data.get('total_tokens_out', 0)}")
    for section in ("by_profile", "by_family"):
        rows = data.get(section) or {}
        if rows:
            click.echo(f"{section.replace('_', ' ')}:")
            for name, stats in sorted(rows.items()):
                click.echo(f"  {name:<20} calls={stats.get('calls', 0):<5} "
                           f"cost={stats.get('cost', 0.0):.6f}")


if __name__ == "__main__":
    main()
