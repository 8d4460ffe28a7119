"""Run orchestration and report assembly.

One run walks the manifest, scores each (paper, artifact) binding over
the enabled metric families, and produces a Report: per-artifact score
cards, per-method aggregate means, cost accounting, and a parameter
fingerprint that guards later merges. Failures are isolated per
(artifact, family): a judge outage never voids the rule scores.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import yaml

from . import judge as judge_mod
from . import quiz as quiz_mod
from .clock import SYSTEM_CLOCK
from .corpus import Manifest, load_artifact
from .errors import (
    ConfigError,
    FingerprintMismatchError,
    MergeOverlapError,
    PagevalError,
)
from .gateway import Gateway, ProviderProfile, ReplayStore
from .html_analyzer import parse_html
from .layout import ContainerMeasure, Viewport, balance_deviation, estimate_layout, import_layout
from .link_audit import (
    AuditConfig,
    LinkCensus,
    annotate_relevance,
    audit_external,
    census,
    check_internal,
)
from .metrics import (
    BalanceParams,
    ConnectivitySaturation,
    EfficiencyParams,
    RuleScores,
    compute_rule_scores,
    info_efficiency,
    verbosity_penalty,
)

SCORING_VERSION = 1
FAMILIES = ("rule", "judge", "quiz")

_REPLAY_TIMESTAMP = 0.0  # replay reports are timeless; pinned for reproducibility


@dataclass(frozen=True)
class ReaderSpec:
    profile: str
    group: str = "open"  # open | closed

    def __post_init__(self):
        if self.group not in ("open", "closed"):
            raise ValueError(f"reader group must be open or closed, not {self.group!r}")


@dataclass(frozen=True)
class EvalConfig:
    families: tuple = ("rule",)
    balance: BalanceParams = field(default_factory=BalanceParams)
    efficiency: EfficiencyParams = field(default_factory=EfficiencyParams)
    saturation: ConnectivitySaturation = field(default_factory=ConnectivitySaturation)
    audit: AuditConfig = field(default_factory=AuditConfig)
    viewport: Viewport = field(default_factory=Viewport)
    quiz: quiz_mod.QuizParams = field(default_factory=quiz_mod.QuizParams)
    profiles: tuple = ()
    judge_profile: str = ""
    examiner_profile: str = ""
    relevance_profile: str = ""
    readers: tuple = ()
    gateway_mode: str = "live"
    replay_store: str | None = None
    relevance_check: bool = False
    self_hosts: tuple = ()
    workers: int = 4
    strict: bool = False

    def profile(self, name: str) -> ProviderProfile:
        for p in self.profiles:
            if p.name == name:
                return p
        raise ConfigError(f"no provider profile named {name!r}")

    def needs_gateway(self) -> bool:
        return ("judge" in self.families or "quiz" in self.families
                or self.relevance_check)

    def validate(self):
        if not self.families:
            raise ConfigError("at least one metric family must be enabled")
        unknown = set(self.families) - set(FAMILIES)
        if unknown:
            raise ConfigError(f"unknown families: {sorted(unknown)}")
        if self.gateway_mode not in ("live", "record", "replay"):
            raise ConfigError(f"unknown gateway mode {self.gateway_mode!r}")
        if self.gateway_mode in ("record", "replay") and not self.replay_store:
            raise ConfigError(f"{self.gateway_mode} mode requires replay_store")
        if "judge" in self.families:
            if not self.judge_profile:
                raise ConfigError("judge family enabled but judge_profile unset")
            self.profile(self.judge_profile)
        if "quiz" in self.families:
            if not self.examiner_profile:
                raise ConfigError("quiz family enabled but examiner_profile unset")
            self.profile(self.examiner_profile)
            if not self.readers:
                raise ConfigError("quiz family enabled but no readers configured")
            for spec in self.readers:
                self.profile(spec.profile)
        if self.relevance_check:
            if not self.relevance_profile:
                raise ConfigError("relevance_check enabled but relevance_profile unset")
            self.profile(self.relevance_profile)
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")

    def fingerprint(self) -> str:
        """Hash of every parameter that can change a score. Execution
        details (worker count, cache location, gateway mode) stay out so
        replayed and live runs of one parameter set can merge."""

        def profile_key(name):
            if not name:
                return None
            p = self.profile(name)
            return {"name": p.name, "model": p.model}

        payload = {
            "scoring_version": SCORING_VERSION,
            "families": sorted(self.families),
            "balance": {"gamma": self.balance.gamma, "mode": self.balance.mode},
            "efficiency": {"beta": self.efficiency.beta,
                           "reference_length": self.efficiency.reference_length},
            "saturation": {"external": self.saturation.sat_external,
                           "internal": self.saturation.sat_internal},
            "audit": {"timeout": self.audit.timeout,
                      "max_redirects": self.audit.max_redirects,
                      "per_host_interval": self.audit.per_host_interval,
                      "offline": self.audit.offline,
                      "cache_ttl": self.audit.cache_ttl},
            "viewport": asdict(self.viewport),
            "quiz": asdict(self.quiz),
            "judge_profile": profile_key(self.judge_profile),
            "examiner_profile": profile_key(self.examiner_profile),
            "relevance_profile": profile_key(self.relevance_profile),
            "readers": [{"profile": profile_key(r.profile), "group": r.group}
                        for r in self.readers],
            "relevance_check": self.relevance_check,
            "self_hosts": sorted(self.self_hosts),
        }
        canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def load_config(path) -> EvalConfig:
    """Build an EvalConfig from a YAML file. API keys never appear here;
    profiles name the environment variable that holds each key."""
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"unparsable config: {exc}") from exc
    return config_from_dict(doc or {})


def config_from_dict(doc: dict) -> EvalConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config root must be a mapping")

    def build(cls, key, **extra):
        section = doc.get(key) or {}
        if not isinstance(section, dict):
            raise ConfigError(f"config section {key!r} must be a mapping")
        try:
            return cls(**{**section, **extra})
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad config section {key!r}: {exc}") from exc

    audit_section = dict(doc.get("audit") or {})
    if "cache_path" in audit_section and audit_section["cache_path"]:
        audit_section["cache_path"] = Path(audit_section["cache_path"])
    try:
        audit = AuditConfig(**audit_section)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config section 'audit': {exc}") from exc

    try:
        profiles = tuple(ProviderProfile(**p) for p in doc.get("profiles") or ())
        readers = tuple(ReaderSpec(**r) for r in doc.get("readers") or ())
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad profile or reader record: {exc}") from exc

    try:
        cfg = EvalConfig(
            families=tuple(doc.get("families") or ("rule",)),
            balance=build(BalanceParams, "balance"),
            efficiency=build(EfficiencyParams, "efficiency"),
            saturation=build(ConnectivitySaturation, "saturation"),
            audit=audit,
            viewport=build(Viewport, "viewport"),
            quiz=build(quiz_mod.QuizParams, "quiz"),
            profiles=profiles,
            judge_profile=str(doc.get("judge_profile", "")),
            examiner_profile=str(doc.get("examiner_profile", "")),
            relevance_profile=str(doc.get("relevance_profile", "")),
            readers=readers,
            gateway_mode=str(doc.get("gateway_mode", "live")),
            replay_store=doc.get("replay_store"),
            relevance_check=bool(doc.get("relevance_check", False)),
            self_hosts=tuple(doc.get("self_hosts") or ()),
            workers=int(doc.get("workers", 4)),
            strict=bool(doc.get("strict", False)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config: {exc}") from exc
    cfg.validate()
    return cfg


@dataclass(frozen=True)
class ScoreCard:
    artifact_id: str
    paper_id: str
    method: str
    rule: RuleScores | None = None
    census: LinkCensus | None = None
    judge: dict | None = None  # dimension -> {mean,min,max,n}
    judge_verdicts: tuple = ()
    judge_missing: tuple = ()
    quiz: quiz_mod.PanelSummary | None = None
    quiz_results: tuple = ()
    failures: tuple = ()  # (family, reason)
    warnings: tuple = ()
    cost: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Report:
    fingerprint: str
    created_at: str
    engine: str
    mode: str
    cards: tuple
    aggregates: dict
    cost: dict


# -- scoring one artifact ------------------------------------------------


def _score_rule_family(page, artifact, config: EvalConfig, gateway):
    if artifact.layout_import is not None:
        containers = import_layout(artifact.layout_import)
    else:
        containers = estimate_layout(page, config.viewport)
    deviation = balance_deviation(containers)

    ext_verdicts = audit_external(page.links, config.audit)
    if config.relevance_check:
        page_title = page.sections[0][0] if page.sections else artifact.id
        ext_verdicts = annotate_relevance(
            ext_verdicts, page.links, page_title, gateway,
            config.profile(config.relevance_profile), tag=artifact.id)
    int_verdicts = check_internal(page.links, page.anchors_defined)
    link_census = census(page.links, ext_verdicts, int_verdicts,
                         relevance_checked=config.relevance_check)
    rule = compute_rule_scores(
        deviation, page.visible_text_length,
        link_census.n_external_valid, link_census.n_internal_valid,
        config.balance, config.efficiency, config.saturation)
    return rule, link_census


def _score_artifact(paper, artifact, config: EvalConfig, gateway, quiz_outcome):
    failures = []
    warnings = []
    rule = link_census = judge_agg = panel = None
    verdicts = ()
    missing = ()
    quiz_results = ()

    try:
        loaded = load_artifact(artifact)
        page = parse_html(loaded.html_bytes,
                          self_hosts=frozenset(config.self_hosts))
        warnings.extend(page.warnings)
    except (PagevalError, ValueError) as exc:
        failures = [(family, f"artifact unreadable: {exc}")
                    for family in config.families]
        return ScoreCard(artifact_id=artifact.id, paper_id=paper.id,
                         method=artifact.method, failures=tuple(failures))

    if "rule" in config.families:
        try:
            rule, link_census = _score_rule_family(page, artifact, config, gateway)
        except PagevalError as exc:
            failures.append(("rule", str(exc)))

    if "judge" in config.families:
        profile = config.profile(config.judge_profile)
        shots = [str(s) for s in loaded.screenshots]
        dims = list(judge_mod.SOURCE_DIMENSIONS)
        if shots:
            dims = list(judge_mod.ALL_DIMENSIONS)
        else:
            failures.extend(
                (f"judge:{d}", "no screenshots declared")
                for d in judge_mod.VISUAL_DIMENSIONS)
        verdicts, judge_failures = judge_mod.run_judge_panel(
            shots, page, gateway, profile, dimensions=dims, tag=artifact.id)
        failures.extend((f"judge:{d}", reason)
                        for d, reason in sorted(judge_failures.items()))
        judge_agg, missing = judge_mod.aggregate_panel(verdicts)

    if "quiz" in config.families:
        # the page's own length sets the penalty, whether or not the
        # rule family ran
        ratio, _ = info_efficiency(page.visible_text_length, config.efficiency)
        penalty = verbosity_penalty(ratio, config.efficiency.beta)
        if isinstance(quiz_outcome, quiz_mod.QuizSet):
            if not loaded.screenshots:
                failures.append(("quiz", "no screenshots declared"))
            else:
                shots = [str(s) for s in loaded.screenshots]
                results = []
                for spec in config.readers:
                    sheet = quiz_mod.administer(
                        quiz_outcome, shots, gateway,
                        config.profile(spec.profile), tag=artifact.id)
                    results.append(quiz_mod.apply_penalty(
                        quiz_mod.score_reader(sheet, quiz_outcome), penalty))
                quiz_results = tuple(results)
                groups = {spec.profile: spec.group for spec in config.readers}
                panel = quiz_mod.panel_aggregate(results, groups, penalty)
        else:
            failures.append(("quiz", f"quiz unavailable: {quiz_outcome}"))

    cost = gateway.cost_report().for_tag(artifact.id) if gateway else {}
    return ScoreCard(
        artifact_id=artifact.id,
        paper_id=paper.id,
        method=artifact.method,
        rule=rule,
        census=link_census,
        judge=judge_agg,
        judge_verdicts=verdicts,
        judge_missing=missing,
        quiz=panel,
        quiz_results=quiz_results,
        failures=tuple(failures),
        warnings=tuple(warnings),
        cost=cost,
    )


# -- aggregates ----------------------------------------------------------


def _card_metrics(card: ScoreCard) -> dict:
    out = {}
    if card.rule is not None:
        out["rule_balance"] = card.rule.image_text_score
        out["rule_efficiency"] = card.rule.efficiency_score
        out["rule_completeness"] = card.rule.completeness_score
        out["rule_connectivity"] = card.rule.connectivity_score
        out["verbosity_penalty"] = card.rule.verbosity_penalty
    if card.judge:
        for dim, stats in card.judge.items():
            out[f"judge_{dim}"] = stats["mean"]
    if card.quiz is not None:
        out["quiz_verbatim"] = card.quiz.verbatim_avg
        out["quiz_interpretive"] = card.quiz.interpretive_avg
        out["quiz_raw"] = card.quiz.raw_overall
        out["quiz_penalty"] = card.quiz.penalty
        out["quiz_penalized"] = card.quiz.penalized_overall
    return out


def compute_aggregates(cards) -> dict:
    """Mean of every metric per generation method, over the cards that
    carry the metric."""
    sums = {}
    for card in cards:
        bucket = sums.setdefault(card.method, {})
        bucket.setdefault("__n__", 0)
        bucket["__n__"] += 1
        for metric, value in _card_metrics(card).items():
            total, n = bucket.get(metric, (0.0, 0))
            bucket[metric] = (total + value, n + 1)
    out = {}
    for method, bucket in sorted(sums.items()):
        row = {"n_artifacts": bucket.pop("__n__")}
        for metric, (total, n) in sorted(bucket.items()):
            row[metric] = total / n
        out[method] = row
    return out


# -- serialization -------------------------------------------------------


def _tupleize(value):
    if isinstance(value, list):
        return tuple(_tupleize(v) for v in value)
    return value


def _card_to_dict(card: ScoreCard) -> dict:
    return {
        "artifact_id": card.artifact_id,
        "paper_id": card.paper_id,
        "method": card.method,
        "rule": asdict(card.rule) if card.rule else None,
        "census": asdict(card.census) if card.census else None,
        "judge": card.judge,
        "judge_verdicts": [asdict(v) for v in card.judge_verdicts],
        "judge_missing": list(card.judge_missing),
        "quiz": asdict(card.quiz) if card.quiz else None,
        "quiz_results": [asdict(r) for r in card.quiz_results],
        "failures": [list(f) for f in card.failures],
        "warnings": list(card.warnings),
        "cost": card.cost,
    }


def _card_from_dict(doc: dict) -> ScoreCard:
    rule = doc.get("rule")
    if rule is not None:
        rule = RuleScores(**{**rule, "warnings": _tupleize(rule.get("warnings", []))})
    cen = doc.get("census")
    if cen is not None:
        cen = LinkCensus(**{**cen, "breakdown": _tupleize(cen.get("breakdown", []))})
    quiz = doc.get("quiz")
    if quiz is not None:
        quiz = quiz_mod.PanelSummary(
            **{**quiz, "failures": _tupleize(quiz.get("failures", []))})
    return ScoreCard(
        artifact_id=doc["artifact_id"],
        paper_id=doc["paper_id"],
        method=doc["method"],
        rule=rule,
        census=cen,
        judge=doc.get("judge"),
        judge_verdicts=tuple(judge_mod.JudgeVerdict(**v)
                             for v in doc.get("judge_verdicts", [])),
        judge_missing=tuple(doc.get("judge_missing", [])),
        quiz=quiz,
        quiz_results=tuple(quiz_mod.QuizResult(**r)
                           for r in doc.get("quiz_results", [])),
        failures=_tupleize(doc.get("failures", [])),
        warnings=tuple(doc.get("warnings", [])),
        cost=doc.get("cost", {}),
    )


def report_to_dict(report: Report) -> dict:
    return {
        "fingerprint": report.fingerprint,
        "created_at": report.created_at,
        "engine": report.engine,
        "mode": report.mode,
        "cards": [_card_to_dict(c) for c in report.cards],
        "aggregates": report.aggregates,
        "cost": report.cost,
    }


def report_from_dict(doc: dict) -> Report:
    return Report(
        fingerprint=doc["fingerprint"],
        created_at=doc["created_at"],
        engine=doc["engine"],
        mode=doc["mode"],
        cards=tuple(_card_from_dict(c) for c in doc["cards"]),
        aggregates=doc["aggregates"],
        cost=doc.get("cost", {}),
    )


def emit(report: Report, fmt: str = "structured", path=None) -> str:
    """Serialize a report. Structured output is canonical JSON (sorted
    keys, fixed indentation) so identical runs emit identical bytes.
    Aggregates are recomputed before writing; a mismatch means the report
    was tampered with or built inconsistently."""
    recomputed = compute_aggregates(report.cards)
    if recomputed != report.aggregates:
        raise PagevalError("report aggregates do not match its score cards")
    if fmt == "structured":
        text = json.dumps(report_to_dict(report), sort_keys=True, indent=2) + "\n"
    elif fmt == "tabular":
        text = _emit_tabular(report)
    elif fmt == "human":
        text = _emit_human(report)
    else:
        raise ConfigError(f"unknown report format {fmt!r}")
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


_TABULAR_COLUMNS = (
    "rule_connectivity", "rule_completeness", "rule_balance", "rule_efficiency",
    "judge_interactive", "judge_aesthetic", "judge_informative",
    "judge_completeness_llm", "judge_connectivity_llm",
    "quiz_verbatim", "quiz_interpretive", "quiz_raw",
    "quiz_penalty", "quiz_penalized",
)


def _emit_tabular(report: Report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("method", "n_artifacts") + _TABULAR_COLUMNS)
    for method, row in sorted(report.aggregates.items()):
        writer.writerow(
            [method, row.get("n_artifacts", 0)]
            + [f"{row[c]:.4f}" if c in row else "" for c in _TABULAR_COLUMNS])
    return buf.getvalue()


def _emit_human(report: Report) -> str:
    lines = [
        f"report {report.fingerprint[:12]}  mode={report.mode}  "
        f"created={report.created_at}",
        "",
    ]
    for method, row in sorted(report.aggregates.items()):
        lines.append(f"{method}  (n={row.get('n_artifacts', 0)})")
        for metric in _TABULAR_COLUMNS:
            if metric in row:
                lines.append(f"  {metric:<24} {row[metric]:.3f}")
        lines.append("")
    failed = [(c.artifact_id, f) for c in report.cards for f in c.failures]
    if failed:
        lines.append("failures:")
        lines.extend(f"  {aid}: {fam}: {reason}" for aid, (fam, reason) in
                     ((aid, f) for aid, f in failed))
        lines.append("")
    total = report.cost.get("total_cost", 0.0) if report.cost else 0.0
    lines.append(f"model spend: {total:.4f}")
    return "\n".join(lines) + "\n"


def load_report(source) -> Report:
    """Read a structured report back; accepts a path or raw JSON text."""
    text = str(source)
    try:
        p = Path(text)
        if p.exists():
            text = p.read_text(encoding="utf-8")
    except (OSError, ValueError):
        pass  # not a usable path; treat as raw JSON
    return report_from_dict(json.loads(text))


def merge(reports) -> Report:
    """Combine disjoint reports produced under one parameter set."""
    reports = list(reports)
    if not reports:
        raise ConfigError("nothing to merge")
    fp = reports[0].fingerprint
    for r in reports[1:]:
        if r.fingerprint != fp:
            raise FingerprintMismatchError(
                f"cannot merge: fingerprint {r.fingerprint[:12]} != {fp[:12]}")
    seen = {}
    for r in reports:
        for card in r.cards:
            if card.artifact_id in seen:
                raise MergeOverlapError(
                    f"artifact {card.artifact_id!r} appears in more than one report")
            seen[card.artifact_id] = card
    cards = tuple(sorted(seen.values(), key=lambda c: c.artifact_id))

    def merge_cost(dicts):
        out = {}
        for d in dicts:
            for key, value in (d or {}).items():
                if isinstance(value, dict):
                    out[key] = merge_cost([out.get(key, {}), value])
                elif isinstance(value, (int, float)):
                    out[key] = out.get(key, 0) + value
                else:
                    out[key] = value
        return out

    return Report(
        fingerprint=fp,
        created_at=max(r.created_at for r in reports),
        engine=reports[0].engine,
        mode="+".join(sorted({r.mode for r in reports})),
        cards=cards,
        aggregates=compute_aggregates(cards),
        cost=merge_cost([r.cost for r in reports]),
    )


# -- entry point ---------------------------------------------------------


def run(manifest: Manifest, config: EvalConfig, *, gateway: Gateway | None = None,
        clock=None) -> Report:
    """Score every binding in the manifest under the given configuration."""
    from . import __version__

    config.validate()
    clock = clock or SYSTEM_CLOCK
    owns_gateway = False
    if gateway is None and config.needs_gateway():
        store = ReplayStore(config.replay_store) if config.replay_store else None
        gateway = Gateway(config.gateway_mode, store, clock=clock)
        owns_gateway = True

    try:
        quizzes = {}
        if "quiz" in config.families:
            examiner = config.profile(config.examiner_profile)
            for paper_id, _ in manifest.entries:
                paper = manifest.paper(paper_id)
                try:
                    quizzes[paper_id] = quiz_mod.generate_quiz(
                        paper, gateway, examiner, config.quiz, tag=paper_id)
                except PagevalError as exc:
                    quizzes[paper_id] = str(exc)

        jobs = [(manifest.paper(pid), manifest.artifact(aid))
                for pid, aids in manifest.entries for aid in aids]
        cards = []
        if config.workers == 1 or len(jobs) <= 1:
            for paper, artifact in jobs:
                cards.append(_score_artifact(paper, artifact, config, gateway,
                                             quizzes.get(paper.id)))
        else:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                futures = [
                    pool.submit(_score_artifact, paper, artifact, config,
                                gateway, quizzes.get(paper.id))
                    for paper, artifact in jobs
                ]
                cards = [f.result() for f in futures]
    finally:
        if owns_gateway and gateway is not None:
            gateway.close()

    cards = tuple(sorted(cards, key=lambda c: c.artifact_id))
    ts = _REPLAY_TIMESTAMP if config.gateway_mode == "replay" else clock.time()
    created = datetime.fromtimestamp(ts, timezone.utc).isoformat()
    return Report(
        fingerprint=config.fingerprint(),
        created_at=created,
        engine=f"pageval {__version__}",
        mode=config.gateway_mode,
        cards=cards,
        aggregates=compute_aggregates(cards),
        cost=gateway.cost_report().to_dict() if gateway else {},
    )
