"""Corpus plumbing: the manifest binding papers to webpage artifacts.

A manifest is a YAML file listing paper sources, webpage artifacts, and
the bindings between them. All relative paths resolve against the
manifest's own directory so a corpus stays relocatable.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import yaml

from .errors import ArtifactIOError, DanglingIdError, DuplicateIdError, ManifestError

KNOWN_METHODS = ("original", "generated")


@dataclass(frozen=True)
class PaperSource:
    id: str
    markdown: str
    title: str = ""
    meta: tuple = ()  # sorted (key, value) pairs; kept hashable

    @property
    def meta_dict(self) -> dict:
        return dict(self.meta)


@dataclass(frozen=True)
class WebpageArtifact:
    id: str
    method: str
    html: Path
    asset_dir: Path | None = None
    screenshots: tuple = ()
    layout_import: Path | None = None


@dataclass(frozen=True)
class Manifest:
    papers: tuple = ()
    artifacts: tuple = ()
    # (paper_id, (artifact_id, ...)) in declared order
    entries: tuple = ()

    def paper(self, paper_id: str) -> PaperSource:
        for p in self.papers:
            if p.id == paper_id:
                return p
        raise DanglingIdError(f"unknown paper id {paper_id!r}")

    def artifact(self, artifact_id: str) -> WebpageArtifact:
        for a in self.artifacts:
            if a.id == artifact_id:
                return a
        raise DanglingIdError(f"unknown artifact id {artifact_id!r}")

    def bindings(self):
        """Yield (paper, artifact) pairs in manifest order."""
        for paper_id, artifact_ids in self.entries:
            paper = self.paper(paper_id)
            for artifact_id in artifact_ids:
                yield paper, self.artifact(artifact_id)


@dataclass(frozen=True)
class LoadedArtifact:
    artifact: WebpageArtifact
    html_bytes: bytes
    screenshots: tuple


def _require(record: dict, name: str, locus: str):
    if name not in record or record[name] in (None, ""):
        raise ManifestError(f"missing required field {name!r}", locus=locus)
    return record[name]


def _as_meta(raw, locus: str) -> tuple:
    if raw is None:
        return ()
    if not isinstance(raw, dict):
        raise ManifestError("'meta' must be a mapping", locus=locus)
    return tuple(sorted((str(k), str(v)) for k, v in raw.items()))


def _load_paper(record: dict, base: Path, locus: str) -> PaperSource:
    if not isinstance(record, dict):
        raise ManifestError("paper record must be a mapping", locus=locus)
    pid = str(_require(record, "id", locus))
    if "markdown" in record and record["markdown"]:
        markdown = str(record["markdown"])
    else:
        rel = _require(record, "markdown_path", locus)
        md_path = (base / rel).resolve() if not Path(rel).is_absolute() else Path(rel)
        try:
            markdown = md_path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ManifestError(f"cannot read markdown_path {md_path}: {exc}", locus=locus) from exc
    if not markdown.strip():
        raise ManifestError("paper markdown is empty", locus=locus)
    return PaperSource(
        id=pid,
        markdown=markdown,
        title=str(record.get("title", "")),
        meta=_as_meta(record.get("meta"), locus),
    )


def _resolve(base: Path, rel) -> Path:
    p = Path(str(rel))
    return p if p.is_absolute() else (base / p).resolve()


def _load_artifact_record(record: dict, base: Path, locus: str) -> WebpageArtifact:
    if not isinstance(record, dict):
        raise ManifestError("artifact record must be a mapping", locus=locus)
    aid = str(_require(record, "id", locus))
    method = str(_require(record, "method", locus))
    html = _resolve(base, _require(record, "html", locus))
    if not html.is_file():
        raise ManifestError(f"html path does not exist or is not readable: {html}", locus=locus)
    shots_raw = record.get("screenshots") or []
    if not isinstance(shots_raw, list):
        raise ManifestError("'screenshots' must be a list", locus=locus)
    asset_dir = record.get("asset_dir")
    layout_import = record.get("layout_import")
    return WebpageArtifact(
        id=aid,
        method=method,
        html=html,
        asset_dir=_resolve(base, asset_dir) if asset_dir else None,
        screenshots=tuple(_resolve(base, s) for s in shots_raw),
        layout_import=_resolve(base, layout_import) if layout_import else None,
    )


def _check_unique(ids, what: str):
    seen = set()
    for i in ids:
        if i in seen:
            raise DuplicateIdError(f"duplicate {what} id {i!r}")
        seen.add(i)


def load_manifest(path) -> Manifest:
    """Parse and validate a manifest file.

    Raises ManifestError with a line locus on unparsable YAML, a field
    locus on missing fields, DuplicateIdError / DanglingIdError on id
    problems, including an artifact bound to more than one paper.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestError(f"cannot read manifest {path}: {exc}") from exc
    try:
        doc = yaml.safe_load(text)
    except yaml.MarkedYAMLError as exc:
        line = exc.problem_mark.line + 1 if exc.problem_mark else "?"
        raise ManifestError(f"unparsable manifest: {exc.problem}", locus=f"line {line}") from exc
    except yaml.YAMLError as exc:
        raise ManifestError(f"unparsable manifest: {exc}") from exc
    if not isinstance(doc, dict):
        raise ManifestError("manifest root must be a mapping")

    base = path.parent
    papers = tuple(
        _load_paper(rec, base, f"papers[{i}]")
        for i, rec in enumerate(doc.get("papers") or [])
    )
    artifacts = tuple(
        _load_artifact_record(rec, base, f"artifacts[{i}]")
        for i, rec in enumerate(doc.get("artifacts") or [])
    )
    _check_unique([p.id for p in papers], "paper")
    _check_unique([a.id for a in artifacts], "artifact")

    paper_ids = {p.id for p in papers}
    artifact_ids = {a.id for a in artifacts}
    entries = []
    bound = {}
    for i, rec in enumerate(doc.get("entries") or []):
        locus = f"entries[{i}]"
        if not isinstance(rec, dict):
            raise ManifestError("entry must be a mapping", locus=locus)
        pid = str(_require(rec, "paper", locus))
        if pid not in paper_ids:
            raise DanglingIdError(f"entry references unknown paper id {pid!r}")
        arts = rec.get("artifacts") or []
        if not isinstance(arts, list) or not arts:
            raise ManifestError("entry needs a non-empty 'artifacts' list", locus=locus)
        for aid in arts:
            aid = str(aid)
            if aid not in artifact_ids:
                raise DanglingIdError(f"entry references unknown artifact id {aid!r}")
            if aid in bound:
                raise DuplicateIdError(
                    f"artifact {aid!r} bound to both {bound[aid]!r} and {pid!r}")
            bound[aid] = pid
        entries.append((pid, tuple(str(a) for a in arts)))

    return Manifest(papers=papers, artifacts=artifacts, entries=tuple(entries))


def load_artifact(artifact: WebpageArtifact) -> LoadedArtifact:
    """Read the artifact's HTML bytes and hand back screenshot paths in
    declared order. Screenshot files are opened lazily by consumers."""
    try:
        html_bytes = artifact.html.read_bytes()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read artifact html: {exc}", path=str(artifact.html)) from exc
    return LoadedArtifact(artifact=artifact, html_bytes=html_bytes,
                          screenshots=tuple(artifact.screenshots))


def emit_manifest(manifest: Manifest, path=None) -> str:
    """Serialize a manifest; load(emit(m)) reproduces m. Paper text is
    inlined and artifact paths are written absolute so the output does
    not depend on where it is saved."""
    doc = {
        "papers": [
            {
                "id": p.id,
                "title": p.title,
                "markdown": p.markdown,
                "meta": {k: v for k, v in p.meta},
            }
            for p in manifest.papers
        ],
        "artifacts": [
            {
                "id": a.id,
                "method": a.method,
                "html": str(a.html),
                **({"asset_dir": str(a.asset_dir)} if a.asset_dir else {}),
                **({"screenshots": [str(s) for s in a.screenshots]} if a.screenshots else {}),
                **({"layout_import": str(a.layout_import)} if a.layout_import else {}),
            }
            for a in manifest.artifacts
        ],
        "entries": [
            {"paper": pid, "artifacts": list(aids)} for pid, aids in manifest.entries
        ],
    }
    text = yaml.safe_dump(doc, sort_keys=False, allow_unicode=True)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text
