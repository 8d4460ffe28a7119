"""Knowledge-transfer testing: generate a 50-question quiz from the
paper, have reader models take it against webpage screenshots, grade,
and apply the page's verbosity penalty.

A quiz splits into two halves: verbatim questions answerable straight
from the text, and interpretive questions needing comprehension. Each
question has exactly four options labelled "A."  through "D." and an
aspect letter from a per-half alphabet. Readers must either commit to a
letter with a visual reference or answer NA; anything else is sanitized
to NA rather than guessed at.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

from .errors import GatewayError, QuizValidationError, SchemaFailureError
from .gateway import ChatRequest, ImagePart, Message, TextPart
from .resources import load_text, render

VERBATIM = "verbatim"
INTERPRETIVE = "interpretive"

OPTION_LABELS = ("A", "B", "C", "D")

# Content-aspect legends for the default alphabets. Custom alphabets
# fall back to unlabeled letters in the generation prompt.
VERBATIM_LEGEND = {
    "A": "Research area and background context",
    "B": "Problem, motivation, or research gap",
    "C": "Stated goal, hypothesis, or research question",
    "D": "Claimed contributions or novelty",
    "E": "Method or workflow, summarized",
    "F": "Datasets, corpora, or materials",
    "G": "Experimental setup or implementation details",
    "H": "Key quantitative results or metrics",
    "I": "Comparisons with baselines or prior systems",
    "J": "Ablations or analysis findings",
    "K": "Qualitative examples or case studies",
    "L": "Limitations or failure modes",
    "M": "Released resources or future directions",
}
INTERPRETIVE_LEGEND = {
    "A": "Why the problem matters",
    "B": "Synthesis of the core idea across sections",
    "C": "Reasons behind design choices",
    "D": "What the results imply",
    "E": "Strengths and weaknesses, weighed",
    "F": "How components of the approach relate",
    "G": "Generalization to other settings",
    "H": "Consequences of the limitations",
    "I": "Positioning against alternative approaches",
    "J": "Overall takeaway or significance",
}


@dataclass(frozen=True)
class QuizParams:
    questions_per_type: int = 25
    aspects_verbatim: str = "ABCDEFGHIJKLM"
    aspects_interpretive: str = "ABCDEFGHIJ"
    repair_rounds: int = 3

    def __post_init__(self):
        if self.questions_per_type < 1:
            raise ValueError("questions_per_type must be >= 1")
        for name in ("aspects_verbatim", "aspects_interpretive"):
            letters = getattr(self, name)
            if not letters or len(set(letters)) != len(letters):
                raise ValueError(f"{name} must be distinct letters")

    def alphabet(self, qtype: str) -> str:
        return self.aspects_verbatim if qtype == VERBATIM else self.aspects_interpretive


@dataclass(frozen=True)
class QuizQuestion:
    qid: str
    qtype: str  # verbatim | interpretive
    stem: str
    options: tuple  # exactly four, "A."-prefixed through "D."-prefixed
    correct: str  # option label
    aspect: str


@dataclass(frozen=True)
class QuizSet:
    paper_id: str
    questions: tuple

    def of_type(self, qtype: str) -> tuple:
        return tuple(q for q in self.questions if q.qtype == qtype)

    def answer_key(self) -> dict:
        return {q.qid: q.correct for q in self.questions}

    def aspects(self) -> dict:
        return {q.qid: q.aspect for q in self.questions}


@dataclass(frozen=True)
class ReaderAnswer:
    qid: str
    choice: str  # A | B | C | D | NA
    reference: str  # "NA" exactly when choice is NA


@dataclass(frozen=True)
class AnswerSheet:
    reader: str
    answers: tuple
    failure: str | None = None


@dataclass(frozen=True)
class QuizResult:
    reader: str
    accuracy_verbatim: float
    accuracy_interpretive: float
    raw_verbatim: float
    raw_interpretive: float
    penalty: float = 0.0
    penalized_verbatim: float = 0.0
    penalized_interpretive: float = 0.0
    penalized_overall: float = 0.0
    failure: str | None = None

    @property
    def raw_overall(self) -> float:
        return (self.raw_verbatim + self.raw_interpretive) / 2.0


# -- validation --------------------------------------------------------


def _question_keys(n: int) -> list:
    return [f"Question {i}" for i in range(1, n + 1)]


def _parse_block(block, qtype: str, alphabet: str, n_expected: int):
    """Check one generated half against the structural contract.

    Returns (questions, violations); questions is empty unless the block
    is fully valid.
    """
    violations = []
    if not isinstance(block, dict):
        return [], [f"{qtype}: reply must be a JSON object"]
    questions = block.get("questions")
    answers = block.get("answers")
    aspects = block.get("aspects")
    for name, part in (("questions", questions), ("answers", answers),
                       ("aspects", aspects)):
        if not isinstance(part, dict):
            violations.append(f"{qtype}: missing or non-object '{name}'")
    if violations:
        return [], violations

    expected_keys = _question_keys(n_expected)
    if set(questions) != set(expected_keys):
        violations.append(
            f"{qtype}: expected exactly {n_expected} questions keyed "
            f"'Question 1'..'Question {n_expected}', got {len(questions)}")

    parsed = []
    for i, key in enumerate(expected_keys, start=1):
        record = questions.get(key)
        if not isinstance(record, dict):
            if key in questions:
                violations.append(f"{qtype} {key}: not an object")
            continue
        stem = str(record.get("question", "")).strip()
        if not stem:
            violations.append(f"{qtype} {key}: empty question text")
        options = record.get("options")
        if not isinstance(options, list) or len(options) != 4:
            n = len(options) if isinstance(options, list) else "no"
            violations.append(f"{qtype} {key}: needs exactly 4 options, has {n}")
            options = None
        else:
            for label, option in zip(OPTION_LABELS, options):
                if not str(option).startswith(f"{label}."):
                    violations.append(
                        f"{qtype} {key}: option must start with '{label}.'")

        answer = answers.get(key)
        correct = ""
        if not isinstance(answer, str) or not answer.strip():
            violations.append(f"{qtype} {key}: missing answer")
        else:
            correct = answer.strip()[0].upper()
            if correct not in OPTION_LABELS:
                violations.append(
                    f"{qtype} {key}: answer must begin with one of A-D")

        aspect = aspects.get(key)
        if not isinstance(aspect, str) or len(aspect.strip()) != 1:
            violations.append(f"{qtype} {key}: aspect must be a single letter")
            aspect = ""
        else:
            aspect = aspect.strip()
            if aspect not in alphabet:
                violations.append(
                    f"{qtype} {key}: aspect {aspect!r} outside alphabet "
                    f"{alphabet!r}")

        if options is not None and correct and aspect:
            parsed.append(QuizQuestion(
                qid=f"{qtype[0].upper()}{i}", qtype=qtype, stem=stem,
                options=tuple(str(o) for o in options), correct=correct,
                aspect=aspect))

    if violations:
        return [], violations
    return parsed, []


def validate_quiz_set(quiz: QuizSet, params: QuizParams | None = None) -> list:
    """Return the list of contract violations (empty when compliant)."""
    params = params or QuizParams()
    violations = []
    for qtype in (VERBATIM, INTERPRETIVE):
        block = quiz.of_type(qtype)
        if len(block) != params.questions_per_type:
            violations.append(
                f"{qtype}: expected {params.questions_per_type} questions, "
                f"got {len(block)}")
        alphabet = params.alphabet(qtype)
        for q in block:
            if len(q.options) != 4:
                violations.append(f"{qtype} {q.qid}: {len(q.options)} options")
            for label, option in zip(OPTION_LABELS, q.options):
                if not option.startswith(f"{label}."):
                    violations.append(
                        f"{qtype} {q.qid}: option must start with '{label}.'")
            if q.correct not in OPTION_LABELS:
                violations.append(f"{qtype} {q.qid}: bad answer label")
            if q.aspect not in alphabet:
                violations.append(f"{qtype} {q.qid}: aspect outside alphabet")
    return violations


# -- generation --------------------------------------------------------


def _legend(qtype: str, alphabet: str) -> str:
    labels = VERBATIM_LEGEND if qtype == VERBATIM else INTERPRETIVE_LEGEND
    lines = []
    for letter in alphabet:
        label = labels.get(letter, "Additional content aspect")
        lines.append(f"- {letter}. {label}")
    return "\n".join(lines)


def generate_quiz(paper, gateway, profile, params: QuizParams | None = None,
                  *, tag: str = "") -> QuizSet:
    """Generate both halves through the gateway, one structured call per
    half, each with bounded regeneration on contract violations."""
    params = params or QuizParams()
    halves = {}
    for qtype, resource in ((VERBATIM, "quiz_verbatim"),
                            (INTERPRETIVE, "quiz_interpretive")):
        alphabet = params.alphabet(qtype)
        prompt = render(
            load_text(resource),
            n_questions=params.questions_per_type,
            aspect_legend=_legend(qtype, alphabet),
            document_markdown=paper.markdown,
        )
        req = ChatRequest(
            messages=(Message(role="user", parts=(TextPart(prompt),)),),
            temperature=0.0, max_tokens=8000,
            schema_tag=f"quiz_{qtype}_v1")

        def validate(data, qtype=qtype, alphabet=alphabet):
            parsed, violations = _parse_block(
                data, qtype, alphabet, params.questions_per_type)
            if violations:
                raise ValueError("; ".join(violations))
            return parsed

        try:
            parsed, _ = gateway.complete_structured(
                req, validate, profile, family="quiz", tag=tag,
                repair_rounds=params.repair_rounds)
        except SchemaFailureError as exc:
            raise QuizValidationError(
                f"quiz generation for {paper.id!r} ({qtype}) still invalid "
                f"after {1 + params.repair_rounds} attempts",
                violations=exc.violations) from exc
        halves[qtype] = parsed
    return QuizSet(paper_id=paper.id,
                   questions=tuple(halves[VERBATIM] + halves[INTERPRETIVE]))


# -- persistence -------------------------------------------------------


def _block_to_doc(questions) -> dict:
    q_doc, a_doc, s_doc = {}, {}, {}
    for i, q in enumerate(questions, start=1):
        key = f"Question {i}"
        q_doc[key] = {"question": q.stem, "options": list(q.options)}
        a_doc[key] = q.options[OPTION_LABELS.index(q.correct)]
        s_doc[key] = q.aspect
    return {"questions": q_doc, "answers": a_doc, "aspects": s_doc}


def quiz_to_document(quiz: QuizSet) -> dict:
    """Serialize to the on-disk two-part shape: verbatim at top level,
    interpretive nested under "understanding"."""
    doc = _block_to_doc(quiz.of_type(VERBATIM))
    doc["understanding"] = _block_to_doc(quiz.of_type(INTERPRETIVE))
    return doc


def quiz_from_document(doc: dict, paper_id: str,
                       params: QuizParams | None = None) -> QuizSet:
    params = params or QuizParams()
    if not isinstance(doc, dict):
        raise QuizValidationError("quiz document must be a JSON object")
    verbatim, v1 = _parse_block(doc, VERBATIM, params.aspects_verbatim,
                                params.questions_per_type)
    understanding = doc.get("understanding")
    interpretive, v2 = _parse_block(understanding, INTERPRETIVE,
                                    params.aspects_interpretive,
                                    params.questions_per_type)
    violations = v1 + v2
    if violations:
        raise QuizValidationError("quiz document violates the contract",
                                  violations=violations)
    return QuizSet(paper_id=paper_id,
                   questions=tuple(verbatim + interpretive))


def save_quiz(quiz: QuizSet, path) -> None:
    Path(path).write_text(
        json.dumps(quiz_to_document(quiz), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8")


def load_quiz(path, paper_id: str, params: QuizParams | None = None) -> QuizSet:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return quiz_from_document(doc, paper_id, params)


# -- administration ----------------------------------------------------


def _sanitize_choice(raw) -> tuple[str, str | None]:
    """Map a model-supplied answer to a label or NA. Returns
    (choice, problem) where problem explains any sanitization."""
    if raw is None:
        return "NA", "missing answer"
    text = str(raw).strip()
    if not text:
        return "NA", "empty answer"
    upper = text.upper()
    if upper == "NA":
        return "NA", None
    head = upper[0]
    if head in OPTION_LABELS and (len(text) == 1 or not text[1].isalnum()):
        return head, None
    return "NA", f"invalid label {text[:20]!r}"


def administer(quiz: QuizSet, screenshots, gateway, profile, *,
               tag: str = "") -> AnswerSheet:
    """Put the quiz to one reader model against page screenshots.

    Questions are renumbered sequentially for the sheet (verbatim first).
    Every question gets exactly one ReaderAnswer: missing entries are
    backfilled as NA, malformed labels sanitized to NA, and a gateway
    failure produces an all-NA sheet with the failure recorded.
    """
    numbered = {f"Question {i}": q for i, q in enumerate(quiz.questions, start=1)}
    sheet_questions = {
        key: {"question": q.stem, "options": list(q.options)}
        for key, q in numbered.items()
    }
    prompt = render(load_text("quiz_answer"),
                    questions=json.dumps(sheet_questions, indent=2,
                                         ensure_ascii=False))
    parts = [ImagePart(str(s)) for s in screenshots] + [TextPart(prompt)]
    req = ChatRequest(messages=(Message(role="user", parts=tuple(parts)),),
                      temperature=0.0, max_tokens=8000,
                      schema_tag="quiz_answers_v1")

    def validate(data):
        if not isinstance(data, dict):
            raise ValueError("reply must be a JSON object keyed by question")
        return data

    try:
        data, _ = gateway.complete_structured(req, validate, profile,
                                              family="quiz", tag=tag)
    except GatewayError as exc:
        answers = tuple(ReaderAnswer(qid=q.qid, choice="NA", reference="NA")
                        for q in quiz.questions)
        return AnswerSheet(reader=profile.name, answers=answers,
                           failure=str(exc))

    answers = []
    for key, q in numbered.items():
        entry = data.get(key)
        if not isinstance(entry, dict):
            answers.append(ReaderAnswer(qid=q.qid, choice="NA", reference="NA"))
            continue
        choice, _ = _sanitize_choice(entry.get("answer"))
        if choice == "NA":
            reference = "NA"
        else:
            reference = str(entry.get("reference", "")).strip() or "unreferenced"
        answers.append(ReaderAnswer(qid=q.qid, choice=choice, reference=reference))
    return AnswerSheet(reader=profile.name, answers=tuple(answers))


# -- grading and aggregation --------------------------------------------


def grade(answers, quiz: QuizSet) -> dict:
    """Per-type accuracy in [0, 1]. Unanswered questions count wrong."""
    key = quiz.answer_key()
    by_qid = {a.qid: a for a in answers}
    accuracy = {}
    for qtype in (VERBATIM, INTERPRETIVE):
        block = quiz.of_type(qtype)
        if not block:
            accuracy[qtype] = 0.0
            continue
        hits = sum(
            1 for q in block
            if by_qid.get(q.qid) is not None and by_qid[q.qid].choice == key[q.qid]
        )
        accuracy[qtype] = hits / len(block)
    return accuracy


def score_reader(sheet: AnswerSheet, quiz: QuizSet) -> QuizResult:
    """Raw scores on the 5-point scale: 5 * accuracy per question type."""
    accuracy = grade(sheet.answers, quiz)
    return QuizResult(
        reader=sheet.reader,
        accuracy_verbatim=accuracy[VERBATIM],
        accuracy_interpretive=accuracy[INTERPRETIVE],
        raw_verbatim=5.0 * accuracy[VERBATIM],
        raw_interpretive=5.0 * accuracy[INTERPRETIVE],
        failure=sheet.failure,
    )


def apply_penalty(result: QuizResult, penalty: float) -> QuizResult:
    """Subtract the page's verbosity penalty uniformly. Scores may go
    negative for extremely verbose pages; callers must not clamp."""
    return replace(
        result,
        penalty=penalty,
        penalized_verbatim=result.raw_verbatim - penalty,
        penalized_interpretive=result.raw_interpretive - penalty,
        penalized_overall=result.raw_overall - penalty,
    )


@dataclass(frozen=True)
class PanelSummary:
    """Panel roll-up: subgroup means per question type, their averages,
    and the penalized variants."""

    n_readers: int
    open_verbatim: float | None
    closed_verbatim: float | None
    open_interpretive: float | None
    closed_interpretive: float | None
    verbatim_avg: float
    interpretive_avg: float
    raw_overall: float
    penalty: float
    penalized_verbatim: float
    penalized_interpretive: float
    penalized_overall: float
    failures: tuple = ()


def _mean(values) -> float | None:
    values = [v for v in values if v is not None]
    return sum(values) / len(values) if values else None


def panel_aggregate(results, groups: dict, penalty: float = 0.0) -> PanelSummary:
    """Aggregate reader results: open and closed subgroup means per
    question type, type averages as the mean of present subgroup means,
    overall as the mean of the two type averages, penalty subtracted
    uniformly at the end. Failed readers are excluded from means and
    listed in `failures`."""
    usable = [r for r in results if r.failure is None]
    failures = tuple((r.reader, r.failure) for r in results if r.failure is not None)

    def subgroup(qtype_attr: str, group: str) -> float | None:
        members = [getattr(r, qtype_attr) for r in usable
                   if groups.get(r.reader, "open") == group]
        return _mean(members)

    open_v = subgroup("raw_verbatim", "open")
    closed_v = subgroup("raw_verbatim", "closed")
    open_i = subgroup("raw_interpretive", "open")
    closed_i = subgroup("raw_interpretive", "closed")
    v_avg = _mean([open_v, closed_v]) or 0.0
    i_avg = _mean([open_i, closed_i]) or 0.0
    raw_overall = (v_avg + i_avg) / 2.0
    return PanelSummary(
        n_readers=len(usable),
        open_verbatim=open_v,
        closed_verbatim=closed_v,
        open_interpretive=open_i,
        closed_interpretive=closed_i,
        verbatim_avg=v_avg,
        interpretive_avg=i_avg,
        raw_overall=raw_overall,
        penalty=penalty,
        penalized_verbatim=v_avg - penalty,
        penalized_interpretive=i_avg - penalty,
        penalized_overall=raw_overall - penalty,
        failures=failures,
    )
