"""Prompt assembly, chat-completions transport, and cost accounting.

A prompt has three core components (task description, labeling
instructions, function signature) plus optional supplement blocks that
always come first. Assembly is deterministic: same spec, same bytes.

The transport speaks the common chat-completions JSON shape (single user
message) against a configurable endpoint, with retries and exponential
backoff. Every response (or terminal error) is persisted verbatim before
any parsing happens, so a run can always be audited offline. A file-backed
mock transport stands in for the network in tests and offline runs.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

from .data import ClassSpace, LabelsmithError
from .dsl import RuleProgram
from .dsl.extract import ExtractionError, extract_program

SUPPLEMENT_KINDS = ("DatasetDescription", "DataExemplars", "Keywords", "LabelingRules")

_HEADINGS = {
    "DatasetDescription": "Dataset Description",
    "DataExemplars": "Data Exemplars",
    "Keywords": "Keywords",
    "LabelingRules": "Labeling Rules",
}


class PromptError(LabelsmithError):
    """A prompt spec or generation job is malformed."""


class TransportError(LabelsmithError):
    """The completions endpoint could not produce a usable response."""


@dataclass(frozen=True)
class SupplementBlock:
    """One optional context block. ``exemplars`` is only meaningful for
    DataExemplars: (text, class name) pairs rendered one per line."""

    kind: str
    body: str = ""
    exemplars: tuple[tuple[str, str], ...] | None = None

    def __post_init__(self):
        if self.kind not in SUPPLEMENT_KINDS:
            raise PromptError(
                f"unknown supplement kind {self.kind!r}; expected one of {SUPPLEMENT_KINDS}"
            )
        if self.exemplars is not None:
            if self.kind != "DataExemplars":
                raise PromptError("exemplars belong only in a DataExemplars block")
            object.__setattr__(
                self, "exemplars", tuple((str(t), str(c)) for t, c in self.exemplars)
            )
        if self.kind == "DataExemplars" and not self.exemplars and not self.body:
            raise PromptError("a DataExemplars block needs exemplars or a body")
        if self.kind != "DataExemplars" and not self.body:
            raise PromptError(f"a {self.kind} block needs a body")

    @property
    def n_exemplars(self) -> int:
        return len(self.exemplars) if self.exemplars else 0

    def render(self) -> str:
        lines = [f"## {_HEADINGS[self.kind]}"]
        if self.body:
            lines.append(self.body)
        if self.exemplars:
            for idx, (text, cls) in enumerate(self.exemplars, start=1):
                lines.append(f"{idx}. {json.dumps(text, ensure_ascii=False)} -> {cls}")
        return "\n".join(lines)


@dataclass(frozen=True)
class PromptSpec:
    """The assembled-prompt recipe. Supplements render first (in given
    order), then task description, labeling instructions, and the function
    signature."""

    task_description: str
    labeling_instructions: str
    function_signature: str
    supplements: tuple[SupplementBlock, ...] = ()

    def __post_init__(self):
        for name in ("task_description", "labeling_instructions", "function_signature"):
            if not getattr(self, name).strip():
                raise PromptError(f"prompt component {name} must be non-empty")
        object.__setattr__(self, "supplements", tuple(self.supplements))


def build_prompt(spec: PromptSpec) -> str:
    """Deterministic concatenation; byte-identical across runs."""
    sections = [block.render() for block in spec.supplements]
    sections.append("## Task Description\n" + spec.task_description)
    sections.append("## Labeling Instructions\n" + spec.labeling_instructions)
    sections.append("## Function Signature\n" + spec.function_signature)
    return "\n\n".join(sections) + "\n"


@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    backoff_s: float = 0.5
    multiplier: float = 2.0

    def __post_init__(self):
        if self.attempts < 1:
            raise PromptError("retry policy needs at least 1 attempt")


@dataclass(frozen=True)
class GenerationJob:
    prompt: PromptSpec
    model: str
    endpoint: str
    n_programs: int = 10
    temperature: float = 0.5
    max_tokens: int | None = None
    retry: RetryPolicy = field(default_factory=RetryPolicy)

    def __post_init__(self):
        if self.n_programs < 1:
            raise PromptError("n_programs must be at least 1")
        if not (0.0 <= self.temperature <= 2.0):
            raise PromptError(f"temperature must be in [0, 2], got {self.temperature}")

    def request_body(self) -> dict:
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": build_prompt(self.prompt)}],
            "temperature": self.temperature,
        }
        if self.max_tokens is not None:
            body["max_tokens"] = self.max_tokens
        return body


class Transport(Protocol):
    def complete(self, body: dict) -> dict:
        """POST one chat-completions request; returns the response JSON.
        Raises TransportError on network/HTTP/decode failure."""
        ...


API_KEY_ENV = "LABELSMITH_API_KEY"


class HttpTransport:
    """Real network transport. The API key comes from the environment, never
    from config files or the command line."""

    def __init__(self, endpoint: str, api_key_env: str = API_KEY_ENV, timeout_s: float = 60.0):
        self.endpoint = endpoint
        self.api_key_env = api_key_env
        self.timeout_s = timeout_s
        key = os.environ.get(api_key_env)
        if not key:
            raise TransportError(
                f"no API key: set the {api_key_env} environment variable, "
                "or run with --mock <fixture> to stay offline"
            )
        self._key = key

    def complete(self, body: dict) -> dict:
        import requests

        try:
            resp = requests.post(
                self.endpoint,
                json=body,
                headers={"Authorization": f"Bearer {self._key}"},
                timeout=self.timeout_s,
            )
        except requests.RequestException as exc:
            raise TransportError(f"request failed: {exc}") from exc
        if resp.status_code >= 400:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return resp.json()
        except ValueError as exc:
            raise TransportError(f"response is not JSON: {exc}") from exc


class MockTransport:
    """Replays canned responses from a fixture file, in order, cycling when
    exhausted. Entries are either {"content": "..."} (a successful
    completion), a full response object under {"response": {...}}, or
    {"error": "..."} (raises TransportError, for retry testing)."""

    def __init__(self, entries: Sequence[dict]):
        if not entries:
            raise PromptError("mock fixture has no responses")
        self.entries = list(entries)
        self.calls = 0

    @classmethod
    def from_file(cls, path: str | Path) -> "MockTransport":
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if isinstance(doc, dict) and "responses" in doc:
            return cls(doc["responses"])
        if isinstance(doc, list):
            return cls(doc)
        raise PromptError(f"mock fixture {path} must be a list or have a 'responses' key")

    def complete(self, body: dict) -> dict:
        entry = self.entries[self.calls % len(self.entries)]
        self.calls += 1
        if "error" in entry:
            raise TransportError(str(entry["error"]))
        if "response" in entry:
            return entry["response"]
        if "content" in entry:
            return {
                "choices": [{"message": {"role": "assistant", "content": entry["content"]}}],
                "usage": {},
            }
        raise TransportError(f"mock entry {self.calls - 1} has no content/response/error")


def response_text(response: dict) -> str:
    """The assistant text out of a chat-completions response."""
    try:
        return response["choices"][0]["message"]["content"]
    except (KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"response missing choices[0].message.content: {exc}") from exc


def request_completion(
    transport: Transport,
    body: dict,
    retry: RetryPolicy,
    sleep: Callable[[float], None] = time.sleep,
) -> tuple[dict, int]:
    """One logical request with retries; returns (response, attempts used).
    Raises TransportError after the last attempt fails."""
    delay = retry.backoff_s
    last: TransportError | None = None
    for attempt in range(1, retry.attempts + 1):
        try:
            return transport.complete(body), attempt
        except TransportError as exc:
            last = exc
            if attempt < retry.attempts:
                sleep(delay)
                delay *= retry.multiplier
    raise TransportError(f"giving up after {retry.attempts} attempts: {last}") from last


@dataclass(frozen=True)
class SlotResult:
    """Outcome of one generation request."""

    slot: int
    attempts: int
    program: RuleProgram | None
    response_text: str | None
    error: str | None

    @property
    def ok(self) -> bool:
        return self.program is not None


def generate_programs(
    job: GenerationJob,
    class_space: ClassSpace,
    transport: Transport,
    out_dir: str | Path | None = None,
    sleep: Callable[[float], None] = time.sleep,
) -> list[SlotResult]:
    """Issue ``job.n_programs`` independent requests and extract one program
    from each response (first fenced block that parses).

    When ``out_dir`` is given, every raw response or terminal error is
    written to ``<out_dir>/raw/<slot>.json`` before extraction, so partial
    failures leave a full audit trail. Failures never abort the batch.
    """
    raw_dir = None
    if out_dir is not None:
        raw_dir = Path(out_dir) / "raw"
        raw_dir.mkdir(parents=True, exist_ok=True)
    body = job.request_body()
    results: list[SlotResult] = []
    for slot in range(job.n_programs):
        text = None
        error = None
        attempts = job.retry.attempts
        try:
            response, attempts = request_completion(transport, body, job.retry, sleep)
            artifact = {"slot": slot, "attempts": attempts, "request": body, "response": response}
        except TransportError as exc:
            error = str(exc)
            artifact = {"slot": slot, "attempts": attempts, "request": body, "error": error}
            response = None
        if raw_dir is not None:
            (raw_dir / f"{slot}.json").write_text(
                json.dumps(artifact, ensure_ascii=False, indent=2, sort_keys=True),
                encoding="utf-8",
            )
        program = None
        if response is not None:
            try:
                text = response_text(response)
            except TransportError as exc:
                error = str(exc)
            if text is not None:
                try:
                    program = extract_program(text, class_space, program_id=f"slot{slot}")
                except ExtractionError as exc:
                    error = str(exc) if not exc.errors else f"{exc}: " + "; ".join(exc.errors)
        results.append(
            SlotResult(
                slot=slot,
                attempts=attempts,
                program=program,
                response_text=text,
                error=error,
            )
        )
    return results


@dataclass(frozen=True)
class Pricing:
    input_per_1k: float
    output_per_1k: float

    def __post_init__(self):
        if self.input_per_1k is None or self.output_per_1k is None:
            raise PromptError("pricing needs both input and output rates")
        if self.input_per_1k < 0 or self.output_per_1k < 0:
            raise PromptError("pricing rates must be nonnegative")


@dataclass(frozen=True)
class CostEstimate:
    input_tokens: int
    output_tokens: int
    price_per_1k_input: float
    price_per_1k_output: float
    dollars: float

    def to_dict(self) -> dict:
        return {
            "input_tokens": self.input_tokens,
            "output_tokens": self.output_tokens,
            "price_per_1k_input": self.price_per_1k_input,
            "price_per_1k_output": self.price_per_1k_output,
            "dollars": self.dollars,
        }


def heuristic_tokens(text: str) -> int:
    """Cheap tokenizer stand-in: one token per 4 UTF-8 bytes, rounded up.
    Exact provider tokenizers can be plugged in where real dollar figures
    matter; scaling behavior is what this package guarantees."""
    return math.ceil(len(text.encode("utf-8")) / 4)


def estimate_cost(
    texts_in: Sequence[str],
    texts_out: Sequence[str],
    pricing: Pricing,
    tokenizer: Callable[[str], int] = heuristic_tokens,
) -> CostEstimate:
    """dollars = (input_tokens * rate_in + output_tokens * rate_out) / 1000."""
    tokens_in = sum(tokenizer(t) for t in texts_in)
    tokens_out = sum(tokenizer(t) for t in texts_out)
    dollars = (tokens_in * pricing.input_per_1k + tokens_out * pricing.output_per_1k) / 1000.0
    return CostEstimate(
        input_tokens=tokens_in,
        output_tokens=tokens_out,
        price_per_1k_input=pricing.input_per_1k,
        price_per_1k_output=pricing.output_per_1k,
        dollars=dollars,
    )
