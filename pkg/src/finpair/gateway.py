"""Provider-agnostic chat completions, the prompt-template catalog, and
structured-output extraction.

The real provider speaks the de facto HTTP chat-completion wire format
({model, messages, temperature} -> assistant text). The mock provider is
pure and deterministic: responses come from a digest-keyed fixture store
with an optional rule-based fallback, which is what makes the whole
pipeline runnable hermetically.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Mapping

import requests

log = logging.getLogger(__name__)

TEMPLATE_IDS = ("filing_parse", "level_classify", "sector_classify", "relation_classify", "summarize")

FILING_KEYS = ("overviewProduct", "strategyMarketOps", "governanceRisks", "financialStatement", "recentEventCatalyst")

# Display labels for the company profile block, keyed by component, in the
# fixed order the classification and summarization prompts use.
PROFILE_PROMPT_FIELDS = (
    ("financialStatement", "Financial Statement", "FINANCIAL_STATEMENT"),
    ("governanceRisks", "Governance Risks", "GOVERNANCE_RISKS"),
    ("overviewProduct", "Overview Product", "OVERVIEW_PRODUCT"),
    ("recentEventCatalyst", "Recent Event Catalyst", "RECENT_EVENT_CATALYST"),
    ("strategyMarketOps", "Strategy Market Ops", "STRATEGY_MARKET_OPS"),
)


class GatewayError(Exception):
    """Base class for gateway failures."""


class RenderError(GatewayError):
    """A template slot was missing or the template id is unknown."""


class ExtractionError(GatewayError):
    """No parseable JSON object, or an expected key was absent."""


class TransportError(GatewayError):
    """Transient transport failure (connection, timeout, retryable status)."""


class ProviderError(GatewayError):
    """Non-retryable provider response."""

    def __init__(self, status: int, body_excerpt: str):
        super().__init__(f"provider returned status {status}: {body_excerpt}")
        self.status = status
        self.body_excerpt = body_excerpt


class MockMissError(GatewayError):
    """The mock provider has neither a fixture nor a fallback rule."""


class RetriesExhausted(GatewayError):
    """Structured-output re-asks were exhausted; callers apply their degradation."""


@dataclass(frozen=True)
class ProviderConfig:
    endpoint_url: str
    api_key_env: str = ""
    max_concurrent: int = 4
    timeout_s: float = 60.0

    def __post_init__(self) -> None:
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
        if self.timeout_s <= 0:
            raise ValueError("timeout_s must be positive")


@dataclass(frozen=True)
class ChatRequest:
    model_id: str
    prompt: str
    max_retries: int = 2
    temperature: float = 0.0
    # Template metadata rides along so the mock provider and the response
    # cache can key on (template_id, canonicalized slots).
    template_id: str | None = None
    slots: Mapping[str, str] | None = None

    def __post_init__(self) -> None:
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")


def _load_descriptions() -> dict:
    with resources.files("finpair.data").joinpath("category_descriptions.json").open(encoding="utf-8") as fh:
        return json.load(fh)


CATEGORY_DESCRIPTIONS = _load_descriptions()

_FILING_PARSE_TEMPLATE = """# Main Instruction
You are given a single SEC filing document. Your task is to identify and summarize all relevant content in the SEC filing according to the following five categories. Extract and summarize only the information that is relevant to each category.

# Descriptions of the 5 Categories
1. overviewProduct: Provides a high-level summary of the company's business, including its mission, core products or services, key customer groups, business segments, and primary geographic markets.
2. strategyMarketOps: Describes the company's strategic direction and competitive strengths (e.g., proprietary technology, intellectual property, and regulatory expertise), along with its target markets, regulatory context, and operating model such as manufacturing footprint, supply chain structure, and major partnerships.
3. governanceRisks: Covers the company's governance framework, including notable changes in leadership or the board, and summarizes key risks disclosed in filings. Risk factors are organized by category (e.g., regulatory, market, operational, and cybersecurity) and may include both long-term structural risks and near-term concerns.
4. financialStatement: Summarizes the company's financial statements with key figures, and provides an interpretation of its financial health based on filings-discussing major performance drivers, liquidity, funding and capital resources, capital allocation decisions, accounting updates, and material obligations-rather.
5. recentEventCatalyst: highlights significant developments from roughly the past 12 months, including changes to earnings outlook, major product releases, regulatory decisions, M&A progress, leadership updates, and other events that could meaningfully affect market perception or performance.

# Rules
1. The SEC filing can be long and may contain noisy formatting. Focus on the content rather than the format.
2. Do not hallucinate. Only use information explicitly stated in the SEC filing.
3. If there is no relevant information for a category, return an empty string for that category.

# Output Format
1. Example: {
  "overviewProduct": ...,
  "strategyMarketOps": ...,
  "financialStatement": ...,
  "governanceRisks": ...,
  "recentEventCatalyst": ...
}

# SEC Filing
[sec_filing_text]"""

_PROFILE_BLOCK = "\n".join(
    ["# COMPANY_PROFILE (provided only for company-level classification into Target vs. Related Companies)"]
    + [f"{i}. {label}: [{slot}]" for i, (_, label, slot) in enumerate(PROFILE_PROMPT_FIELDS, start=1)]
)

_SUMMARIZE_TEMPLATE = """# Main Instruction
You will be given a list of multiple ARTICLES that may impact [TAG].
Your task is to review all ARTICLES and identify up to [N] key categories of significant events that may impact [TAG].
For each category, summarize the key factual events in the related ARTICLES.

# Descriptions of [TAG]
[TAG DESCRIPTION]

# Rules
1. Please ignore any unusual or inconsistent formatting in the ARTICLES.
2. Select a category only if it has a meaningful impact on [TAG].
3. If more than [N] categories are identified, select only the [N] most important ones.
4. Each category must address one single, distinct topic only.
5. Do not hallucinate. Write only based on the given ARTICLES.

# Output Format
1. Example: {
    "category1": ...,
    "category2": ...,
    ...
}

# Articles
[ARTICLES]"""


def _classification_template(categories: Iterable[tuple[str, str]], include_profile: bool) -> str:
    cats = list(categories)
    desc_lines = [f"{i}. {name}: {desc}" for i, (name, desc) in enumerate(cats, start=1)]
    desc_lines.append(f"{len(cats) + 1}. N/A: The article does not fit any of the above categories.")
    names = ", ".join(name for name, _ in cats)
    profile = f"\n{_PROFILE_BLOCK}\n" if include_profile else ""
    return f"""# Main Instruction
You are given a single news article. Your task is to analyze the article and classify it into one of the following categories.

# Descriptions of Categories
{chr(10).join(desc_lines)}
{profile}
# Rules
1. Please ignore any unusual or inconsistent formatting in the article.

# Output
1. Example: {{"category": ...}}
2. "category" must be one of {names}, or N/A.

# Article
Headline: [HEADLINE]
Body: [BODY]"""


PROMPT_TEMPLATES: dict[str, str] = {
    "filing_parse": _FILING_PARSE_TEMPLATE,
    "level_classify": _classification_template(CATEGORY_DESCRIPTIONS["levels"].items(), include_profile=False),
    "sector_classify": _classification_template(CATEGORY_DESCRIPTIONS["sectors"].items(), include_profile=False),
    "relation_classify": _classification_template(CATEGORY_DESCRIPTIONS["relations"].items(), include_profile=True),
    "summarize": _SUMMARIZE_TEMPLATE,
}

_SLOT_RE = re.compile(r"\[([A-Za-z0-9_ ]+)\]")


def render_prompt(template_id: str, slots: Mapping[str, str]) -> str:
    """Resolve [SLOT] markers in one pass; slot values are inserted literally.

    Values are never re-scanned, so braces and brackets inside article text
    pass through untouched.
    """
    try:
        template = PROMPT_TEMPLATES[template_id]
    except KeyError:
        raise RenderError(f"unknown template id {template_id!r}") from None
    missing: list[str] = []

    def _sub(match: re.Match) -> str:
        key = match.group(1)
        if key in slots:
            return str(slots[key])
        missing.append(key)
        return match.group(0)

    rendered = _SLOT_RE.sub(_sub, template)
    if missing:
        raise RenderError(f"template {template_id!r} is missing slot(s): {sorted(set(missing))}")
    return rendered


def format_articles_block(articles: Iterable[tuple[str, str]]) -> str:
    """Render (headline, body) pairs into the numbered ARTICLES block."""
    parts = []
    for i, (headline, body) in enumerate(articles, start=1):
        parts.append(f"{i}. Article {i}:\n   {i}-1. Headline: {headline}\n   {i}-2. Body: {body}")
    return "\n\n".join(parts)


def request_digest(template_id: str, slots: Mapping[str, str]) -> str:
    """Stable digest of (template_id, canonicalized slots); fixture/cache key."""
    payload = json.dumps(
        {"template_id": template_id, "slots": {str(k): str(v) for k, v in slots.items()}},
        sort_keys=True,
        separators=(",", ":"),
        ensure_ascii=True,
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


_FENCE_RE = re.compile(r"```(?:json)?\s*([\s\S]*?)```")


def _first_json_object(raw: str) -> dict | None:
    decoder = json.JSONDecoder()
    candidates = [raw] + [m.group(1) for m in _FENCE_RE.finditer(raw)]
    for text in candidates:
        text = text.strip()
        if text.startswith("{"):
            try:
                obj = json.loads(text)
                if isinstance(obj, dict):
                    return obj
            except json.JSONDecodeError:
                pass
    # Scan for the first embedded object in surrounding prose.
    for idx, ch in enumerate(raw):
        if ch != "{":
            continue
        try:
            obj, _ = decoder.raw_decode(raw[idx:])
        except json.JSONDecodeError:
            continue
        if isinstance(obj, dict):
            return obj
    return None


def _as_text(value: object) -> str:
    if isinstance(value, str):
        return value
    if value is None:
        return ""
    return json.dumps(value, ensure_ascii=False)


def extract_structured(raw: str, expected_keys: Iterable[str]) -> dict[str, str]:
    """Pull the first well-formed JSON object out of a raw response.

    Surrounding prose and code fences are stripped; exactly the expected keys
    must be present. Extra keys are dropped with a warning.
    """
    expected = list(expected_keys)
    if not expected:
        raise ValueError("expected_keys must be non-empty")
    obj = _first_json_object(raw)
    if obj is None:
        raise ExtractionError(f"no parseable JSON object in response: {raw[:120]!r}")
    missing = [k for k in expected if k not in obj]
    if missing:
        raise ExtractionError(f"response object is missing expected key(s) {missing}")
    extra = [k for k in obj if k not in expected]
    if extra:
        log.warning("dropping unexpected key(s) %s from structured response", extra)
    return {k: _as_text(obj[k]) for k in expected}


def parse_category_map(raw: str) -> list[tuple[str, str]]:
    """Parse a summarization response into (category name, summary) pairs.

    Keys are category names; insertion order is preserved so callers can
    enforce their cap on "the first N". Pairs with an empty side are skipped.
    """
    obj = _first_json_object(raw)
    if obj is None:
        raise ExtractionError(f"no parseable JSON object in response: {raw[:120]!r}")
    pairs = []
    for key, value in obj.items():
        name = str(key).strip()
        summary = _as_text(value).strip()
        if name and summary:
            pairs.append((name, summary))
    return pairs


class HttpChatProvider:
    """Chat provider over HTTP with bounded concurrency and backoff retries.

    transport is injectable for tests: (url, payload, timeout_s) ->
    (status_code, body_text); it must raise TransportError on connection
    failures. Never more than max_concurrent transport calls are in flight.
    """

    def __init__(
        self,
        config: ProviderConfig,
        transport: Callable[[str, dict, float], tuple[int, str]] | None = None,
        sleeper: Callable[[float], None] = time.sleep,
        backoff_base_s: float = 0.5,
    ):
        self.config = config
        self._transport = transport or self._requests_transport
        self._sleeper = sleeper
        self._backoff_base_s = backoff_base_s
        self._semaphore = threading.BoundedSemaphore(config.max_concurrent)

    def _requests_transport(self, url: str, payload: dict, timeout_s: float) -> tuple[int, str]:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key_env:
            key = os.environ.get(self.config.api_key_env, "")
            if key:
                headers["Authorization"] = f"Bearer {key}"
        try:
            response = requests.post(url, json=payload, headers=headers, timeout=timeout_s)
        except requests.RequestException as exc:
            raise TransportError(str(exc)) from exc
        return response.status_code, response.text

    def complete(self, request: ChatRequest) -> str:
        payload = {
            "model": request.model_id,
            "messages": [{"role": "user", "content": request.prompt}],
            "temperature": request.temperature,
        }
        last_error: TransportError | None = None
        for attempt in range(request.max_retries + 1):
            if attempt > 0:
                self._sleeper(self._backoff_base_s * (2 ** (attempt - 1)))
            try:
                with self._semaphore:
                    status, body = self._transport(self.config.endpoint_url, payload, self.config.timeout_s)
            except TransportError as exc:
                last_error = exc
                continue
            if 200 <= status < 300:
                return self._parse_body(status, body)
            if status == 429 or status >= 500:
                last_error = TransportError(f"retryable status {status}")
                continue
            raise ProviderError(status, body[:200])
        assert last_error is not None
        raise last_error

    @staticmethod
    def _parse_body(status: int, body: str) -> str:
        try:
            obj = json.loads(body)
            return obj["choices"][0]["message"]["content"]
        except (json.JSONDecodeError, KeyError, IndexError, TypeError):
            raise ProviderError(status, f"unrecognized response body: {body[:200]}") from None


class MockChatProvider:
    """Deterministic provider for hermetic runs.

    Responses come from fixture_dir/<digest>.txt; unseen requests fall back
    to an optional rule callable (template_id, slots) -> text | None.
    """

    def __init__(
        self,
        fixture_dir: str | Path | None = None,
        fallback: Callable[[str, Mapping[str, str]], str | None] | None = None,
    ):
        self.fixture_dir = Path(fixture_dir) if fixture_dir is not None else None
        self.fallback = fallback

    def complete(self, request: ChatRequest) -> str:
        if request.template_id is None or request.slots is None:
            raise MockMissError("mock provider requires template metadata on the request")
        digest = request_digest(request.template_id, request.slots)
        if self.fixture_dir is not None:
            path = self.fixture_dir / f"{digest}.txt"
            if path.exists():
                return path.read_text(encoding="utf-8")
        if self.fallback is not None:
            out = self.fallback(request.template_id, request.slots)
            if out is not None:
                return out
        raise MockMissError(f"no fixture or fallback rule for digest {digest} (template {request.template_id})")


def complete(request: ChatRequest, provider) -> str:
    """Send one request through any provider object exposing .complete()."""
    return provider.complete(request)


class Gateway:
    """Stage-facing wrapper: provider + per-stage model ids + response cache.

    Cached responses are keyed by the same digest the mock fixture store
    uses, so a cache hit is byte-identical to recomputation and re-runs make
    zero provider calls.
    """

    def __init__(
        self,
        provider,
        model_id: str = "mock-chat",
        model_ids: Mapping[str, str] | None = None,
        max_retries: int = 2,
        temperature: float = 0.0,
        cache_dir: str | Path | None = None,
    ):
        self.provider = provider
        self.model_id = model_id
        self.model_ids = dict(model_ids or {})
        self.max_retries = max_retries
        self.temperature = temperature
        self.cache_dir = Path(cache_dir) if cache_dir is not None else None
        self.provider_calls = 0
        self._lock = threading.Lock()

    def model_for(self, template_id: str) -> str:
        return self.model_ids.get(template_id, self.model_id)

    def complete_template(self, template_id: str, slots: Mapping[str, str], fresh: bool = False) -> str:
        digest = request_digest(template_id, slots)
        cache_path = self.cache_dir / f"{digest}.txt" if self.cache_dir is not None else None
        if cache_path is not None and not fresh and cache_path.exists():
            return cache_path.read_text(encoding="utf-8")
        request = ChatRequest(
            model_id=self.model_for(template_id),
            prompt=render_prompt(template_id, slots),
            max_retries=self.max_retries,
            temperature=self.temperature,
            template_id=template_id,
            slots=dict(slots),
        )
        raw = self.provider.complete(request)
        with self._lock:
            self.provider_calls += 1
        if cache_path is not None:
            cache_path.parent.mkdir(parents=True, exist_ok=True)
            tmp = cache_path.with_suffix(".tmp")
            tmp.write_text(raw, encoding="utf-8")
            tmp.replace(cache_path)
        return raw

    def ask(self, template_id: str, slots: Mapping[str, str], parse: Callable[[str], object]) -> object:
        """Complete and parse, re-asking on extraction errors.

        Re-asks bypass the response cache (a cached malformed response would
        just loop); after max_retries extra attempts the caller applies its
        documented degradation.
        """
        last_error: ExtractionError | None = None
        for attempt in range(self.max_retries + 1):
            raw = self.complete_template(template_id, slots, fresh=attempt > 0)
            try:
                return parse(raw)
            except ExtractionError as exc:
                last_error = exc
        raise RetriesExhausted(f"{template_id}: {last_error}")
