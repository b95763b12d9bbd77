"""Assemble the four-level paired record per (company, trading day).

Each record carries four slots of category summaries: macro (all same-day
macro articles, shared across companies), sector (same-day articles matching
the company's own GICS sector, shared per sector), and related/target
(retrieved company-level articles partitioned by relation label, with
irrelevant articles discarded). Macro and sector summaries are computed once
per (tag, day) behind a single-flight memo since their prompt context does
not depend on the company; target/related summaries use the company profile
as context and are regenerated per (company, day).
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
import threading
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .corpus import CompanyRecord, NewsArticle
from .gateway import (
    CATEGORY_DESCRIPTIONS,
    FILING_KEYS,
    Gateway,
    PROFILE_PROMPT_FIELDS,
    RetriesExhausted,
    format_articles_block,
    parse_category_map,
)

log = logging.getLogger(__name__)

MACRO_CAP = 5
SECTOR_CAP = 5
COMPANY_CAP = 3

MACRO_TAG = "Macroeconomic"


class AssemblyError(Exception):
    pass


@dataclass(frozen=True)
class CategorySummary:
    category: str
    summary: str


@dataclass(frozen=True)
class PairedDayRecord:
    ticker: str
    trading_day: date
    macro: tuple[CategorySummary, ...]
    sector: tuple[CategorySummary, ...]
    related_company: tuple[CategorySummary, ...]
    target_company: tuple[CategorySummary, ...]
    profile: dict[str, str]
    # Populated only when assembling with keep_article_ids for debugging.
    article_ids: dict[str, tuple[str, ...]] = field(default_factory=dict)


def profile_description(profile: Mapping[str, str]) -> str:
    """Company profile rendered as the summarization tag description."""
    return "\n".join(
        f"{i}. {label}: {profile.get(key, '')}" for i, (key, label, _) in enumerate(PROFILE_PROMPT_FIELDS, start=1)
    )


def summarize_level(
    tag: str,
    tag_description: str,
    articles: Sequence[NewsArticle],
    cap: int,
    gateway: Gateway,
) -> list[CategorySummary]:
    """Summarize one slot's articles into at most cap event categories.

    An empty article list short-circuits to [] without an LLM call; exhausted
    re-asks degrade to [] with a failure record.
    """
    if cap not in (MACRO_CAP, COMPANY_CAP):
        raise ValueError(f"cap must be {MACRO_CAP} (macro/sector) or {COMPANY_CAP} (company levels), got {cap}")
    if not articles:
        return []
    slots = {
        "TAG": tag,
        "TAG DESCRIPTION": tag_description,
        "N": str(cap),
        "ARTICLES": format_articles_block((a.headline, a.body) for a in articles),
    }
    try:
        pairs = gateway.ask("summarize", slots, parse_category_map)
    except RetriesExhausted as exc:
        log.warning("summarization failed for tag %s (%s); storing empty slot", tag, exc)
        return []
    if len(pairs) > cap:
        log.warning("summarizer returned %d categories for tag %s; keeping the first %d", len(pairs), tag, cap)
        pairs = pairs[:cap]
    return [CategorySummary(category=name, summary=summary) for name, summary in pairs]


class SummaryMemo:
    """Single-flight memo for summaries shared across companies."""

    def __init__(self):
        self._results: dict = {}
        self._locks: dict = {}
        self._guard = threading.Lock()

    def get(self, key, compute):
        with self._guard:
            if key in self._results:
                return self._results[key]
            lock = self._locks.setdefault(key, threading.Lock())
        with lock:
            with self._guard:
                if key in self._results:
                    return self._results[key]
            value = compute()
            with self._guard:
                self._results[key] = value
                self._locks.pop(key, None)
            return value


def assemble_day(
    company: CompanyRecord,
    trading_day: date,
    day_articles: Mapping[str, NewsArticle],
    retrieved_ids: Sequence[str],
    profile: Mapping[str, str],
    gateway: Gateway,
    memo: SummaryMemo | None = None,
    keep_article_ids: bool = False,
) -> PairedDayRecord:
    """Build one record from the day's classified articles and retrieval output.

    day_articles maps article_id -> article for articles whose roll-forward
    trading day equals trading_day. retrieved_ids come from the retrieval
    stage for this (company, day); their relation labels partition them into
    the target/related slots, with Irrelevant discarded.
    """
    if profile is None:
        raise AssemblyError(f"no profile table for {company.ticker}")
    memo = memo or SummaryMemo()
    ordered = sorted(day_articles.values(), key=lambda a: a.article_id)
    macro_articles = [a for a in ordered if a.level == "Macroeconomic"]
    sector_articles = [a for a in ordered if a.level == "Sector" and a.sector == company.gics_sector]
    target_articles: list[NewsArticle] = []
    related_articles: list[NewsArticle] = []
    for aid in sorted(retrieved_ids):
        article = day_articles.get(aid)
        if article is None:
            raise AssemblyError(f"retrieved article {aid!r} is not paired to {trading_day}")
        relation = article.relation_by_company.get(company.ticker, "Irrelevant")
        if relation == "Target":
            target_articles.append(article)
        elif relation == "Related":
            related_articles.append(article)

    macro = memo.get(
        (MACRO_TAG, trading_day),
        lambda: summarize_level(MACRO_TAG, CATEGORY_DESCRIPTIONS["levels"][MACRO_TAG], macro_articles, MACRO_CAP, gateway),
    )
    sector = memo.get(
        (company.gics_sector, trading_day),
        lambda: summarize_level(
            company.gics_sector,
            CATEGORY_DESCRIPTIONS["sectors"][company.gics_sector],
            sector_articles,
            SECTOR_CAP,
            gateway,
        ),
    )
    description = profile_description(profile)
    related = summarize_level(company.name, description, related_articles, COMPANY_CAP, gateway)
    target = summarize_level(company.name, description, target_articles, COMPANY_CAP, gateway)
    article_ids = {}
    if keep_article_ids:
        article_ids = {
            "macro": tuple(a.article_id for a in macro_articles),
            "sector": tuple(a.article_id for a in sector_articles),
            "related_company": tuple(a.article_id for a in related_articles),
            "target_company": tuple(a.article_id for a in target_articles),
        }
    return PairedDayRecord(
        ticker=company.ticker,
        trading_day=trading_day,
        macro=tuple(macro),
        sector=tuple(sector),
        related_company=tuple(related),
        target_company=tuple(target),
        profile={key: profile.get(key, "") for key in FILING_KEYS},
        article_ids=article_ids,
    )


def record_to_json_obj(record: PairedDayRecord) -> dict:
    obj = {
        "ticker": record.ticker,
        "trading_day": record.trading_day.isoformat(),
        "macro": [{"category": s.category, "summary": s.summary} for s in record.macro],
        "sector": [{"category": s.category, "summary": s.summary} for s in record.sector],
        "related_company": [{"category": s.category, "summary": s.summary} for s in record.related_company],
        "target_company": [{"category": s.category, "summary": s.summary} for s in record.target_company],
        "profile": {key: record.profile.get(key, "") for key in FILING_KEYS},
    }
    if record.article_ids:
        obj["article_ids"] = {k: list(v) for k, v in record.article_ids.items()}
    return obj


_SLOT_CAPS = {"macro": MACRO_CAP, "sector": SECTOR_CAP, "related_company": COMPANY_CAP, "target_company": COMPANY_CAP}


def validate_record_obj(obj: dict) -> None:
    """Schema check for one serialized dataset record."""
    for key in ("ticker", "trading_day", "macro", "sector", "related_company", "target_company", "profile"):
        if key not in obj:
            raise ValueError(f"record missing key {key!r}")
    date.fromisoformat(obj["trading_day"])
    for slot, cap in _SLOT_CAPS.items():
        entries = obj[slot]
        if not isinstance(entries, list) or len(entries) > cap:
            raise ValueError(f"slot {slot!r} must be a list of at most {cap} summaries")
        for entry in entries:
            if not entry.get("category") or not entry.get("summary"):
                raise ValueError(f"slot {slot!r} has an entry with an empty category or summary")
    if set(obj["profile"]) != set(FILING_KEYS):
        raise ValueError("profile must hold exactly the five components")


def record_from_json_obj(obj: dict) -> PairedDayRecord:
    validate_record_obj(obj)

    def summaries(slot: str) -> tuple[CategorySummary, ...]:
        return tuple(CategorySummary(category=e["category"], summary=e["summary"]) for e in obj[slot])

    return PairedDayRecord(
        ticker=obj["ticker"],
        trading_day=date.fromisoformat(obj["trading_day"]),
        macro=summaries("macro"),
        sector=summaries("sector"),
        related_company=summaries("related_company"),
        target_company=summaries("target_company"),
        profile={key: obj["profile"][key] for key in FILING_KEYS},
        article_ids={k: tuple(v) for k, v in obj.get("article_ids", {}).items()},
    )


def emit_dataset(records: Sequence[PairedDayRecord], output_dir: str | Path) -> dict:
    """Write one line-delimited JSON file per ticker plus a manifest.

    Records are sorted by trading day within a ticker; the manifest lists
    per-ticker day counts and content digests and is itself deterministic.
    """
    if not records:
        raise ValueError("no records to emit")
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    by_ticker: dict[str, list[PairedDayRecord]] = {}
    for record in records:
        by_ticker.setdefault(record.ticker, []).append(record)
    manifest: dict = {"tickers": {}}
    for ticker in sorted(by_ticker):
        rows = sorted(by_ticker[ticker], key=lambda r: r.trading_day)
        payload = "".join(
            json.dumps(record_to_json_obj(r), sort_keys=True, ensure_ascii=False, separators=(",", ":")) + "\n"
            for r in rows
        )
        path = output_dir / f"{ticker}.jsonl"
        path.write_text(payload, encoding="utf-8")
        manifest["tickers"][ticker] = {
            "file": path.name,
            "days": len(rows),
            "sha256": hashlib.sha256(payload.encode("utf-8")).hexdigest(),
        }
    manifest_path = output_dir / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return manifest


def load_dataset(dataset_dir: str | Path) -> dict[str, list[PairedDayRecord]]:
    dataset_dir = Path(dataset_dir)
    manifest = json.loads((dataset_dir / "manifest.json").read_text(encoding="utf-8"))
    out: dict[str, list[PairedDayRecord]] = {}
    for ticker, entry in manifest["tickers"].items():
        records = []
        with (dataset_dir / entry["file"]).open(encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    records.append(record_from_json_obj(json.loads(line)))
        out[ticker] = records
    return out


_SUFFIX_WORDS = ("inc", "inc.", "corp", "corp.", "corporation", "co", "co.", "company", "ltd", "ltd.", "plc", "the")


def _name_phrases(company: CompanyRecord) -> list[str]:
    """Match phrases for the keyword baseline: full name, suffix-stripped name, ticker."""
    words = company.name.split()
    core = [w for w in words if w.lower().rstrip(",") not in _SUFFIX_WORDS]
    phrases = [company.name]
    if core and core != words:
        phrases.append(" ".join(core))
    phrases.append(company.ticker)
    return phrases


def keyword_match(company: CompanyRecord, article: NewsArticle) -> bool:
    """Case-insensitive whole-word match of the company name or ticker.

    Whole-word boundaries guard against short tickers matching inside words.
    """
    text = f"{article.headline}\n{article.body}"
    for phrase in _name_phrases(company):
        if re.search(rf"(?<![A-Za-z0-9]){re.escape(phrase)}(?![A-Za-z0-9])", text, flags=re.IGNORECASE):
            return True
    return False


def keyword_pair_baseline(
    company: CompanyRecord,
    trading_day: date,
    articles_by_day: Mapping[date, Sequence[NewsArticle]],
    forward_fill_days: Sequence[date] | None = None,
) -> list[NewsArticle]:
    """Keyword pairing: same-day articles mentioning the company by name/ticker.

    When forward_fill_days is given (trading days up to and including
    trading_day, ascending) and the day has no matches, the most recent prior
    day's pairing is carried instead.
    """
    days = list(forward_fill_days) if forward_fill_days is not None else [trading_day]
    if days and days[-1] != trading_day:
        raise ValueError("forward_fill_days must end at trading_day")
    for day in reversed(days):
        matches = [a for a in articles_by_day.get(day, ()) if keyword_match(company, a)]
        if matches:
            return sorted(matches, key=lambda a: a.article_id)
    return []
