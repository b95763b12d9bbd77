"""Filing parsing into the five-component company profile, forward-filled daily.

Each filing is parsed by the LLM into five components (any of which may be
empty when the filing carries no relevant content). Daily profiles are built
by component-wise forward-filling in which an empty extraction never
overwrites an earlier non-empty one: empty means "nothing relevant in this
filing", not "information revoked".
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from datetime import date
from pathlib import Path

from .corpus import FILING_TYPES, FilingDocument, TradingCalendar
from .gateway import FILING_KEYS, Gateway, RetriesExhausted, extract_structured

log = logging.getLogger(__name__)

# Character budget for very long filings: keep the front of the document,
# where the business overview and risk sections live.
DEFAULT_CHAR_BUDGET = 400_000

EMPTY_PROFILE: dict[str, str] = {key: "" for key in FILING_KEYS}


@dataclass(frozen=True)
class ParsedFiling:
    ticker: str
    filed: date
    filing_type: str
    overviewProduct: str
    strategyMarketOps: str
    governanceRisks: str
    financialStatement: str
    recentEventCatalyst: str

    def components(self) -> dict[str, str]:
        return {key: getattr(self, key) for key in FILING_KEYS}

    def to_json_obj(self) -> dict[str, str]:
        obj = {"ticker": self.ticker, "filed": self.filed.isoformat(), "filing_type": self.filing_type}
        obj.update(self.components())
        return obj

    @classmethod
    def from_json_obj(cls, obj: dict) -> "ParsedFiling":
        return cls(
            ticker=str(obj["ticker"]),
            filed=date.fromisoformat(str(obj["filed"])),
            filing_type=str(obj.get("filing_type", "8-K")),
            **{key: str(obj.get(key, "")) for key in FILING_KEYS},
        )


def filing_digest(raw_text: str) -> str:
    return hashlib.sha256(raw_text.encode("utf-8")).hexdigest()


def parse_filing(doc: FilingDocument, gateway: Gateway, char_budget: int = DEFAULT_CHAR_BUDGET) -> ParsedFiling:
    """Extract the five profile components from one filing.

    On exhausted re-asks the documented degradation applies: an all-empty
    profile plus a logged parse-failure record. Transport and provider errors
    propagate.
    """
    if not doc.raw_text:
        raise ValueError("filing raw_text must be non-empty")
    text = doc.raw_text
    if len(text) > char_budget:
        log.warning("truncating %s %s filing from %d to %d characters", doc.ticker, doc.filed, len(text), char_budget)
        text = text[:char_budget]
    slots = {"sec_filing_text": text}
    try:
        fields = gateway.ask(
            "filing_parse", slots, lambda raw: extract_structured(raw, FILING_KEYS)
        )
    except RetriesExhausted as exc:
        log.warning("parse failure for %s %s filing (%s); storing empty profile", doc.ticker, doc.filed, exc)
        fields = dict(EMPTY_PROFILE)
    return ParsedFiling(ticker=doc.ticker, filed=doc.filed, filing_type=doc.filing_type, **fields)


@dataclass
class CompanyProfileTable:
    """Per trading day, the five-component profile for one ticker."""

    ticker: str
    by_day: dict[date, dict[str, str]]

    def profile_on(self, day: date) -> dict[str, str]:
        return self.by_day.get(day, dict(EMPTY_PROFILE))


def build_profile_table(parsed: list[ParsedFiling], calendar: TradingCalendar, ticker: str | None = None) -> CompanyProfileTable:
    """Forward-fill parsed filings onto trading days, component by component.

    Same-day filings are applied in the accepted filing-type order, later
    non-empty components winning. Days before the first filing carry the
    all-empty profile.
    """
    if ticker is None:
        if not parsed:
            raise ValueError("ticker must be given when there are no parsed filings")
        ticker = parsed[0].ticker
    for p in parsed:
        if p.ticker != ticker:
            raise ValueError(f"mixed tickers in parsed filings: {p.ticker!r} vs {ticker!r}")
    ordered = sorted(parsed, key=lambda p: (p.filed, FILING_TYPES.index(p.filing_type)))
    by_day: dict[date, dict[str, str]] = {}
    current = dict(EMPTY_PROFILE)
    i = 0
    for day in calendar.days:
        while i < len(ordered) and ordered[i].filed <= day:
            for key, value in ordered[i].components().items():
                if value:
                    current[key] = value
            i += 1
        by_day[day] = dict(current)
    return CompanyProfileTable(ticker=ticker, by_day=by_day)


def save_parsed_filings(parsed: list[ParsedFiling], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for p in parsed:
            fh.write(json.dumps(p.to_json_obj(), sort_keys=True, ensure_ascii=False) + "\n")


def load_parsed_filings(path: str | Path) -> list[ParsedFiling]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(ParsedFiling.from_json_obj(json.loads(line)))
    return out
