"""Raw corpus ingestion: news, SEC filings, OHLC prices, and the company registry.

Loaders are pure functions over the on-disk formats; loaded objects are
immutable and safe to share across threads. The trading calendar is derived
from the union of dates present in the loaded price files.
"""

from __future__ import annotations

import csv
import json
from bisect import bisect_left
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

GICS_SECTORS = (
    "Energy",
    "Materials",
    "Industrials",
    "Consumer Discretionary",
    "Consumer Staples",
    "Health Care",
    "Financials",
    "Information Technology",
    "Communication Services",
    "Utilities",
    "Real Estate",
)

# Accepted filing type codes, in processing-priority order (annual and
# registration forms first, then quarterly, then current reports). Same-day
# filings are applied in this order, later ones winning per component.
FILING_TYPES = (
    "S-1", "S-4", "F-1", "F-4", "S-1/A", "F-1/A", "F-4/A",
    "10-K", "20-F", "40-F", "10-K/A", "20-F/A", "40-F/A",
    "10-Q", "10-Q/A", "8-K", "6-K", "8-K/A",
)

LEVEL_LABELS = ("Macroeconomic", "Sector", "Company", "NA")
SECTOR_LABELS = GICS_SECTORS + ("NA",)
RELATION_LABELS = ("Target", "Related", "Irrelevant")

PRICE_CHANNELS = ("open", "high", "low", "close")


class CorpusError(Exception):
    """An input file violated the corpus schema or a data invariant."""


@dataclass(frozen=True)
class CompanyRecord:
    ticker: str
    name: str
    gics_sector: str


@dataclass(frozen=True)
class NewsArticle:
    article_id: str
    published: date
    headline: str
    body: str
    # Labels are absent until the corresponding classification stage has run.
    level: str | None = None
    sector: str | None = None
    relation_by_company: dict[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class FilingDocument:
    ticker: str
    filed: date
    filing_type: str
    raw_text: str


@dataclass(frozen=True, eq=False)
class PriceSeries:
    """Date-ordered OHLC bars for one ticker; values is (n, 4) float64."""

    ticker: str
    dates: tuple[date, ...]
    values: np.ndarray

    def __len__(self) -> int:
        return len(self.dates)


@dataclass(frozen=True)
class TradingCalendar:
    """Strictly increasing trading dates covering the study window."""

    days: tuple[date, ...]

    def __post_init__(self) -> None:
        if not self.days:
            raise CorpusError("trading calendar must be non-empty")
        for a, b in zip(self.days, self.days[1:]):
            if a >= b:
                raise CorpusError(f"calendar days not strictly increasing at {a} -> {b}")

    def __len__(self) -> int:
        return len(self.days)


@dataclass
class Corpus:
    articles: list[NewsArticle]
    filings: list[FilingDocument]
    prices: dict[str, PriceSeries]
    registry: dict[str, CompanyRecord]
    calendar: TradingCalendar


def _parse_date(raw: str, where: str) -> date:
    try:
        return date.fromisoformat(raw)
    except (TypeError, ValueError):
        raise CorpusError(f"{where}: invalid ISO date {raw!r}") from None


def load_registry(path: str | Path) -> dict[str, CompanyRecord]:
    """Load the company registry CSV (header: ticker,name,gics_sector)."""
    path = Path(path)
    registry: dict[str, CompanyRecord] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != ["ticker", "name", "gics_sector"]:
            raise CorpusError(f"{path}:1: expected header ticker,name,gics_sector, got {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            ticker = (row["ticker"] or "").strip()
            name = (row["name"] or "").strip()
            sector = (row["gics_sector"] or "").strip()
            if not ticker or not name:
                raise CorpusError(f"{path}:{lineno}: ticker and name must be non-empty")
            if ticker in registry:
                raise CorpusError(f"{path}:{lineno}: duplicate ticker {ticker!r}")
            if sector not in GICS_SECTORS:
                raise CorpusError(f"{path}:{lineno}: gics_sector {sector!r} not one of the 11 GICS sectors")
            registry[ticker] = CompanyRecord(ticker=ticker, name=name, gics_sector=sector)
    if not registry:
        raise CorpusError(f"{path}: registry is empty")
    return registry


def load_news(path: str | Path) -> list[NewsArticle]:
    """Load line-delimited JSON articles; labels are loaded when present."""
    path = Path(path)
    articles: list[NewsArticle] = []
    seen: set[str] = set()
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{where}: invalid JSON ({exc.msg})") from None
            for key in ("article_id", "published", "headline", "body"):
                if key not in obj:
                    raise CorpusError(f"{where}: missing required field {key!r}")
            article_id = str(obj["article_id"])
            if article_id in seen:
                raise CorpusError(f"{where}: duplicate article_id {article_id!r}")
            seen.add(article_id)
            headline = str(obj["headline"])
            if not headline:
                raise CorpusError(f"{where}: headline must be non-empty")
            level = obj.get("level")
            if level is not None and level not in LEVEL_LABELS:
                raise CorpusError(f"{where}: level {level!r} not in {LEVEL_LABELS}")
            sector = obj.get("sector")
            if sector is not None and sector not in SECTOR_LABELS:
                raise CorpusError(f"{where}: sector {sector!r} is not a GICS sector or NA")
            relations = obj.get("relation_by_company") or {}
            for tic, rel in relations.items():
                if rel not in RELATION_LABELS:
                    raise CorpusError(f"{where}: relation {rel!r} for {tic!r} not in {RELATION_LABELS}")
            articles.append(
                NewsArticle(
                    article_id=article_id,
                    published=_parse_date(str(obj["published"]), where),
                    headline=headline,
                    body=str(obj["body"]),
                    level=level,
                    sector=sector,
                    relation_by_company=dict(relations),
                )
            )
    return articles


def load_filings(path: str | Path, registry: dict[str, CompanyRecord]) -> list[FilingDocument]:
    path = Path(path)
    filings: list[FilingDocument] = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            where = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{where}: invalid JSON ({exc.msg})") from None
            for key in ("ticker", "filed", "filing_type", "raw_text"):
                if key not in obj:
                    raise CorpusError(f"{where}: missing required field {key!r}")
            ticker = str(obj["ticker"])
            if ticker not in registry:
                raise CorpusError(f"{where}: ticker {ticker!r} not present in registry")
            filing_type = str(obj["filing_type"])
            if filing_type not in FILING_TYPES:
                raise CorpusError(f"{where}: filing_type {filing_type!r} not one of the accepted codes")
            filings.append(
                FilingDocument(
                    ticker=ticker,
                    filed=_parse_date(str(obj["filed"]), where),
                    filing_type=filing_type,
                    raw_text=str(obj["raw_text"]),
                )
            )
    return filings


def load_price_file(path: str | Path) -> PriceSeries:
    """Load one <TICKER>.csv file (header: date,open,high,low,close).

    Rows are sorted by date; duplicate dates are a hard error rather than
    last-wins, since silent dedup hides upstream corruption.
    """
    path = Path(path)
    ticker = path.stem
    rows: list[tuple[date, float, float, float, float, int]] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        expected = ["date"] + list(PRICE_CHANNELS)
        if reader.fieldnames != expected:
            raise CorpusError(f"{path}:1: expected header {','.join(expected)}, got {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            where = f"{path}:{lineno}"
            d = _parse_date(row["date"], where)
            try:
                o, h, l, c = (float(row[k]) for k in PRICE_CHANNELS)
            except (TypeError, ValueError):
                raise CorpusError(f"{where}: non-numeric price value") from None
            if min(o, h, l, c) <= 0:
                raise CorpusError(f"{where}: prices must be > 0")
            if h < max(o, c):
                raise CorpusError(f"{where}: high {h} < max(open, close) {max(o, c)}")
            if l > min(o, c):
                raise CorpusError(f"{where}: low {l} > min(open, close) {min(o, c)}")
            rows.append((d, o, h, l, c, lineno))
    if not rows:
        raise CorpusError(f"{path}: no price rows")
    rows.sort(key=lambda r: r[0])
    for prev, cur in zip(rows, rows[1:]):
        if prev[0] == cur[0]:
            raise CorpusError(f"{path}:{cur[5]}: duplicate date {cur[0]} (also line {prev[5]})")
    dates = tuple(r[0] for r in rows)
    values = np.array([r[1:5] for r in rows], dtype=np.float64)
    return PriceSeries(ticker=ticker, dates=dates, values=values)


def load_prices_dir(prices_dir: str | Path, registry: dict[str, CompanyRecord]) -> dict[str, PriceSeries]:
    prices_dir = Path(prices_dir)
    prices: dict[str, PriceSeries] = {}
    for path in sorted(prices_dir.glob("*.csv")):
        series = load_price_file(path)
        if series.ticker not in registry:
            raise CorpusError(f"{path}: ticker {series.ticker!r} not present in registry")
        prices[series.ticker] = series
    if not prices:
        raise CorpusError(f"{prices_dir}: no price files found")
    return prices


def load_corpus(
    news_path: str | Path,
    filings_path: str | Path,
    prices_dir: str | Path,
    registry_path: str | Path,
) -> Corpus:
    """Load and validate all raw inputs; calendar = sorted union of price dates."""
    registry = load_registry(registry_path)
    articles = load_news(news_path)
    filings = load_filings(filings_path, registry)
    prices = load_prices_dir(prices_dir, registry)
    all_days: set[date] = set()
    for series in prices.values():
        all_days.update(series.dates)
    calendar = TradingCalendar(days=tuple(sorted(all_days)))
    return Corpus(articles=articles, filings=filings, prices=prices, registry=registry, calendar=calendar)


def align_to_trading_day(d: date, calendar: TradingCalendar) -> date | None:
    """Roll a date forward to the earliest trading day >= it (None past the end).

    Idempotent on trading days; preserves causality because text dated d is
    never paired with a price earlier than d.
    """
    idx = bisect_left(calendar.days, d)
    if idx == len(calendar.days):
        return None
    return calendar.days[idx]


def forward_fill(dated_values: list[tuple[date, object]], calendar: TradingCalendar) -> dict[date, object]:
    """Carry each value onto trading days at or after its date.

    dated_values must be sorted by date; on ties the later list entry wins.
    Trading days before the first value are absent from the result.
    """
    for (a, _), (b, _) in zip(dated_values, dated_values[1:]):
        if a > b:
            raise ValueError("dated_values must be sorted by date")
    out: dict[date, object] = {}
    i = 0
    current: object = None
    have_value = False
    for day in calendar.days:
        while i < len(dated_values) and dated_values[i][0] <= day:
            current = dated_values[i][1]
            have_value = True
            i += 1
        if have_value:
            out[day] = current
    return out
