from __future__ import annotations

import json
from datetime import date
from pathlib import Path

import pytest

from finpair.corpus import load_corpus
from finpair.gateway import Gateway, MockChatProvider


def write_news(path: Path, articles: list[dict]) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        for a in articles:
            fh.write(json.dumps(a) + "\n")
    return path


def write_filings(path: Path, filings: list[dict]) -> Path:
    with path.open("w", encoding="utf-8") as fh:
        for f in filings:
            fh.write(json.dumps(f) + "\n")
    return path


def write_prices(prices_dir: Path, ticker: str, rows: list[tuple[str, float, float, float, float]]) -> Path:
    prices_dir.mkdir(parents=True, exist_ok=True)
    lines = ["date,open,high,low,close"] + [f"{d},{o},{h},{l},{c}" for d, o, h, l, c in rows]
    path = prices_dir / f"{ticker}.csv"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def write_registry(path: Path, rows: list[tuple[str, str, str]]) -> Path:
    lines = ["ticker,name,gics_sector"] + [f"{t},{n},{s}" for t, n, s in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def flat_price_rows(days: list[str], price: float = 100.0) -> list[tuple[str, float, float, float, float]]:
    return [(d, price, price, price, price) for d in days]


@pytest.fixture
def tiny_corpus(tmp_path):
    """Two articles, one filing, one price file: the smallest valid corpus."""
    news = write_news(
        tmp_path / "news.jsonl",
        [
            {"article_id": "a1", "published": "2024-01-02", "headline": "Fed raises rates", "body": "macro body"},
            {"article_id": "a2", "published": "2024-01-03", "headline": "Acme beats earnings", "body": "company body"},
        ],
    )
    filings = write_filings(
        tmp_path / "filings.jsonl",
        [{"ticker": "ACME", "filed": "2024-01-02", "filing_type": "10-K", "raw_text": "overviewProduct: Acme makes widgets."}],
    )
    prices_dir = tmp_path / "prices"
    write_prices(prices_dir, "ACME", flat_price_rows(["2024-01-02", "2024-01-03", "2024-01-04"]))
    registry = write_registry(tmp_path / "registry.csv", [("ACME", "Acme Incorporated", "Industrials")])
    return load_corpus(news, filings, prices_dir, registry)


def make_gateway(fallback=None, fixture_dir=None, max_retries=2, cache_dir=None) -> Gateway:
    provider = MockChatProvider(fixture_dir=fixture_dir, fallback=fallback)
    return Gateway(provider, max_retries=max_retries, cache_dir=cache_dir)


def canned(mapping: dict[str, str]):
    """Fallback answering by template id; None for ids not in the mapping."""

    def respond(template_id: str, slots) -> str | None:
        return mapping.get(template_id)

    return respond


def day(iso: str) -> date:
    return date.fromisoformat(iso)
