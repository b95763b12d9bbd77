from __future__ import annotations

import numpy as np
import pytest

from finpair.corpus import (
    CorpusError,
    TradingCalendar,
    align_to_trading_day,
    forward_fill,
    load_corpus,
    load_news,
    load_price_file,
    load_registry,
)

from conftest import day, flat_price_rows, write_filings, write_news, write_prices, write_registry


def test_load_corpus_single_source_calendar(tiny_corpus):
    assert len(tiny_corpus.articles) == 2
    assert len(tiny_corpus.filings) == 1
    assert tiny_corpus.calendar.days == (day("2024-01-02"), day("2024-01-03"), day("2024-01-04"))
    assert tiny_corpus.registry["ACME"].gics_sector == "Industrials"


def test_price_high_below_open_is_rejected(tmp_path):
    path = write_prices(tmp_path / "prices", "BAD", [("2024-01-02", 10.0, 9.0, 8.0, 9.5)])
    with pytest.raises(CorpusError, match=r"BAD\.csv:2.*high"):
        load_price_file(path)


def test_calendar_is_union_of_disjoint_price_files(tmp_path):
    days_a = ["2024-01-02", "2024-01-04"]
    days_b = ["2024-01-03", "2024-01-05"]
    write_prices(tmp_path / "prices", "AAA", flat_price_rows(days_a))
    write_prices(tmp_path / "prices", "BBB", flat_price_rows(days_b))
    news = write_news(tmp_path / "news.jsonl", [])
    filings = write_filings(tmp_path / "filings.jsonl", [])
    registry = write_registry(
        tmp_path / "registry.csv", [("AAA", "Aaa Inc.", "Energy"), ("BBB", "Bbb Inc.", "Utilities")]
    )
    corpus = load_corpus(news, filings, tmp_path / "prices", registry)
    # Independent set-union oracle over the two date lists.
    expected = tuple(sorted({day(d) for d in days_a} | {day(d) for d in days_b}))
    assert corpus.calendar.days == expected


def test_duplicate_article_id_is_rejected(tmp_path):
    path = write_news(
        tmp_path / "news.jsonl",
        [
            {"article_id": "a1", "published": "2024-01-02", "headline": "x", "body": ""},
            {"article_id": "a1", "published": "2024-01-03", "headline": "y", "body": ""},
        ],
    )
    with pytest.raises(CorpusError, match="news.jsonl:2.*duplicate article_id"):
        load_news(path)


def test_duplicate_price_date_is_hard_error(tmp_path):
    path = write_prices(
        tmp_path / "prices", "DUP", [("2024-01-02", 1, 1, 1, 1), ("2024-01-02", 2, 2, 2, 2)]
    )
    with pytest.raises(CorpusError, match="duplicate date"):
        load_price_file(path)


def test_unsorted_price_rows_are_sorted_on_load(tmp_path):
    path = write_prices(
        tmp_path / "prices", "OOO", [("2024-01-03", 2, 2, 2, 2), ("2024-01-02", 1, 1, 1, 1)]
    )
    series = load_price_file(path)
    assert series.dates == (day("2024-01-02"), day("2024-01-03"))
    assert series.values[0, 0] == 1.0


def test_registry_rejects_unknown_sector(tmp_path):
    path = write_registry(tmp_path / "registry.csv", [("AAA", "Aaa Inc.", "Widgets")])
    with pytest.raises(CorpusError, match="registry.csv:2.*not one of the 11"):
        load_registry(path)


def test_filing_type_must_be_accepted_code(tmp_path):
    filings = write_filings(
        tmp_path / "filings.jsonl",
        [{"ticker": "AAA", "filed": "2024-01-02", "filing_type": "13-F", "raw_text": "x"}],
    )
    from finpair.corpus import load_filings

    with pytest.raises(CorpusError, match="filing_type"):
        load_filings(filings, {"AAA": None})


def test_align_rolls_weekend_forward():
    calendar = TradingCalendar(days=(day("2024-01-05"), day("2024-01-08")))  # Fri, Mon
    assert align_to_trading_day(day("2024-01-06"), calendar) == day("2024-01-08")  # Saturday
    assert align_to_trading_day(day("2024-01-05"), calendar) == day("2024-01-05")  # identity
    assert align_to_trading_day(day("2024-01-09"), calendar) is None  # past the end


def test_align_is_idempotent_and_monotone():
    rng = np.random.default_rng(11)
    days = tuple(sorted({day("2024-01-01").fromordinal(738000 + int(i)) for i in rng.choice(200, size=60, replace=False)}))
    calendar = TradingCalendar(days=days)
    probes = sorted(day("2024-01-01").fromordinal(737990 + int(i)) for i in rng.choice(230, size=80, replace=False))
    previous = None
    for probe in probes:
        aligned = align_to_trading_day(probe, calendar)
        if aligned is not None:
            assert align_to_trading_day(aligned, calendar) == aligned
            if previous is not None:
                assert aligned >= previous
            previous = aligned


def _forward_fill_oracle(dated_values, calendar):
    # Brute-force scan: for each day, the value with the largest date <= day.
    out = {}
    for d in calendar.days:
        best = None
        for vd, value in dated_values:
            if vd <= d:
                best = value
        if best is not None:
            out[d] = best
    return out


def test_forward_fill_definition_case():
    calendar = TradingCalendar(days=(day("2024-01-02"), day("2024-01-03"), day("2024-01-04"), day("2024-01-05")))
    values = [(day("2024-01-02"), "A"), (day("2024-01-04"), "B")]
    assert forward_fill(values, calendar) == {
        day("2024-01-02"): "A",
        day("2024-01-03"): "A",
        day("2024-01-04"): "B",
        day("2024-01-05"): "B",
    }


def test_forward_fill_empty_values():
    calendar = TradingCalendar(days=(day("2024-01-02"),))
    assert forward_fill([], calendar) == {}


def test_forward_fill_value_before_calendar_start():
    calendar = TradingCalendar(days=(day("2024-01-10"), day("2024-01-11")))
    values = [(day("2024-01-01"), "early")]
    result = forward_fill(values, calendar)
    assert result == _forward_fill_oracle(values, calendar)
    assert result[day("2024-01-10")] == "early"


def test_forward_fill_matches_scan_oracle_on_random_inputs():
    rng = np.random.default_rng(5)
    base = day("2024-01-01").toordinal()
    for _ in range(25):
        calendar = TradingCalendar(
            days=tuple(sorted(day("2024-01-01").fromordinal(base + int(i)) for i in rng.choice(60, size=12, replace=False)))
        )
        n_values = int(rng.integers(0, 6))
        value_days = sorted(day("2024-01-01").fromordinal(base - 3 + int(i)) for i in rng.choice(70, size=n_values, replace=False))
        values = [(d, f"v{i}") for i, d in enumerate(value_days)]
        assert forward_fill(values, calendar) == _forward_fill_oracle(values, calendar)


def test_loading_is_pure(tmp_path):
    news = write_news(
        tmp_path / "news.jsonl",
        [{"article_id": "a1", "published": "2024-01-02", "headline": "h", "body": "b"}],
    )
    filings = write_filings(tmp_path / "filings.jsonl", [])
    write_prices(tmp_path / "prices", "AAA", flat_price_rows(["2024-01-02"]))
    registry = write_registry(tmp_path / "registry.csv", [("AAA", "Aaa Inc.", "Energy")])
    one = load_corpus(news, filings, tmp_path / "prices", registry)
    two = load_corpus(news, filings, tmp_path / "prices", registry)
    assert one.articles == two.articles
    assert one.calendar == two.calendar
    assert one.registry == two.registry
    assert np.array_equal(one.prices["AAA"].values, two.prices["AAA"].values)
