from __future__ import annotations

import json

import pytest

from finpair.assemble import (
    CategorySummary,
    SummaryMemo,
    assemble_day,
    emit_dataset,
    keyword_match,
    keyword_pair_baseline,
    load_dataset,
    record_from_json_obj,
    record_to_json_obj,
    summarize_level,
    validate_record_obj,
)
from finpair.corpus import CompanyRecord, NewsArticle
from finpair.gateway import FILING_KEYS, render_prompt

from conftest import canned, day, make_gateway

NVDA = CompanyRecord(ticker="NVDA", name="NVIDIA Corporation", gics_sector="Information Technology")
AMD = CompanyRecord(ticker="AMD", name="Advanced Micro Devices Inc.", gics_sector="Information Technology")
PROFILE = {k: f"profile {k}" for k in FILING_KEYS}


def _article(article_id, headline, body="body", level=None, sector=None, relations=None):
    return NewsArticle(
        article_id=article_id,
        published=day("2024-01-02"),
        headline=headline,
        body=body,
        level=level,
        sector=sector,
        relation_by_company=relations or {},
    )


def test_summarize_level_no_articles_no_call():
    calls = {"n": 0}

    def fallback(template_id, slots):
        calls["n"] += 1
        return "{}"

    gateway = make_gateway(fallback=fallback)
    assert summarize_level("Macroeconomic", "desc", [], 5, gateway) == []
    assert calls["n"] == 0


def test_summarize_level_cap_enforced(caplog):
    seven = {f"topic {i}": f"summary {i}" for i in range(7)}
    gateway = make_gateway(fallback=canned({"summarize": json.dumps(seven)}))
    with caplog.at_level("WARNING"):
        out = summarize_level("Macroeconomic", "desc", [_article("a", "h")], 5, gateway)
    assert len(out) == 5
    assert [s.category for s in out] == [f"topic {i}" for i in range(5)]
    assert "keeping the first 5" in caplog.text


def test_summarize_level_invalid_cap():
    gateway = make_gateway(fallback=canned({"summarize": "{}"}))
    with pytest.raises(ValueError):
        summarize_level("x", "d", [_article("a", "h")], 4, gateway)


def test_summarize_level_degrades_to_empty(caplog):
    gateway = make_gateway(fallback=canned({"summarize": "no json here"}))
    with caplog.at_level("WARNING"):
        out = summarize_level("Macroeconomic", "desc", [_article("a", "h")], 5, gateway)
    assert out == []
    assert "summarization failed" in caplog.text


def test_macro_and_company_prompts_differ_only_in_context_block():
    # Same articles, same cap: the rendered prompts differ in TAG and the
    # descriptions block only.
    from finpair.assemble import profile_description
    from finpair.gateway import CATEGORY_DESCRIPTIONS, format_articles_block

    block = format_articles_block([("headline one", "body one")])
    macro_prompt = render_prompt(
        "summarize",
        {"TAG": "Macroeconomic", "TAG DESCRIPTION": CATEGORY_DESCRIPTIONS["levels"]["Macroeconomic"], "N": "5", "ARTICLES": block},
    )
    company_prompt = render_prompt(
        "summarize",
        {"TAG": NVDA.name, "TAG DESCRIPTION": profile_description(PROFILE), "N": "5", "ARTICLES": block},
    )
    # After normalizing the tag itself, the two prompts differ only inside the
    # descriptions block (tag definition vs the five-component profile).
    macro_norm = macro_prompt.replace("Macroeconomic", "X")
    company_norm = company_prompt.replace(NVDA.name, "X")
    assert macro_norm != company_norm
    assert macro_norm.split("# Descriptions of X")[0] == company_norm.split("# Descriptions of X")[0]
    assert macro_norm.split("# Rules")[1] == company_norm.split("# Rules")[1]


def _summarize_by_headlines(template_id, slots):
    if template_id != "summarize":
        return None
    import re

    headlines = re.findall(r"\d+-1\. Headline: (.*)", slots["ARTICLES"])
    return json.dumps({f"t{i}": h for i, h in enumerate(headlines)})


def test_assemble_day_macro_only():
    articles = {
        "m1": _article("m1", "macro news", level="Macroeconomic"),
    }
    gateway = make_gateway(fallback=_summarize_by_headlines)
    record = assemble_day(NVDA, day("2024-01-02"), articles, [], PROFILE, gateway)
    assert len(record.macro) == 1
    assert record.sector == record.related_company == record.target_company == ()
    assert record.profile == PROFILE


def test_assemble_day_partitions_retrieved_by_relation():
    articles = {}
    retrieved = []
    for i in range(2):
        aid = f"t{i}"
        articles[aid] = _article(aid, f"target {i}", level="Company", relations={"NVDA": "Target"})
        retrieved.append(aid)
    articles["r0"] = _article("r0", "related 0", level="Company", relations={"NVDA": "Related"})
    retrieved.append("r0")
    for i in range(4):
        aid = f"x{i}"
        articles[aid] = _article(aid, f"noise {i}", level="Company", relations={"NVDA": "Irrelevant"})
        retrieved.append(aid)
    gateway = make_gateway(fallback=_summarize_by_headlines)
    record = assemble_day(NVDA, day("2024-01-02"), articles, retrieved, PROFILE, gateway)
    assert len(record.target_company) == 2
    assert len(record.related_company) == 1
    summaries = " ".join(s.summary for s in record.target_company + record.related_company)
    assert "noise" not in summaries


def test_assemble_day_sector_slot_filters_by_company_sector():
    articles = {
        "s1": _article("s1", "chip sector news", level="Sector", sector="Information Technology"),
        "s2": _article("s2", "oil sector news", level="Sector", sector="Energy"),
    }
    gateway = make_gateway(fallback=_summarize_by_headlines)
    record = assemble_day(NVDA, day("2024-01-02"), articles, [], PROFILE, gateway)
    assert len(record.sector) == 1
    assert "chip sector news" in record.sector[0].summary


def test_two_companies_share_macro_slot_and_differ_elsewhere():
    articles = {
        "m1": _article("m1", "shared macro", level="Macroeconomic"),
        "c1": _article("c1", "nvda news", level="Company", relations={"NVDA": "Target", "AMD": "Related"}),
    }
    gateway = make_gateway(fallback=_summarize_by_headlines)
    memo = SummaryMemo()
    rec_nvda = assemble_day(NVDA, day("2024-01-02"), articles, ["c1"], PROFILE, gateway, memo=memo)
    rec_amd = assemble_day(AMD, day("2024-01-02"), articles, ["c1"], PROFILE, gateway, memo=memo)
    assert rec_nvda.macro == rec_amd.macro
    assert rec_nvda.target_company and not rec_nvda.related_company
    assert rec_amd.related_company and not rec_amd.target_company


def test_assemble_day_missing_profile_errors():
    from finpair.assemble import AssemblyError

    gateway = make_gateway(fallback=_summarize_by_headlines)
    with pytest.raises(AssemblyError):
        assemble_day(NVDA, day("2024-01-02"), {}, [], None, gateway)


def _record(ticker="NVDA", trading_day="2024-01-02", n_macro=1):
    return record_from_json_obj(
        {
            "ticker": ticker,
            "trading_day": trading_day,
            "macro": [{"category": f"c{i}", "summary": "s"} for i in range(n_macro)],
            "sector": [],
            "related_company": [],
            "target_company": [],
            "profile": {k: "" for k in FILING_KEYS},
        }
    )


def test_emit_dataset_manifest_and_round_trip(tmp_path):
    records = [_record(trading_day="2024-01-03"), _record(trading_day="2024-01-02"), _record(ticker="AMD")]
    manifest = emit_dataset(records, tmp_path / "dataset")
    assert set(manifest["tickers"]) == {"NVDA", "AMD"}
    assert manifest["tickers"]["NVDA"]["days"] == 2
    again = emit_dataset(records, tmp_path / "dataset2")
    assert manifest["tickers"] == again["tickers"]  # deterministic digests
    loaded = load_dataset(tmp_path / "dataset")
    assert [r.trading_day for r in loaded["NVDA"]] == [day("2024-01-02"), day("2024-01-03")]


def test_validate_record_rejects_over_cap():
    obj = record_to_json_obj(_record())
    obj["macro"] = [{"category": f"c{i}", "summary": "s"} for i in range(6)]
    with pytest.raises(ValueError, match="macro"):
        validate_record_obj(obj)


def test_validate_record_rejects_empty_summary():
    obj = record_to_json_obj(_record())
    obj["sector"] = [{"category": "c", "summary": ""}]
    with pytest.raises(ValueError):
        validate_record_obj(obj)


def test_keyword_match_whole_word_rules():
    nvda_article = _article("a1", "NVIDIA announces new GPU line")
    gpu_article = _article("a2", "GPU data centers expand rapidly")
    assert keyword_match(NVDA, nvda_article)
    assert not keyword_match(NVDA, gpu_article)
    # Whole-word guard: the short ticker T must not match inside words.
    att = CompanyRecord(ticker="T", name="AT&T Inc.", gics_sector="Communication Services")
    assert not keyword_match(att, _article("a3", "The market went up"))
    assert keyword_match(att, _article("a4", "T shares rallied"))


def test_keyword_baseline_day_and_forward_fill():
    d1, d2 = day("2024-01-02"), day("2024-01-03")
    hit = _article("a1", "NVIDIA ships new chips")
    miss = _article("a2", "Nothing relevant here")
    by_day = {d1: [hit], d2: [miss]}
    assert keyword_pair_baseline(NVDA, d1, by_day) == [hit]
    assert keyword_pair_baseline(NVDA, d2, by_day) == []
    # Footnote rule: with forward filling the previous day's pairing carries.
    assert keyword_pair_baseline(NVDA, d2, by_day, forward_fill_days=[d1, d2]) == [hit]


def test_record_json_round_trip_with_article_ids():
    obj = record_to_json_obj(_record())
    obj["article_ids"] = {"macro": ["m1"]}
    record = record_from_json_obj(obj)
    assert record.article_ids["macro"] == ("m1",)
    assert record_to_json_obj(record)["article_ids"] == {"macro": ["m1"]}
