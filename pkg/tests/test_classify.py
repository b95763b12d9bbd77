from __future__ import annotations

import json

import pytest

from finpair.classify import assert_label_gating, classify_level, classify_relation, classify_sector
from finpair.corpus import CompanyRecord, NewsArticle
from finpair.gateway import FILING_KEYS, request_digest

from conftest import canned, day, make_gateway


def _article(headline="Fed raises rates", body="body text", level=None, **kwargs) -> NewsArticle:
    return NewsArticle(
        article_id="a1", published=day("2024-01-02"), headline=headline, body=body, level=level, **kwargs
    )


COMPANY = CompanyRecord(ticker="NVDA", name="NVIDIA Corporation", gics_sector="Information Technology")
PROFILE = {k: f"profile {k}" for k in FILING_KEYS}


def test_classify_level_fixture_round_trip(tmp_path):
    slots = {"HEADLINE": "Fed raises rates", "BODY": "body text"}
    digest = request_digest("level_classify", slots)
    (tmp_path / f"{digest}.txt").write_text('{"category": "Macroeconomic"}', encoding="utf-8")
    assert classify_level(_article(), make_gateway(fixture_dir=tmp_path)) == "Macroeconomic"


def test_classify_level_off_vocabulary_degrades_to_na():
    gateway = make_gateway(fallback=canned({"level_classify": '{"category": "Weather"}'}))
    assert classify_level(_article(), gateway) == "NA"


def test_classify_level_explicit_na():
    gateway = make_gateway(fallback=canned({"level_classify": '{"category": "N/A"}'}))
    assert classify_level(_article(), gateway) == "NA"


def test_classify_level_headline_only():
    gateway = make_gateway(fallback=canned({"level_classify": '{"category": "Company"}'}))
    assert classify_level(_article(body=""), gateway) == "Company"


def test_classify_sector_round_trip_and_gating():
    gateway = make_gateway(fallback=canned({"sector_classify": '{"category": "Energy"}'}))
    assert classify_sector(_article(level="Sector"), gateway) == "Energy"
    with pytest.raises(ValueError, match="level == Sector"):
        classify_sector(_article(level="Company"), gateway)


def test_classify_relation_three_labels():
    for raw, expected in [
        ("Target-company news", "Target"),
        ("Related-company news", "Related"),
        ("N/A", "Irrelevant"),
    ]:
        gateway = make_gateway(fallback=canned({"relation_classify": json.dumps({"category": raw})}))
        assert classify_relation(_article(level="Company"), COMPANY, PROFILE, gateway) == expected


def test_classify_relation_requires_company_level():
    gateway = make_gateway(fallback=canned({"relation_classify": '{"category": "N/A"}'}))
    with pytest.raises(ValueError, match="level == Company"):
        classify_relation(_article(level="Sector"), COMPANY, PROFILE, gateway)


def test_classify_relation_off_vocab_degrades_to_irrelevant():
    gateway = make_gateway(fallback=canned({"relation_classify": '{"category": "Friendly"}'}))
    assert classify_relation(_article(level="Company"), COMPANY, PROFILE, gateway) == "Irrelevant"


def test_labels_stable_across_reruns():
    gateway = make_gateway(fallback=canned({"level_classify": '{"category": "Sector"}'}))
    labels = {classify_level(_article(), gateway) for _ in range(3)}
    assert labels == {"Sector"}


def test_label_gating_assertion():
    good = [_article(level="Sector", sector="Energy")]
    assert_label_gating(good)
    bad = [_article(level="Macroeconomic", sector="Energy")]
    with pytest.raises(AssertionError):
        assert_label_gating(bad)
    bad_relation = [_article(level="Sector", sector="Energy", relation_by_company={"NVDA": "Target"})]
    with pytest.raises(AssertionError):
        assert_label_gating(bad_relation)
