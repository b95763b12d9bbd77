"""The three LLM news-classification stages: level, GICS sector, relation.

Stage gating is enforced here: sector classification requires level ==
Sector, relation classification requires level == Company. Off-vocabulary
responses are re-asked and degrade to NA (level/sector) or Irrelevant
(relation) once retries are exhausted.
"""

from __future__ import annotations

import logging
from typing import Mapping

from .corpus import GICS_SECTORS, CompanyRecord, NewsArticle
from .gateway import (
    CATEGORY_DESCRIPTIONS,
    Gateway,
    ExtractionError,
    RetriesExhausted,
    extract_structured,
)

log = logging.getLogger(__name__)

LEVEL_VOCAB = ("Macroeconomic", "Sector", "Company")
RELATION_VOCAB = tuple(CATEGORY_DESCRIPTIONS["relations"])  # prompt category names
_RELATION_MAP = {"Target-company news": "Target", "Related-company news": "Related", "N/A": "Irrelevant"}


def _category_parser(vocab: tuple[str, ...]):
    def parse(raw: str) -> str:
        value = extract_structured(raw, ["category"])["category"].strip()
        if value in vocab or value == "N/A":
            return value
        raise ExtractionError(f"off-vocabulary category {value!r}")

    return parse


def classify_level(article: NewsArticle, gateway: Gateway) -> str:
    """Assign Macroeconomic / Sector / Company / NA from headline and body."""
    if not article.headline:
        raise ValueError("article must have a headline")
    slots = {"HEADLINE": article.headline, "BODY": article.body}
    try:
        value = gateway.ask("level_classify", slots, _category_parser(LEVEL_VOCAB))
    except RetriesExhausted:
        log.warning("level classification degraded to NA for %s", article.article_id)
        return "NA"
    return "NA" if value == "N/A" else value


def classify_sector(article: NewsArticle, gateway: Gateway) -> str:
    """Assign one of the 11 GICS sectors (or NA) to a sector-level article."""
    if article.level != "Sector":
        raise ValueError(f"classify_sector requires level == Sector, got {article.level!r}")
    slots = {"HEADLINE": article.headline, "BODY": article.body}
    try:
        value = gateway.ask("sector_classify", slots, _category_parser(GICS_SECTORS))
    except RetriesExhausted:
        log.warning("sector classification degraded to NA for %s", article.article_id)
        return "NA"
    return "NA" if value == "N/A" else value


def classify_relation(
    article: NewsArticle,
    company: CompanyRecord,
    profile: Mapping[str, str],
    gateway: Gateway,
) -> str:
    """Assign Target / Related / Irrelevant for one company.

    The profile is the company's five components as of the article's paired
    trading day (point-in-time correctness), empty components allowed.
    """
    if article.level != "Company":
        raise ValueError(f"classify_relation requires level == Company, got {article.level!r}")
    slots = {
        "HEADLINE": article.headline,
        "BODY": article.body,
        "FINANCIAL_STATEMENT": profile.get("financialStatement", ""),
        "GOVERNANCE_RISKS": profile.get("governanceRisks", ""),
        "OVERVIEW_PRODUCT": profile.get("overviewProduct", ""),
        "RECENT_EVENT_CATALYST": profile.get("recentEventCatalyst", ""),
        "STRATEGY_MARKET_OPS": profile.get("strategyMarketOps", ""),
    }
    try:
        value = gateway.ask("relation_classify", slots, _category_parser(RELATION_VOCAB))
    except RetriesExhausted:
        log.warning("relation classification degraded to Irrelevant for %s/%s", article.article_id, company.ticker)
        return "Irrelevant"
    return _RELATION_MAP[value]


def assert_label_gating(articles: list[NewsArticle]) -> None:
    """Check the stage-gating invariant on a labeled corpus."""
    for a in articles:
        if a.sector is not None and a.level != "Sector":
            raise AssertionError(f"{a.article_id}: sector label present but level is {a.level!r}")
        if a.relation_by_company and a.level != "Company":
            raise AssertionError(f"{a.article_id}: relation labels present but level is {a.level!r}")
