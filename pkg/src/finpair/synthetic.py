"""Deterministic synthetic corpus, mock fixtures, and mock provider rules.

The generated world plants a recoverable signal: every trading day carries a
latent +/-1 event per company, per sector, and for the macro economy; next-day
returns are a linear mix of those events, and articles verbalize them with
fixed keyword phrases. The keyword embedding rule places same-sector and
same-company texts near shared anchor directions, and the rule-based mock
responder labels every article exactly as its generating template intended,
so classification, retrieval, and forecasting behavior are all checkable
against construction-time ground truth.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import re
from dataclasses import dataclass, asdict
from datetime import date, timedelta
from pathlib import Path
from typing import Mapping

import numpy as np

from .gateway import FILING_KEYS, request_digest

MACRO_TERMS = ("Federal Reserve", "U.S. economy")
NOISE_COMPANY_TERMS = ("Omega Sportswear", "Zenith Airlines")

# Event phrases, one pair per level, sign-coded. Weighted anchors make these
# dominate the embedding so the text head can read the planted signal.
EVENT_PHRASES = {
    "macro": {"pos": "rate cuts", "neg": "raises interest rates"},
    "sector": {"pos": "demand surges", "neg": "orders collapse"},
    "company": {"pos": "beats earnings", "neg": "misses earnings"},
}

TOPIC_NAMES = {
    "rate cuts": "Monetary policy easing",
    "raises interest rates": "Monetary policy tightening",
    "demand surges": "Sector demand growth",
    "orders collapse": "Sector demand slump",
    "beats earnings": "Earnings outperformance",
    "misses earnings": "Earnings shortfall",
}

_PREFIXES = ("Alpha", "Bravo", "Cobalt", "Delta", "Echo", "Foxtrot", "Gamma", "Helix")
_SECTOR_ORDER = (
    "Information Technology",
    "Energy",
    "Health Care",
    "Financials",
    "Industrials",
    "Consumer Staples",
)
_SECTOR_FLAVOR = {
    "Information Technology": "Semiconductor",
    "Energy": "Petroleum",
    "Health Care": "Biomedical",
    "Financials": "Capital",
    "Industrials": "Aerospace",
    "Consumer Staples": "Foods",
}


class GenerationError(Exception):
    pass


@dataclass(frozen=True)
class SyntheticSpec:
    n_companies: int = 3
    n_sectors: int = 2
    n_days: int = 350
    # None = one article per (level slot, day); an explicit count subsamples
    # that full-coverage set deterministically.
    n_articles: int | None = None
    signal_strength: float = 0.02
    seed: int = 7
    dim: int = 32
    noise_scale: float = 0.08
    start_year: int = 2019
    years: int = 5
    noise_articles_per_day: int = 1
    lookback: int = 64
    horizon: int = 3

    def __post_init__(self) -> None:
        if self.n_sectors < 2:
            raise GenerationError("need at least 2 sectors")
        if not 2 <= self.n_companies <= len(_PREFIXES):
            raise GenerationError(f"n_companies must be within [2, {len(_PREFIXES)}]")
        if self.n_sectors > len(_SECTOR_ORDER) or self.n_sectors > self.n_companies:
            raise GenerationError("n_sectors must be <= n_companies and <= the roster sectors")
        if self.n_days // self.years < self.lookback + self.horizon:
            raise GenerationError(
                f"{self.n_days} days over {self.years} years leaves split segments shorter than "
                f"lookback+horizon={self.lookback + self.horizon}"
            )


@dataclass(frozen=True)
class SyntheticCompany:
    ticker: str
    name: str
    match_term: str
    sector: str


def _roster(spec: SyntheticSpec) -> list[SyntheticCompany]:
    sectors = _SECTOR_ORDER[: spec.n_sectors]
    companies = []
    for i in range(spec.n_companies):
        prefix = _PREFIXES[i]
        sector = sectors[i % spec.n_sectors]
        match_term = f"{prefix} {_SECTOR_FLAVOR[sector]}"
        companies.append(
            SyntheticCompany(
                ticker=prefix[0].upper() * 3,
                name=f"{match_term} Inc.",
                match_term=match_term,
                sector=sector,
            )
        )
    return companies


def _trading_days(spec: SyntheticSpec) -> list[date]:
    per_year = spec.n_days // spec.years
    days: list[date] = []
    for year in range(spec.start_year, spec.start_year + spec.years):
        d = date(year, 1, 2)
        took = 0
        while took < per_year:
            if d.weekday() < 5:
                days.append(d)
                took += 1
            d += timedelta(days=1)
    return days


def _article(article_id: str, published: date, headline: str, body: str) -> dict:
    return {"article_id": article_id, "published": published.isoformat(), "headline": headline, "body": body}


def generate(spec: SyntheticSpec, out_dir: str | Path) -> dict:
    """Write the corpus, fixtures, rules, truth labels, and a run config.

    Deterministic per spec: identical specs produce byte-identical trees.
    Returns a summary dict of the emitted paths and counts.
    """
    out_dir = Path(out_dir)
    companies = _roster(spec)
    days = _trading_days(spec)
    n_days = len(days)
    sectors = sorted({c.sector for c in companies})
    rng = np.random.default_rng(spec.seed)

    # Latent daily events, sign-coded.
    macro_events = rng.choice([-1.0, 1.0], size=n_days)
    sector_events = {s: rng.choice([-1.0, 1.0], size=n_days) for s in sectors}
    company_events = {c.ticker: rng.choice([-1.0, 1.0], size=n_days) for c in companies}

    # Prices: next-day log return driven by the previous day's events.
    (out_dir / "prices").mkdir(parents=True, exist_ok=True)
    noise_sigma = 0.01
    for idx, company in enumerate(companies):
        peers = [c for c in companies if c.sector == company.sector and c.ticker != company.ticker]
        closes = np.empty(n_days)
        closes[0] = 100.0 * (1.0 + 0.1 * idx)
        for t in range(n_days - 1):
            combo = company_events[company.ticker][t]
            if peers:
                combo += 0.5 * float(np.mean([company_events[p.ticker][t] for p in peers]))
            combo += 0.5 * sector_events[company.sector][t] + 0.5 * macro_events[t]
            ret = spec.signal_strength * combo + noise_sigma * rng.standard_normal()
            closes[t + 1] = closes[t] * float(np.exp(ret))
        opens = np.concatenate([[closes[0] * 0.999], closes[:-1]])
        spreads = rng.uniform(0.0, 0.002, size=(n_days, 2))
        highs = np.maximum(opens, closes) * (1.0 + spreads[:, 0])
        lows = np.minimum(opens, closes) * (1.0 - spreads[:, 1])
        lines = ["date,open,high,low,close"]
        for t, d in enumerate(days):
            lines.append(
                f"{d.isoformat()},{float(opens[t])!r},{float(highs[t])!r},{float(lows[t])!r},{float(closes[t])!r}"
            )
        (out_dir / "prices" / f"{company.ticker}.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    registry_lines = ["ticker,name,gics_sector"] + [f"{c.ticker},{c.name},{c.sector}" for c in companies]
    (out_dir / "registry.csv").write_text("\n".join(registry_lines) + "\n", encoding="utf-8")

    # Filings: a full annual report on the first day, plus a mid-corpus
    # current report that updates only the recent-events component.
    filings = []
    parsed_truth: dict[str, dict[str, str]] = {}
    for company in companies:
        base = {
            "overviewProduct": f"{company.name} ({company.ticker}) designs and sells core products "
            f"for the {company.sector} sector.",
            "strategyMarketOps": f"{company.match_term} expands capacity and long-term supply agreements "
            f"across its {company.sector} markets.",
            "governanceRisks": f"{company.match_term} refreshed its audit committee; key risks include "
            "supply concentration and regulatory scrutiny.",
            "financialStatement": f"{company.match_term} reported growing revenue with healthy margins "
            "and low leverage.",
            "recentEventCatalyst": f"{company.match_term} launched a next-generation product line this year.",
        }
        body = "\n".join([f"ANNUAL REPORT OF {company.name.upper()}"] + [f"{k}: {base[k]}" for k in FILING_KEYS])
        filings.append({"ticker": company.ticker, "filed": days[0].isoformat(), "filing_type": "10-K", "raw_text": body})
        parsed_truth[body] = dict(base)

        update_day = days[2 * (n_days // spec.years)]
        update = f"{company.match_term} announced a strategic partnership expanding its {company.sector} offerings."
        update_body = f"CURRENT REPORT OF {company.name.upper()}\nrecentEventCatalyst: {update}"
        filings.append(
            {"ticker": company.ticker, "filed": update_day.isoformat(), "filing_type": "8-K", "raw_text": update_body}
        )
        parsed_truth[update_body] = {k: (update if k == "recentEventCatalyst" else "") for k in FILING_KEYS}

    with (out_dir / "filings.jsonl").open("w", encoding="utf-8") as fh:
        for filing in filings:
            fh.write(json.dumps(filing, sort_keys=True, ensure_ascii=False) + "\n")

    # Articles: full coverage of one article per (level slot, day) plus noise.
    articles: list[dict] = []
    truth_labels: list[dict] = []

    def sign_key(value: float) -> str:
        return "pos" if value > 0 else "neg"

    for t, d in enumerate(days):
        stamp = d.isoformat()
        sign = sign_key(macro_events[t])
        headline = (
            "Federal Reserve signals rate cuts as inflation cools"
            if sign == "pos"
            else "Federal Reserve raises interest rates amid inflation fears"
        )
        body = (
            f"Policymakers signaled that rate cuts are likely, easing conditions across the U.S. economy ({stamp})."
            if sign == "pos"
            else f"The central bank raises interest rates again, tightening conditions across the U.S. economy ({stamp})."
        )
        articles.append(_article(f"M{t:04d}", d, headline, body))
        truth_labels.append({"article_id": f"M{t:04d}", "level": "Macroeconomic"})

        for k, sector in enumerate(sectors):
            sign = sign_key(sector_events[sector][t])
            if sign == "pos":
                headline = f"{sector} stocks rally as demand surges"
                body = f"Analysts said demand surges across the {sector} sector lifted the group outlook ({stamp})."
            else:
                headline = f"{sector} slump deepens as orders collapse"
                body = f"Orders collapse across the {sector} sector weighed on the group outlook ({stamp})."
            articles.append(_article(f"S{t:04d}{k}", d, headline, body))
            truth_labels.append({"article_id": f"S{t:04d}{k}", "level": "Sector", "sector": sector})

        for i, company in enumerate(companies):
            sign = sign_key(company_events[company.ticker][t])
            if sign == "pos":
                headline = f"{company.match_term} beats earnings expectations"
                body = (
                    f"{company.match_term} ({company.ticker}) beats earnings expectations on strong demand, "
                    f"lifting guidance ({stamp})."
                )
            else:
                headline = f"{company.match_term} misses earnings as costs mount"
                body = (
                    f"{company.match_term} ({company.ticker}) misses earnings estimates as costs mount, "
                    f"cutting guidance ({stamp})."
                )
            articles.append(_article(f"C{t:04d}{i}", d, headline, body))
            relations = {
                c.ticker: (
                    "Target"
                    if c.ticker == company.ticker
                    else "Related" if c.sector == company.sector else "Irrelevant"
                )
                for c in companies
            }
            truth_labels.append({"article_id": f"C{t:04d}{i}", "level": "Company", "relations": relations})

        for j in range(spec.noise_articles_per_day):
            term = NOISE_COMPANY_TERMS[(t + j) % len(NOISE_COMPANY_TERMS)]
            headline = f"{term} wins sponsorship deal for championship game"
            body = f"{term} announced a sponsorship agreement around the weekend championship game ({stamp})."
            articles.append(_article(f"X{t:04d}{j}", d, headline, body))
            truth_labels.append(
                {"article_id": f"X{t:04d}{j}", "level": "Company", "relations": {c.ticker: "Irrelevant" for c in companies}}
            )

    if spec.n_articles is not None and spec.n_articles < len(articles):
        keep = sorted({int(round(x)) for x in np.linspace(0, len(articles) - 1, spec.n_articles)})
        articles = [articles[i] for i in keep]
        kept_ids = {a["article_id"] for a in articles}
        truth_labels = [t for t in truth_labels if t["article_id"] in kept_ids]

    with (out_dir / "news.jsonl").open("w", encoding="utf-8") as fh:
        for article in articles:
            fh.write(json.dumps(article, sort_keys=True, ensure_ascii=False) + "\n")
    with (out_dir / "truth_labels.jsonl").open("w", encoding="utf-8") as fh:
        for row in truth_labels:
            fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")

    # Mock rules for the chat fallback and the keyword embedding provider.
    rules = {
        "companies": [asdict(c) for c in companies],
        "noise_company_terms": list(NOISE_COMPANY_TERMS),
        "macro_terms": list(MACRO_TERMS),
        "sector_names": sectors,
        "topics": dict(TOPIC_NAMES),
    }
    (out_dir / "mock_rules.json").write_text(json.dumps(rules, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    anchors = []
    for company in companies:
        anchors.append({"term": company.match_term, "anchor": f"company:{company.ticker}", "weight": 1.0})
        anchors.append({"term": company.ticker, "anchor": f"company:{company.ticker}", "weight": 1.0})
    for sector in sectors:
        anchors.append({"term": sector, "anchor": f"sector:{sector}", "weight": 1.0})
    for term in MACRO_TERMS:
        anchors.append({"term": term, "anchor": "macro", "weight": 1.0})
    for level, phrases in EVENT_PHRASES.items():
        for sign, phrase in phrases.items():
            anchors.append({"term": phrase, "anchor": f"evt:{level}:{sign}", "weight": 2.0})
    embedding_rule = {"dim": spec.dim, "seed": spec.seed + 1, "noise_scale": spec.noise_scale, "anchors": anchors}
    (out_dir / "embedding_rule.json").write_text(
        json.dumps(embedding_rule, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    # Fixture files for filing parses (and day-zero classifications) exercise
    # the canned-response path; everything else goes through the rules.
    fixtures_dir = out_dir / "fixtures"
    fixtures_dir.mkdir(parents=True, exist_ok=True)
    for body, fields in parsed_truth.items():
        digest = request_digest("filing_parse", {"sec_filing_text": body})
        (fixtures_dir / f"{digest}.txt").write_text(
            json.dumps({k: fields[k] for k in FILING_KEYS}, indent=2, ensure_ascii=False), encoding="utf-8"
        )
    responder = RuleBasedResponder(rules)
    for article in articles[: 2 + len(sectors) + len(companies)]:
        slots = {"HEADLINE": article["headline"], "BODY": article["body"]}
        for template_id in ("level_classify", "sector_classify"):
            raw = responder(template_id, slots)
            if raw is not None:
                digest = request_digest(template_id, slots)
                (fixtures_dir / f"{digest}.txt").write_text(raw, encoding="utf-8")

    config = {
        "corpus": {
            "news": "news.jsonl",
            "filings": "filings.jsonl",
            "prices_dir": "prices",
            "registry": "registry.csv",
        },
        "llm": {
            "kind": "mock",
            "model_id": "mock-chat",
            "fixture_dir": "fixtures",
            "rules_path": "mock_rules.json",
            "max_retries": 2,
        },
        "embedding": {"kind": "mock", "model_id": "mock-embed", "rule_path": "embedding_rule.json", "dim": spec.dim},
        "retrieval": {"n": 10},
        "contrastive": {"temperature": 0.07, "batch_size": 64, "epochs": 30, "learning_rate": 0.005, "seed": 0},
        "train": {
            "learning_rate": 0.001,
            "max_epochs": 60,
            "patience": 5,
            "batch_size": 32,
            "lookback": spec.lookback,
            "horizon": spec.horizon,
            "fusion_ratio": 0.3,
        },
        "seeds": [0, 1, 2],
        "out_dir": "out",
        "cache_dir": "cache",
    }
    (out_dir / "config.json").write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    return {
        "out_dir": str(out_dir),
        "companies": [c.ticker for c in companies],
        "days": n_days,
        "articles": len(articles),
        "filings": len(filings),
        "config": str(out_dir / "config.json"),
    }


class RuleBasedResponder:
    """Keyword rules that answer every template deterministically.

    This is the mock gateway's fallback for requests whose slots depend on
    pipeline state (profiles, retrieved sets) and therefore cannot be
    pre-rendered into fixtures.
    """

    def __init__(self, rules: Mapping):
        self.companies = [dict(c) for c in rules["companies"]]
        self.noise_terms = list(rules.get("noise_company_terms", ()))
        self.macro_terms = list(rules.get("macro_terms", MACRO_TERMS))
        self.sector_names = list(rules.get("sector_names", ()))
        self.topics = dict(rules.get("topics", {}))

    @classmethod
    def from_file(cls, path: str | Path) -> "RuleBasedResponder":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def _mentioned_companies(self, text: str) -> list[dict]:
        lowered = text.lower()
        return [c for c in self.companies if c["match_term"].lower() in lowered or c["ticker"].lower() in lowered.split()]

    def __call__(self, template_id: str, slots: Mapping[str, str]) -> str | None:
        if template_id == "filing_parse":
            text = slots.get("sec_filing_text", "")
            fields = {}
            for key in FILING_KEYS:
                match = re.search(rf"^{key}:\s*(.*)$", text, flags=re.MULTILINE)
                fields[key] = match.group(1).strip() if match else ""
            return json.dumps(fields, ensure_ascii=False)
        if template_id in ("level_classify", "sector_classify", "relation_classify"):
            return json.dumps({"category": self._classify(template_id, slots)}, ensure_ascii=False)
        if template_id == "summarize":
            return self._summarize(slots)
        return None

    def _classify(self, template_id: str, slots: Mapping[str, str]) -> str:
        text = f"{slots.get('HEADLINE', '')}\n{slots.get('BODY', '')}"
        lowered = text.lower()
        if template_id == "level_classify":
            if self._mentioned_companies(text) or any(t.lower() in lowered for t in self.noise_terms):
                return "Company"
            if any(s.lower() in lowered for s in self.sector_names):
                return "Sector"
            if any(t.lower() in lowered for t in self.macro_terms):
                return "Macroeconomic"
            return "N/A"
        if template_id == "sector_classify":
            for sector in self.sector_names:
                if sector.lower() in lowered:
                    return sector
            return "N/A"
        overview = slots.get("OVERVIEW_PRODUCT", "").lower()
        target = next((c for c in self.companies if c["match_term"].lower() in overview), None)
        if target is None:
            return "N/A"
        mentioned = self._mentioned_companies(text)
        if any(c["ticker"] == target["ticker"] for c in mentioned):
            return "Target-company news"
        if any(c["sector"] == target["sector"] for c in mentioned):
            return "Related-company news"
        return "N/A"

    def _summarize(self, slots: Mapping[str, str]) -> str:
        headlines = re.findall(r"^\s*\d+-1\. Headline: (.*)$", slots.get("ARTICLES", ""), flags=re.MULTILINE)
        cap = int(slots.get("N", "5"))
        grouped: dict[str, list[str]] = {}
        for headline in headlines:
            lowered = headline.lower()
            topic = next((name for phrase, name in self.topics.items() if phrase.lower() in lowered), "General developments")
            grouped.setdefault(topic, []).append(headline)
        items = list(grouped.items())[:cap]
        return json.dumps({topic: "; ".join(lines) for topic, lines in items}, ensure_ascii=False)


class KeywordEmbeddingProvider:
    """Deterministic text embeddings from seeded anchor directions.

    A text's vector is the weighted sum of the anchor vectors whose terms
    occur in it, plus a small seeded hash component; texts sharing entities
    and event phrases land near each other by construction.
    """

    def __init__(self, rule: Mapping):
        self.dim = int(rule["dim"])
        self.seed = int(rule["seed"])
        self.noise_scale = float(rule["noise_scale"])
        self.anchors = [(str(a["term"]).lower(), str(a["anchor"]), float(a["weight"])) for a in rule["anchors"]]
        self._anchor_cache: dict[str, np.ndarray] = {}

    @classmethod
    def from_file(cls, path: str | Path) -> "KeywordEmbeddingProvider":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))

    def _seeded_unit(self, key: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}:{key}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        vec = rng.standard_normal(self.dim)
        return vec / np.linalg.norm(vec)

    def _anchor_vec(self, anchor_id: str) -> np.ndarray:
        if anchor_id not in self._anchor_cache:
            self._anchor_cache[anchor_id] = self._seeded_unit(f"anchor:{anchor_id}")
        return self._anchor_cache[anchor_id]

    def embed_batch(self, texts: list[str], model_id: str = "") -> np.ndarray:
        out = np.empty((len(texts), self.dim))
        for row, text in enumerate(texts):
            lowered = text.lower()
            matched: dict[str, float] = {}
            for term, anchor_id, weight in self.anchors:
                if term in lowered:
                    matched[anchor_id] = max(matched.get(anchor_id, 0.0), weight)
            vec = self.noise_scale * self._seeded_unit(f"text:{text}")
            for anchor_id, weight in sorted(matched.items()):
                vec = vec + weight * self._anchor_vec(anchor_id)
            out[row] = vec / np.linalg.norm(vec)
        return out


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Generate the bundled synthetic corpus and mock fixtures.")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--days", type=int, default=350)
    parser.add_argument("--companies", type=int, default=3)
    parser.add_argument("--sectors", type=int, default=2)
    parser.add_argument("--articles", type=int, default=None)
    parser.add_argument("--signal-strength", type=float, default=0.02)
    args = parser.parse_args(argv)
    spec = SyntheticSpec(
        n_companies=args.companies,
        n_sectors=args.sectors,
        n_days=args.days,
        n_articles=args.articles,
        signal_strength=args.signal_strength,
        seed=args.seed,
    )
    summary = generate(spec, args.out)
    print(json.dumps(summary, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
