"""Stage orchestration behind the CLI: config, caching, and resumability.

Every stage writes plain files under the output directory and can be re-run
on its own once its predecessors' outputs exist on disk. Completed LLM and
embedding work is digest-cached, so re-running a stage (or the whole
build-dataset chain) makes zero provider calls when nothing changed.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, replace
from datetime import date
from pathlib import Path

import numpy as np

from . import assemble, classify, corpus as corpus_mod, evaluation, filings as filings_mod, forecasting, retrieval
from .corpus import Corpus, CorpusError, NewsArticle, TradingCalendar, align_to_trading_day
from .gateway import Gateway, HttpChatProvider, MockChatProvider, ProviderConfig
from .retrieval import CachedEmbeddings, ContrastiveConfig, HttpEmbeddingProvider
from .synthetic import KeywordEmbeddingProvider, RuleBasedResponder

log = logging.getLogger(__name__)


class ConfigError(Exception):
    pass


@dataclass(frozen=True)
class RunConfig:
    news_path: Path
    filings_path: Path
    prices_dir: Path
    registry_path: Path
    llm: dict
    embedding: dict
    retrieval_n: int
    contrastive: ContrastiveConfig
    train: forecasting.TrainConfig
    seeds: tuple[int, ...]
    out_dir: Path
    cache_dir: Path
    tickers: tuple[str, ...] = ()
    date_from: date | None = None
    date_to: date | None = None
    keep_article_ids: bool = False


def _resolve(base: Path, value: str) -> Path:
    path = Path(value)
    return path if path.is_absolute() else base / path


def load_run_config(
    path: str | Path,
    provider: str | None = None,
    out_dir: str | None = None,
    cache_dir: str | None = None,
    tickers: tuple[str, ...] = (),
    date_from: date | None = None,
    date_to: date | None = None,
    seeds: tuple[int, ...] | None = None,
) -> RunConfig:
    """Parse the JSON run config; relative paths resolve against its directory."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    base = path.parent
    try:
        corpus_cfg = raw["corpus"]
        llm = dict(raw["llm"])
        embedding = dict(raw["embedding"])
    except KeyError as exc:
        raise ConfigError(f"config missing section {exc}") from None
    if provider is not None:
        llm["kind"] = "mock" if provider == "mock" else "http"
        embedding["kind"] = llm["kind"]
    try:
        contrastive = ContrastiveConfig(**raw.get("contrastive", {}))
        train = forecasting.TrainConfig(**raw.get("train", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad training section: {exc}") from exc
    return RunConfig(
        news_path=_resolve(base, corpus_cfg["news"]),
        filings_path=_resolve(base, corpus_cfg["filings"]),
        prices_dir=_resolve(base, corpus_cfg["prices_dir"]),
        registry_path=_resolve(base, corpus_cfg["registry"]),
        llm=llm,
        embedding=embedding,
        retrieval_n=int(raw.get("retrieval", {}).get("n", 10)),
        contrastive=contrastive,
        train=train,
        seeds=tuple(seeds if seeds is not None else raw.get("seeds", [0, 1, 2])),
        out_dir=Path(out_dir) if out_dir else _resolve(base, raw.get("out_dir", "out")),
        cache_dir=Path(cache_dir) if cache_dir else _resolve(base, raw.get("cache_dir", "cache")),
        tickers=tuple(tickers),
        date_from=date_from,
        date_to=date_to,
        keep_article_ids=bool(raw.get("keep_article_ids", False)),
    )


def build_gateway(cfg: RunConfig) -> Gateway:
    llm = cfg.llm
    kind = llm.get("kind", "mock")
    if kind == "mock":
        fixture_dir = llm.get("fixture_dir")
        rules_path = llm.get("rules_path")
        if fixture_dir is None and rules_path is None:
            raise ConfigError("mock llm provider needs fixture_dir and/or rules_path")
        fallback = RuleBasedResponder.from_file(_resolve(cfg.news_path.parent, rules_path)) if rules_path else None
        provider = MockChatProvider(
            fixture_dir=_resolve(cfg.news_path.parent, fixture_dir) if fixture_dir else None,
            fallback=fallback,
        )
    elif kind == "http":
        try:
            provider = HttpChatProvider(
                ProviderConfig(
                    endpoint_url=llm["endpoint_url"],
                    api_key_env=llm.get("api_key_env", ""),
                    max_concurrent=int(llm.get("max_concurrent", 4)),
                    timeout_s=float(llm.get("timeout_s", 60.0)),
                )
            )
        except KeyError as exc:
            raise ConfigError(f"http llm provider missing {exc}") from None
    else:
        raise ConfigError(f"unknown llm provider kind {kind!r}")
    return Gateway(
        provider,
        model_id=llm.get("model_id", "mock-chat"),
        model_ids=llm.get("model_ids"),
        max_retries=int(llm.get("max_retries", 2)),
        cache_dir=cfg.cache_dir / "llm",
    )


def build_embedder(cfg: RunConfig) -> tuple[CachedEmbeddings, str, int]:
    emb = cfg.embedding
    kind = emb.get("kind", "mock")
    if kind == "mock":
        if "rule_path" not in emb:
            raise ConfigError("mock embedding provider needs rule_path")
        provider = KeywordEmbeddingProvider.from_file(_resolve(cfg.news_path.parent, emb["rule_path"]))
        dim = provider.dim
    elif kind == "http":
        try:
            provider = HttpEmbeddingProvider(
                ProviderConfig(
                    endpoint_url=emb["endpoint_url"],
                    api_key_env=emb.get("api_key_env", ""),
                    timeout_s=float(emb.get("timeout_s", 60.0)),
                )
            )
            dim = int(emb["dim"])
        except KeyError as exc:
            raise ConfigError(f"http embedding provider missing {exc}") from None
    else:
        raise ConfigError(f"unknown embedding provider kind {kind!r}")
    return CachedEmbeddings(provider, cfg.cache_dir / "embeddings"), emb.get("model_id", "mock-embed"), dim


def apply_filters(c: Corpus, cfg: RunConfig) -> Corpus:
    """Restrict the corpus by ticker and date range; calendar is recomputed."""
    if not cfg.tickers and cfg.date_from is None and cfg.date_to is None:
        return c
    keep = set(cfg.tickers) if cfg.tickers else set(c.prices)
    unknown = keep - set(c.registry)
    if unknown:
        raise CorpusError(f"ticker filter references unknown tickers: {sorted(unknown)}")

    def in_range(d: date) -> bool:
        return (cfg.date_from is None or d >= cfg.date_from) and (cfg.date_to is None or d <= cfg.date_to)

    prices = {}
    for ticker, series in c.prices.items():
        if ticker not in keep:
            continue
        idx = [i for i, d in enumerate(series.dates) if in_range(d)]
        if idx:
            prices[ticker] = corpus_mod.PriceSeries(
                ticker=ticker,
                dates=tuple(series.dates[i] for i in idx),
                values=series.values[idx],
            )
    if not prices:
        raise CorpusError("filters removed every price series")
    days = sorted({d for s in prices.values() for d in s.dates})
    return Corpus(
        articles=[a for a in c.articles if in_range(a.published)],
        filings=[f for f in c.filings if f.ticker in keep and (cfg.date_to is None or f.filed <= cfg.date_to)],
        prices=prices,
        registry={t: r for t, r in c.registry.items() if t in keep},
        calendar=TradingCalendar(days=tuple(days)),
    )


def articles_by_trading_day(articles: list[NewsArticle], calendar: TradingCalendar) -> dict[date, dict[str, NewsArticle]]:
    """Roll every article forward to its paired trading day; unpaired dropped."""
    out: dict[date, dict[str, NewsArticle]] = {}
    for article in articles:
        day = align_to_trading_day(article.published, calendar)
        if day is not None:
            out.setdefault(day, {})[article.article_id] = article
    return out


def _write_articles(path: Path, articles: list[NewsArticle]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for a in articles:
            obj = {
                "article_id": a.article_id,
                "published": a.published.isoformat(),
                "headline": a.headline,
                "body": a.body,
            }
            if a.level is not None:
                obj["level"] = a.level
            if a.sector is not None:
                obj["sector"] = a.sector
            if a.relation_by_company:
                obj["relation_by_company"] = dict(sorted(a.relation_by_company.items()))
            fh.write(json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n")


class Pipeline:
    """Lazy stage runner: prerequisites load from disk or compute on demand."""

    def __init__(self, cfg: RunConfig):
        self.cfg = cfg
        self.cfg.out_dir.mkdir(parents=True, exist_ok=True)
        self._corpus: Corpus | None = None
        self._gateway: Gateway | None = None
        self._embedder = None
        self._model_id = ""
        self._text_dim = 0
        self._labeled: list[NewsArticle] | None = None
        self._parsed: list[filings_mod.ParsedFiling] | None = None
        self._adapter: np.ndarray | None = None
        self._retrieved: dict[tuple[str, date], list[str]] | None = None
        self._records: list[assemble.PairedDayRecord] | None = None
        self._text_memo: dict[str, np.ndarray] = {}

    # -- lazy infrastructure -------------------------------------------------

    @property
    def corpus(self) -> Corpus:
        if self._corpus is None:
            raw = corpus_mod.load_corpus(
                self.cfg.news_path, self.cfg.filings_path, self.cfg.prices_dir, self.cfg.registry_path
            )
            self._corpus = apply_filters(raw, self.cfg)
        return self._corpus

    @property
    def gateway(self) -> Gateway:
        if self._gateway is None:
            self._gateway = build_gateway(self.cfg)
        return self._gateway

    def _ensure_embedder(self):
        if self._embedder is None:
            self._embedder, self._model_id, self._text_dim = build_embedder(self.cfg)
        return self._embedder

    @property
    def text_dim(self) -> int:
        self._ensure_embedder()
        return self._text_dim

    def embed_texts(self, texts: list[str]) -> np.ndarray:
        """Embed with an in-process memo on top of the on-disk vector cache."""
        embedder = self._ensure_embedder()
        missing = sorted({t for t in texts if t not in self._text_memo})
        if missing:
            vectors = retrieval.embed(missing, embedder, self._model_id)
            for text, vec in zip(missing, vectors):
                self._text_memo[text] = vec
        return np.stack([self._text_memo[t] for t in texts])

    # -- stages ----------------------------------------------------------------

    def ingest(self) -> dict:
        c = self.corpus
        report = {
            "articles": len(c.articles),
            "filings": len(c.filings),
            "tickers": sorted(c.prices),
            "calendar_days": len(c.calendar.days),
            "calendar_start": c.calendar.days[0].isoformat(),
            "calendar_end": c.calendar.days[-1].isoformat(),
        }
        path = self.cfg.out_dir / "corpus_report.json"
        path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return report

    def parse_filings(self, force: bool = False) -> list[filings_mod.ParsedFiling]:
        path = self.cfg.out_dir / "parsed_filings.jsonl"
        if self._parsed is None and path.exists() and not force:
            self._parsed = filings_mod.load_parsed_filings(path)
        if self._parsed is None or force:
            ordered = sorted(self.corpus.filings, key=lambda f: (f.ticker, f.filed, f.filing_type))
            self._parsed = [filings_mod.parse_filing(doc, self.gateway) for doc in ordered]
            filings_mod.save_parsed_filings(self._parsed, path)
        return self._parsed

    def profile_tables(self) -> dict[str, filings_mod.CompanyProfileTable]:
        parsed = self.parse_filings()
        calendar = self.corpus.calendar
        tables = {}
        for ticker in sorted(self.corpus.registry):
            mine = [p for p in parsed if p.ticker == ticker]
            tables[ticker] = filings_mod.build_profile_table(mine, calendar, ticker=ticker)
        return tables

    def classify_articles(self, force: bool = False) -> list[NewsArticle]:
        path = self.cfg.out_dir / "articles_labeled.jsonl"
        if self._labeled is None and path.exists() and not force:
            self._labeled = corpus_mod.load_news(path)
        if self._labeled is None or force:
            labeled = []
            for article in self.corpus.articles:
                level = classify.classify_level(article, self.gateway)
                sector = None
                if level == "Sector":
                    sector = classify.classify_sector(replace(article, level=level), self.gateway)
                labeled.append(replace(article, level=level, sector=sector))
            self._labeled = labeled
            _write_articles(path, labeled)
        return self._labeled

    def finetune_adapter(self, force: bool = False) -> np.ndarray:
        path = self.cfg.out_dir / "adapter.bin"
        if self._adapter is None and path.exists() and not force:
            self._adapter = retrieval.load_adapter(path)
        if self._adapter is None or force:
            labeled = self.classify_articles()
            training = [a for a in labeled if a.level == "Sector" and a.sector not in (None, "NA")]
            if not training:
                raise retrieval.TrainingError("no sector-labeled articles to fine-tune on")
            texts = [f"{a.headline}\n{a.body}" for a in training]
            vectors = self.embed_texts(texts)
            adapter, history = retrieval.train_adapter(vectors, [a.sector for a in training], self.cfg.contrastive)
            retrieval.save_adapter(path, adapter)
            log_path = self.cfg.out_dir / "adapter_log.csv"
            lines = ["epoch,loss"] + [f"{i + 1},{loss!r}" for i, loss in enumerate(history)]
            log_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
            self._adapter = adapter
        return self._adapter

    def retrieve(self, force: bool = False, n: int | None = None):
        """Per (company, day) retrieval plus relation classification of the hits.

        Returns (labeled articles incl. relation labels, {(ticker, day) -> ids}).
        With an explicit n the result is computed in memory only (used by the
        retrieval-size sweep); the stage files always reflect the configured n.
        """
        sweep_n = n
        path = self.cfg.out_dir / "retrieval.jsonl"
        labeled_path = self.cfg.out_dir / "articles_labeled.jsonl"
        if sweep_n is None and self._retrieved is None and path.exists() and not force:
            self._labeled = corpus_mod.load_news(labeled_path)
            retrieved: dict[tuple[str, date], list[str]] = {}
            with path.open(encoding="utf-8") as fh:
                for line in fh:
                    row = json.loads(line)
                    key = (row["ticker"], date.fromisoformat(row["trading_day"]))
                    retrieved[key] = [hit["article_id"] for hit in row["retrieved"]]
            self._retrieved = retrieved
        if sweep_n is None and self._retrieved is not None and not force:
            return self._labeled, self._retrieved

        n_eff = self.cfg.retrieval_n if sweep_n is None else sweep_n
        labeled = self.classify_articles()
        tables = self.profile_tables()
        adapter = self.finetune_adapter()
        by_day = articles_by_trading_day(labeled, self.corpus.calendar)
        by_id = {a.article_id: a for a in labeled}
        relations: dict[str, dict[str, str]] = {a.article_id: dict(a.relation_by_company) for a in labeled}
        retrieved: dict[tuple[str, date], list[str]] = {}
        rows = []
        for ticker in sorted(self.corpus.prices):
            company = self.corpus.registry[ticker]
            table = tables[ticker]
            for day in self.corpus.calendar.days:
                day_articles = by_day.get(day, {})
                pool_articles = sorted(
                    (a for a in day_articles.values() if a.level == "Company"), key=lambda a: a.article_id
                )
                profile = table.profile_on(day)
                hits: list[retrieval.RetrievedItem] = []
                if pool_articles and n_eff > 0:
                    pool_vectors = self.embed_texts([f"{a.headline}\n{a.body}" for a in pool_articles])
                    pool = list(zip([a.article_id for a in pool_articles], pool_vectors))
                    hits = retrieval.retrieve_top_n(profile, pool, adapter, n_eff, self.embed_texts)
                for hit in hits:
                    if ticker not in relations[hit.article_id]:
                        relations[hit.article_id][ticker] = classify.classify_relation(
                            by_id[hit.article_id], company, profile, self.gateway
                        )
                retrieved[(ticker, day)] = [hit.article_id for hit in hits]
                rows.append(
                    {
                        "ticker": ticker,
                        "trading_day": day.isoformat(),
                        "retrieved": [
                            {"article_id": h.article_id, "cosine": h.cosine, "component": h.component, "rank": h.rank}
                            for h in hits
                        ],
                    }
                )
        labeled = [replace(a, relation_by_company=relations[a.article_id]) for a in labeled]
        if sweep_n is not None:
            return labeled, retrieved
        self._labeled = labeled
        self._retrieved = retrieved
        with path.open("w", encoding="utf-8") as fh:
            for row in rows:
                fh.write(json.dumps(row, sort_keys=True, ensure_ascii=False) + "\n")
        _write_articles(labeled_path, labeled)
        return labeled, retrieved

    def assemble_records(self, force: bool = False, n: int | None = None) -> list[assemble.PairedDayRecord]:
        if n is None and self._records is not None and not force:
            return self._records
        labeled, retrieved = self.retrieve(n=n) if n is not None else self.retrieve()
        tables = self.profile_tables()
        by_day = articles_by_trading_day(labeled, self.corpus.calendar)
        memo = assemble.SummaryMemo()
        records = []
        for ticker in sorted(self.corpus.prices):
            company = self.corpus.registry[ticker]
            table = tables[ticker]
            price_days = set(self.corpus.prices[ticker].dates)
            for day in self.corpus.calendar.days:
                if day not in price_days:
                    continue
                records.append(
                    assemble.assemble_day(
                        company,
                        day,
                        by_day.get(day, {}),
                        retrieved.get((ticker, day), []),
                        table.profile_on(day),
                        self.gateway,
                        memo=memo,
                        keep_article_ids=self.cfg.keep_article_ids,
                    )
                )
        if n is None:
            self._records = records
        return records

    def summarize(self) -> Path:
        records = self.assemble_records()
        path = self.cfg.out_dir / "summaries.jsonl"
        with path.open("w", encoding="utf-8") as fh:
            for record in records:
                obj = assemble.record_to_json_obj(record)
                obj.pop("profile")
                fh.write(json.dumps(obj, sort_keys=True, ensure_ascii=False) + "\n")
        return path

    def build_dataset(self) -> dict:
        self.ingest()
        records = self.assemble_records()
        return assemble.emit_dataset(records, self.cfg.out_dir / "dataset")

    # -- forecasting stages -----------------------------------------------------

    def _load_records(self) -> dict[str, list[assemble.PairedDayRecord]]:
        dataset_dir = self.cfg.out_dir / "dataset"
        if (dataset_dir / "manifest.json").exists():
            return assemble.load_dataset(dataset_dir)
        records = self.assemble_records()
        out: dict[str, list[assemble.PairedDayRecord]] = {}
        for record in records:
            out.setdefault(record.ticker, []).append(record)
        return out

    def build_arm_samples(self, records_by_ticker, mask: tuple[str, ...]):
        """Windowed samples per split for one text-level mask."""
        c = self.corpus
        train_days, val_days, test_days = forecasting.split_by_years(c.calendar)
        group_of: dict[date, str] = {}
        for d in train_days:
            group_of[d] = "train"
        for d in val_days:
            group_of[d] = "val"
        for d in test_days:
            group_of[d] = "test"
        cfg = self.cfg.train
        samples = {"train": [], "val": [], "test": []}
        for ticker in sorted(c.prices):
            series = c.prices[ticker]
            train_idx = [i for i, d in enumerate(series.dates) if group_of.get(d) == "train"]
            if not train_idx:
                continue
            stats = forecasting.zscore_fit(series.values[train_idx])
            normalized = forecasting.zscore_apply(series.values, stats)
            records = {r.trading_day: r for r in records_by_ticker.get(ticker, [])}
            vec_memo: dict[date, np.ndarray] = {}

            def lookup(day: date, records=records, vec_memo=vec_memo) -> np.ndarray:
                if day not in vec_memo:
                    record = records.get(day)
                    if record is None:
                        vec_memo[day] = np.zeros(self.text_dim)
                    else:
                        vec_memo[day] = forecasting.encode_text(record, mask, self.embed_texts, self.text_dim)
                return vec_memo[day]

            for group, start, stop in forecasting.segment_runs(series.dates, group_of):
                windows = forecasting.make_windows(
                    series.dates[start:stop],
                    normalized[start:stop],
                    lookup,
                    lookback=cfg.lookback,
                    horizon=cfg.horizon,
                )
                samples[group].extend(windows)
        return samples["train"], samples["val"], samples["test"]

    def train_model(self) -> tuple[forecasting.ForecastModel, Path]:
        records = self._load_records()
        train_samples, val_samples, _ = self.build_arm_samples(records, forecasting.TEXT_LEVELS)
        model, history = forecasting.train(train_samples, val_samples, self.cfg.train, seed=self.cfg.seeds[0])
        checkpoint = self.cfg.out_dir / "model.bin"
        forecasting.save_model(checkpoint, model)
        forecasting.save_training_log(self.cfg.out_dir / "train_log.csv", history)
        return model, checkpoint

    def evaluate_model(self) -> dict:
        checkpoint = self.cfg.out_dir / "model.bin"
        if checkpoint.exists():
            model = forecasting.load_model(checkpoint)
        else:
            model, _ = self.train_model()
        records = self._load_records()
        _, _, test_samples = self.build_arm_samples(records, forecasting.TEXT_LEVELS)
        predictions = np.stack([model.forward(s.input, s.text_vector) for s in test_samples])
        targets = np.stack([s.target for s in test_samples])
        result = {"mse": evaluation.mse(predictions, targets), "mae": evaluation.mae(predictions, targets)}
        path = self.cfg.out_dir / "evaluation.csv"
        path.write_text(f"model,mse,mae\nref_linear,{result['mse']!r},{result['mae']!r}\n", encoding="utf-8")
        return result

    def ablate(self, plan_name: str = "multilevel") -> evaluation.MetricReport:
        records = self._load_records()
        if plan_name == "multilevel":
            plan = evaluation.multilevel_plan()
            cache: dict[tuple[str, ...], tuple] = {}

            def build(arm, seed):
                if arm not in cache:
                    cache[arm] = self.build_arm_samples(records, arm)
                return cache[arm]

        elif plan_name == "nsweep":
            plan = evaluation.retrieval_size_plan()
            cache_n: dict[int, tuple] = {}

            def build(arm, seed):
                if arm not in cache_n:
                    arm_records: dict[str, list[assemble.PairedDayRecord]] = {}
                    for record in self.assemble_records(n=arm):
                        arm_records.setdefault(record.ticker, []).append(record)
                    cache_n[arm] = self.build_arm_samples(arm_records, forecasting.TEXT_LEVELS)
                return cache_n[arm]

        else:
            raise ConfigError(f"unknown ablation plan {plan_name!r}")
        report = evaluation.run_ablation(plan, build, self.cfg.train, seeds=self.cfg.seeds)
        evaluation.write_runs_csv(self.cfg.out_dir / f"runs_{plan_name}.csv", report)
        evaluation.write_report_csv(self.cfg.out_dir / f"report_{plan_name}.csv", report)
        evaluation.write_plot_data_csv(self.cfg.out_dir / f"plotdata_{plan_name}.csv", report)
        return report

    def report(self) -> list[Path]:
        """Regenerate report tables from persisted per-run metrics."""
        out = []
        for plan_name in ("multilevel", "nsweep"):
            runs_path = self.cfg.out_dir / f"runs_{plan_name}.csv"
            if not runs_path.exists():
                continue
            report = evaluation.read_runs_csv(runs_path)
            evaluation.write_report_csv(self.cfg.out_dir / f"report_{plan_name}.csv", report)
            evaluation.write_plot_data_csv(self.cfg.out_dir / f"plotdata_{plan_name}.csv", report)
            out.append(self.cfg.out_dir / f"report_{plan_name}.csv")
        return out
