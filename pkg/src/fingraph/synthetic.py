"""Deterministic synthetic corpus: 20 research notes on 5 stocks, prices, reference data, aliases.

The bundled copy under ``fingraph/data/synthetic`` is produced by::

    python -m fingraph.synthetic src/fingraph/data/synthetic
"""

from __future__ import annotations

import csv
import json
import math
import random
import sys
from dataclasses import dataclass
from datetime import date, timedelta
from importlib import resources
from pathlib import Path

SEED = 20240828

HOLIDAYS = {
    date(2024, 9, 16), date(2024, 9, 17),
    *(date(2024, 10, d) for d in range(1, 8)),
    date(2025, 1, 1),
    *(date(2025, 1, d) for d in range(28, 32)),
}
FIRST_DAY = date(2024, 8, 26)
LAST_DAY = date(2025, 1, 24)


@dataclass(frozen=True)
class Company:
    slug: str
    name: str
    ticker: str
    exchange: str
    industry: str
    products: str
    shareholders: str
    start_price: float
    shares_bn: float
    drift: float


COMPANIES = (
    Company("byd", "BYD", "002594.SZ", "Shenzhen Stock Exchange", "Automobiles",
            "Battery electric vehicles, plug-in hybrids, Blade batteries", "Wang Chuanfu; Berkshire Hathaway Energy",
            250.0, 2.91, 0.0015),
    Company("catl", "CATL", "300750.SZ", "Shenzhen Stock Exchange", "Electrical Equipment",
            "Power batteries, energy storage systems", "Zeng Yuqun; Ningbo Meishan Bonded Port Ruiting",
            180.0, 4.40, 0.0020),
    Company("moutai", "Kweichow Moutai", "600519.SH", "Shanghai Stock Exchange", "Food & Beverage",
            "Moutai liquor, series liquor", "China Kweichow Moutai Distillery Group",
            1450.0, 1.256, -0.0004),
    Company("smic", "SMIC", "688981.SH", "Shanghai Stock Exchange", "Semiconductor",
            "Foundry wafers, 28nm and FinFET process services", "Datang Holdings; China IC Fund",
            45.0, 7.95, 0.0025),
    Company("haierbio", "Haier Biomedical", "688139.SH", "Shanghai Stock Exchange", "Healthcare",
            "Biomedical cold chain, smart pharmacy systems", "Haier Group",
            30.0, 0.318, 0.0005),
)

INSTITUTIONS = ("Soochow Securities", "Guosen Securities", "Kaiyuan Securities", "China Post Securities",
                "Huaan Securities")

# (category, trigger, object, reasoning); the subject is the company unless given as a 5th element.
EVENT_POOL = {
    "byd": [
        ("Strategic Action", "Overseas expansion", "Hungary passenger car plant", "New capacity close to European customers lifts export volume"),
        ("Demand", "Sales", "record monthly NEV deliveries", "Higher unit sales drive revenue growth"),
        ("Efficiency Cost", "Lower the cost", "vertically integrated battery supply", "In-house batteries compress unit cost"),
        ("Policy Regulation", "Regulatory action", "EU countervailing duties", "Tariffs weigh on European margins", "European Commission"),
        ("Technology Innovation", "New product", "fifth-generation DM hybrid", "Longer range supports premium pricing"),
    ],
    "catl": [
        ("Technology Innovation", "Has innovated", "Shenxing fast-charging LFP cell", "Fast charging widens addressable market"),
        ("Supply", "Capacity Adjustment", "Hungarian gigafactory ramp", "Capacity additions support overseas orders"),
        ("Revenue", "Profit", "energy storage gross margin", "Storage mix lifts overall profitability"),
        ("Macro", "Interest rate", "LPR cut", "Lower financing costs support EV demand", "People's Bank of China"),
        ("Demand", "Is needed by", "grid-scale storage projects", "Storage tenders add order backlog"),
    ],
    "moutai": [
        ("Revenue", "Earning", "direct sales channel revenue", "Channel shift raises average selling price"),
        ("Demand", "Consumption", "holiday gifting season", "Seasonal consumption supports volumes"),
        ("Macro", "GDP", "slower consumption growth", "Weak macro data caps wholesale prices", "National Bureau of Statistics"),
        ("Supply", "Market Action", "wholesale price correction", "Falling batch prices pressure distributors"),
        ("Policy Regulation", "Governs", "consumption tax reform", "Tax changes may shift margins to local level", "Ministry of Finance"),
    ],
    "smic": [
        ("Technology Innovation", "Iteration", "advanced node yield improvement", "Better yields raise utilization"),
        ("Demand", "Performance", "domestic smartphone chip orders", "Localization demand fills fabs"),
        ("Supply", "Holds", "inventory of mature-node wafers", "Inventory build delays pricing recovery"),
        ("Policy Regulation", "License", "export control licensing", "Equipment licensing limits expansion", "US Department of Commerce"),
        ("Revenue", "Has increased / decreased", "quarterly revenue", "Utilization recovery lifts quarterly revenue"),
    ],
    "haierbio": [
        ("Technology Innovation", "Is applicable in", "IoT blood safety systems", "Digital products expand hospital coverage"),
        ("Strategic Action", "Merger / Acquisition", "Shanghai Sunwise acquisition", "Acquisition broadens consumables portfolio"),
        ("Demand", "Sales", "overseas cold-chain orders", "International sales offset domestic weakness"),
        ("Efficiency Cost", "Automation", "smart factory upgrade", "Automation trims operating expenses"),
        ("Macro", "Disaster", "vaccine demand normalization", "Post-pandemic normalization lowers base demand"),
    ],
}

RATINGS = ("Buy", "Overweight", "Accumulate", "Hold")
RISKS = ("Price competition intensifies", "Raw material cost volatility", "Overseas policy uncertainty",
         "Demand recovery slower than expected")

LEGAL = "This report is based on public information and is provided to clients of the institution for reference only."


def trading_days() -> list[date]:
    days, d = [], FIRST_DAY
    while d <= LAST_DAY:
        if d.weekday() < 5 and d not in HOLIDAYS:
            days.append(d)
        d += timedelta(days=1)
    return days


def price_paths(rng: random.Random, days: list[date]) -> dict[str, dict[date, float]]:
    paths = {}
    for c in COMPANIES:
        price, path = c.start_price, {}
        for d in days:
            price *= math.exp(c.drift + 0.022 * rng.gauss(0.0, 1.0))
            path[d] = round(price, 2)
        paths[c.ticker] = path
    return paths


def report_dates(rng: random.Random, days: list[date]) -> list[date]:
    """Four report dates per company, spread across the first 18 weeks."""
    windows = [days[i: i + 20] for i in (5, 30, 55, 75)]
    return [rng.choice(w) for w in windows]


def render_report(c: Company, when: date, idx: int, rng: random.Random, close: float) -> str:
    institution = INSTITUTIONS[(idx + COMPANIES.index(c)) % len(INSTITUTIONS)]
    display = {("byd", 2): "BYD Auto", ("moutai", 1): "Kweichow Moutai Co., Ltd."}.get((c.slug, idx), c.name)
    cap = f"{round(close * c.shares_bn, 1)} CNY billions"
    target = f"{round(close * rng.uniform(1.08, 1.35), 2)} CNY"
    lines = []
    if idx % 2 == 0:
        lines += ["---", f"ticker: {c.ticker}", f"company: {display}", f"institution: {institution}",
                  f"publish_date: {when.isoformat()}", "---", ""]
    else:
        lines += [f"Company: {display}", f"Ticker: {c.ticker}", f"Institution: {institution}",
                  f"Date: {when.isoformat()}", ""]
    lines += [f"# {display}: {rng.choice(['quarterly review', 'earnings update', 'industry deep dive', 'initiation'])}",
              "", f"![cover](images/{c.slug}_{idx}.png)", "", "## Investment summary", "",
              f"Stock Ticker: {c.ticker}", f"Primary Exchange: {c.exchange}", f"Primary Industry: {c.industry}",
              f"Investment Rating: {RATINGS[(idx + len(c.slug)) % len(RATINGS)]}",
              f"Current Stock Price: {close:.2f} CNY"]
    # Missing or unit-less market cap exercises reference completion.
    if (c.slug, idx) in {("catl", 1), ("smic", 2)}:
        lines.append("Market Capitalization:")
    elif (c.slug, idx) == ("haierbio", 3):
        lines.append(f"Market Capitalization: {round(close * c.shares_bn, 1)}")
    else:
        lines.append(f"Market Capitalization: {cap}")
    lines += [f"Target Price: {target}", LEGAL, "", "## Company profile", "",
              f"Major Shareholders: {c.shareholders}",
              f"Key Products: {'Extraction error' if (c.slug, idx) == ('moutai', 3) else c.products}",
              f"Research Institution: {institution}", "",
              f"![chart](images/{c.slug}_{idx}_chart.png)", "", "## Events", ""]
    pool = EVENT_POOL[c.slug]
    picks = sorted(rng.sample(range(len(pool)), 3))
    for i in picks:
        category, trigger, obj, why, *subject = pool[i]
        subj = subject[0] if subject else display
        lines.append(f"EVENT[{category}] {subj} -> {trigger} -> {obj} :: {why}")
    lines += ["", "## Risk factors", "", f"Risk Assessment: {rng.choice(RISKS)}", LEGAL, "",
              "Disclaimer: the views expressed are the analyst's own and do not constitute investment advice.",
              "", "## 免责声明", "", "本报告仅供参考，不构成投资建议。", LEGAL, ""]
    return "\n".join(lines)


def generate(out_dir: str | Path) -> Path:
    out = Path(out_dir)
    corpus = out / "corpus"
    corpus.mkdir(parents=True, exist_ok=True)
    rng = random.Random(SEED)
    days = trading_days()
    paths = price_paths(rng, days)

    ref_rows = []
    for c in COMPANIES:
        for idx, when in enumerate(report_dates(rng, days)):
            close = paths[c.ticker][when]
            text = render_report(c, when, idx, rng, close)
            (corpus / f"{c.slug}_{when:%Y%m%d}.md").write_text(text, encoding="utf-8")
            ref_rows.append((c.ticker, "Market Capitalization", f"{round(close * c.shares_bn, 1)}", "CNY billions", when))
            ref_rows.append((c.ticker, "Current Stock Price", f"{close:.2f}", "CNY", when))

    with open(out / "prices.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "date", "close"])
        for c in COMPANIES:
            for d in days:
                w.writerow([c.ticker, d.isoformat(), f"{paths[c.ticker][d]:.2f}"])

    with open(out / "refdata.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "field", "value", "unit", "as_of"])
        for t, f, v, u, d in sorted(ref_rows, key=lambda r: (r[0], r[1], r[4])):
            w.writerow([t, f, v, u, d.isoformat()])

    (out / "chat_fixtures.json").write_text(
        json.dumps(correction_fixtures(corpus), indent=2, ensure_ascii=False, sort_keys=True) + "\n", encoding="utf-8")

    aliases = {"canonical": {"BYD": ["BYD Auto", "BYD Inc."], "Kweichow Moutai": ["Moutai", "贵州茅台"]},
               "suffixes": ["Inc.", "Co., Ltd.", "股份有限公司"]}
    (out / "aliases.json").write_text(json.dumps(aliases, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return out


def correction_fixtures(corpus_dir: Path) -> dict[str, str]:
    """Scripted replies for the correction prompts that placeholder tails in the corpus will trigger."""
    from .corpus import ingest_directory, refine
    from .refinement import CORRECTION_PROMPT, PLACEHOLDERS, relevant_passage
    from .providers import prompt_key

    fixtures = {}
    by_slug = {c.slug: c for c in COMPANIES}
    for raw in ingest_directory(corpus_dir):
        doc = refine(raw)
        company = by_slug[raw.doc_id.split("_")[0]]
        for line in doc.body_text.splitlines():
            relation, _, value = line.partition(": ")
            if value.strip() in PLACEHOLDERS:
                head = company.name
                prompt = CORRECTION_PROMPT.format(head=head, relation=relation,
                                                  passage=relevant_passage(doc, head, relation))
                fixtures[prompt_key(prompt)] = company.products
    return fixtures


def bundled_dir() -> Path:
    """Path of the synthetic data shipped with the package."""
    return Path(str(resources.files("fingraph").joinpath("data", "synthetic")))


if __name__ == "__main__":
    generate(sys.argv[1] if len(sys.argv) > 1 else "synthetic")
