"""Citation-network ingestion and the patent case study.

Corpus files are strict CSVs: patents ``(id, award_year, category,
subcategory)`` and citations ``(citing_id, cited_id)``. A cohort year's
patents choose which earlier patents to cite; each citation is one choice
situation with covariates

* ``CReceived``: citations the candidate received from pre-cohort patents,
  divided by the number of pre-cohort citations the chooser makes,
* ``SubCat``: 1 when candidate and chooser share a subcategory,
* ``TimeDiff``: cohort year minus the candidate's award year.
"""
from __future__ import annotations

import csv
import logging
from collections import defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import inference
from .mnl import fit_mnl
from .model import Alternative, ChoiceSequence, ChoiceSituation, Dataset, Family, FitResult, MixingSpec, ThetaVector
from .optimize import OptimizerOptions, SingularInformationError
from .rc import RCOptions, SimulationUnderflowError, fit_rc
from .rng import Stream, as_stream, draw_coefficients
from .sequences import node_sort_key, sample_excluding

log = logging.getLogger(__name__)

PATENT_COLUMNS = ("id", "award_year", "category", "subcategory")
CITATION_COLUMNS = ("citing_id", "cited_id")
PATENT_NAMES = ("CReceived", "SubCat", "TimeDiff")
PATENT_SPEC = MixingSpec((Family.LOGNORMAL, Family.LOGNORMAL, Family.NORMAL), correlated=True,
                         names=PATENT_NAMES)
# truth used by the bundled synthetic corpus
PATENT_TRUTH = ThetaVector((0.0, 0.5, -0.2), (0.5, 0.5, 0.5), (0.0, 0.0, 0.0))
YEAR_BOUNDS = (1790, 2100)

DATA_DIR = Path(__file__).with_name("data")
SAMPLE_PATENTS = DATA_DIR / "sample_patents.csv"
SAMPLE_CITATIONS = DATA_DIR / "sample_citations.csv"
SAMPLE_TRUTH = DATA_DIR / "sample_truth.json"


@dataclass(frozen=True)
class PatentRecord:
    id: str
    award_year: int
    category: str
    subcategory: str
    citations_received_so_far: int = 0
    citations_made: int = 0


@dataclass
class PatentCorpus:
    patents: dict[str, PatentRecord]
    citations: list[tuple[str, str]]

    def validate(self, year_bounds: tuple[int, int] = YEAR_BOUNDS) -> list[str]:
        """Violations of the corpus invariants (empty when valid)."""
        errors = []
        sub_to_cat: dict[str, str] = {}
        lo, hi = year_bounds
        for p in self.patents.values():
            if not lo <= p.award_year <= hi:
                errors.append(f"award_year {p.award_year} outside [{lo}, {hi}] @ patent {p.id}")
            prev = sub_to_cat.setdefault(p.subcategory, p.category)
            if prev != p.category:
                errors.append(
                    f"subcategory {p.subcategory} maps to categories {prev} and {p.category} @ patent {p.id}")
        for i, (a, b) in enumerate(self.citations):
            if a == b:
                errors.append(f"self-citation @ citation row {i + 2}: {a}")
            for x in (a, b):
                if x not in self.patents:
                    errors.append(f"unknown patent id {x} @ citation row {i + 2}")
        return errors

    def years(self) -> list[int]:
        return sorted({p.award_year for p in self.patents.values()})


# ---------------------------------------------------------------------------
# CSV I/O


def _open(path_or_buf, mode):
    if hasattr(path_or_buf, "read" if "r" in mode else "write"):
        return path_or_buf, False
    return open(path_or_buf, mode, newline="", encoding="utf-8"), True


def _read_rows(path_or_buf, columns: Sequence[str]) -> Iterable[tuple[int, list[str]]]:
    fh, own = _open(path_or_buf, "r")
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != tuple(columns):
            raise ValueError(f"CSV header must be {','.join(columns)}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(columns):
                raise ValueError(f"line {lineno}: expected {len(columns)} fields, got {len(row)}")
            yield lineno, [c.strip() for c in row]
    finally:
        if own:
            fh.close()


def read_patents(path_or_buf) -> dict[str, PatentRecord]:
    out: dict[str, PatentRecord] = {}
    for lineno, (pid, year, cat, sub) in _read_rows(path_or_buf, PATENT_COLUMNS):
        try:
            y = int(year)
        except ValueError:
            raise ValueError(f"line {lineno}: award_year {year!r} is not an integer") from None
        if pid in out:
            raise ValueError(f"line {lineno}: duplicate patent id {pid}")
        out[pid] = PatentRecord(pid, y, cat, sub)
    return out


def read_citations(path_or_buf) -> list[tuple[str, str]]:
    return [(a, b) for _, (a, b) in _read_rows(path_or_buf, CITATION_COLUMNS)]


def load_corpus(patents_path, citations_path) -> PatentCorpus:
    return PatentCorpus(read_patents(patents_path), read_citations(citations_path))


def write_corpus(corpus: PatentCorpus, patents_path, citations_path) -> None:
    fh, own = _open(patents_path, "w")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PATENT_COLUMNS)
        for p in corpus.patents.values():
            w.writerow((p.id, p.award_year, p.category, p.subcategory))
    finally:
        if own:
            fh.close()
    fh, own = _open(citations_path, "w")
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CITATION_COLUMNS)
        w.writerows(corpus.citations)
    finally:
        if own:
            fh.close()


def convert_nber(patents_path, citations_path) -> PatentCorpus:
    """Read the NBER patent-data layout (``PATENT, GYEAR, ..., CAT, SUBCAT``
    and ``CITING, CITED``), keeping only the columns the pipeline uses."""
    with open(patents_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        need = {"PATENT", "GYEAR", "CAT", "SUBCAT"}
        if not need <= set(reader.fieldnames or ()):
            raise ValueError(f"NBER patents file needs columns {sorted(need)}")
        patents = {}
        for row in reader:
            pid = row["PATENT"].strip()
            patents[pid] = PatentRecord(pid, int(row["GYEAR"]), row["CAT"].strip(), row["SUBCAT"].strip())
    with open(citations_path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if not {"CITING", "CITED"} <= set(reader.fieldnames or ()):
            raise ValueError("NBER citations file needs columns CITING, CITED")
        cites = [(r["CITING"].strip(), r["CITED"].strip()) for r in reader]
    # the citation file covers cited patents outside the grant-year window; keep known ids only
    cites = [(a, b) for a, b in cites if a in patents and b in patents and a != b]
    return PatentCorpus(patents, cites)


# ---------------------------------------------------------------------------
# Dataset construction


@dataclass
class BuildReport:
    cohort_size: int
    n_sampled: int
    n_sequences: int
    n_situations: int
    skipped_situations: int
    dropped_internal: int
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["skipped"] = [list(s) for s in self.skipped]
        return d


def chooser_records(corpus: PatentCorpus, cohort_year: int) -> dict[str, PatentRecord]:
    """Cohort patents annotated with ``citations_made`` (pre-cohort citations)."""
    prior = {pid for pid, p in corpus.patents.items() if p.award_year < cohort_year}
    made: dict[str, int] = defaultdict(int)
    for a, b in corpus.citations:
        pa = corpus.patents.get(a)
        if pa is not None and pa.award_year == cohort_year and b in prior:
            made[a] += 1
    return {a: replace(corpus.patents[a], citations_made=n) for a, n in made.items()}


def prior_in_degree(corpus: PatentCorpus, cohort_year: int) -> dict[str, int]:
    """Citations each pre-cohort patent received from other pre-cohort patents."""
    deg: dict[str, int] = defaultdict(int)
    for a, b in corpus.citations:
        pa, pb = corpus.patents.get(a), corpus.patents.get(b)
        if pa is not None and pb is not None and pa.award_year < cohort_year and pb.award_year < cohort_year:
            deg[b] += 1
    return deg


def build_patent_dataset_with_report(corpus: PatentCorpus, cohort_year: int, n_choosers: int,
                                     k_negatives: int | None = 6, restrict_category: bool = True,
                                     stream: "Stream | int" = 0) -> tuple[Dataset, BuildReport]:
    """Choice sequences for a uniform sample of ``n_choosers`` cohort patents.

    Each pre-cohort citation is a situation whose alternatives are the cited
    patent plus ``k_negatives`` patents drawn uniformly from the candidate
    pool: patents awarded before ``cohort_year`` (in the chooser's category
    when ``restrict_category``) other than the cited one. Every citation row
    counts, so a repeated citation gives repeated situations. Situations
    whose pool is too small are skipped and counted. With ``k_negatives``
    None the whole pool is kept (no sampling). The chooser sample uses
    ``stream.child(0)``; situation ``t`` of the ``i``-th sampled chooser uses
    ``stream.child(1, i, t)``.
    """
    if k_negatives is not None and k_negatives < 1:
        raise ValueError("k_negatives must be >= 1")
    if n_choosers < 1:
        raise ValueError("n_choosers must be >= 1")
    root = as_stream(stream)
    P = corpus.patents
    prior_ids = sorted((pid for pid, p in P.items() if p.award_year < cohort_year), key=node_sort_key)
    cohort = chooser_records(corpus, cohort_year)
    n_cohort_total = sum(1 for p in P.values() if p.award_year == cohort_year)
    if not cohort:
        raise ValueError(f"cohort {cohort_year} has no patent citing an earlier patent")
    dropped_internal = sum(
        1 for a, b in corpus.citations
        if a in P and b in P and P[a].award_year == cohort_year and P[b].award_year >= cohort_year
    )
    indeg = prior_in_degree(corpus, cohort_year)

    pools: dict = {}
    for pid in prior_ids:
        pools.setdefault(P[pid].category if restrict_category else None, []).append(pid)
    pool_pos = {key: {pid: i for i, pid in enumerate(ids)} for key, ids in pools.items()}

    cohort_ids = sorted(cohort, key=node_sort_key)
    gen = root.child(0).generator()
    m = min(n_choosers, len(cohort_ids))
    sampled = sorted((cohort_ids[i] for i in gen.choice(len(cohort_ids), size=m, replace=False)),
                     key=node_sort_key)

    cited_by: dict[str, list] = defaultdict(list)
    for a, b in corpus.citations:
        cited_by[a].append(b)

    def covariates(chooser: PatentRecord, cand: str) -> tuple[float, float, float]:
        c = P[cand]
        return (indeg.get(cand, 0) / chooser.citations_made,
                1.0 if c.subcategory == chooser.subcategory else 0.0,
                float(cohort_year - c.award_year))

    sequences, skipped = [], []
    for i, cid in enumerate(sampled):
        chooser = cohort[cid]
        key = chooser.category if restrict_category else None
        pool = pools.get(key, [])
        pos = pool_pos.get(key, {})
        targets = sorted((b for b in cited_by[cid] if b in P and P[b].award_year < cohort_year), key=node_sort_key)
        sits = []
        for t, target in enumerate(targets):
            excluded = [pos[target]] if target in pos else []
            if k_negatives is None:
                if len(pool) - len(excluded) < 1:
                    skipped.append((cid, target))
                    continue
                neg = np.setdiff1d(np.arange(len(pool)), excluded)
            else:
                try:
                    neg = sample_excluding(len(pool), excluded, k_negatives, root.child(1, i, t))
                except ValueError:
                    skipped.append((cid, target))
                    continue
            ids = sorted([target] + [pool[int(j)] for j in neg], key=node_sort_key)
            alts = tuple(Alternative(x, covariates(chooser, x)) for x in ids)
            sits.append(ChoiceSituation(alts, ids.index(target)))
        if sits:
            sequences.append(ChoiceSequence(cid, tuple(sits)))
    if skipped:
        log.warning("skipped %d situation(s) with fewer than %d eligible negatives", len(skipped),
                    1 if k_negatives is None else k_negatives)
    if not sequences:
        raise ValueError("no choice situation could be built (candidate pools too small)")
    data = Dataset(tuple(sequences), PATENT_NAMES)
    report = BuildReport(n_cohort_total, m, len(sequences), data.n_situations, len(skipped),
                         dropped_internal, skipped)
    return data, report


def build_patent_dataset(corpus: PatentCorpus, cohort_year: int, n_choosers: int, k_negatives: int | None = 6,
                         restrict_category: bool = True, stream: "Stream | int" = 0) -> Dataset:
    return build_patent_dataset_with_report(corpus, cohort_year, n_choosers, k_negatives,
                                            restrict_category, stream)[0]


# ---------------------------------------------------------------------------
# Case study


@dataclass
class StudyOptions:
    n_draws: int = 100
    seed: int = 0
    draw_scheme: str = "pseudo"
    threads: int = 1
    tol: float = 1e-6
    max_iter: int = 200
    interval_mass: float = 0.90
    compare_uncorrelated: bool = True

    def rc(self) -> RCOptions:
        return RCOptions(n_draws=self.n_draws, seed=self.seed, draw_scheme=self.draw_scheme,
                         threads=self.threads, tol=self.tol, max_iter=self.max_iter)

    def mnl(self) -> OptimizerOptions:
        return OptimizerOptions(tol=self.tol, max_iter=self.max_iter, threads=self.threads)


def _safe_lr(full: FitResult, restricted: FitResult) -> dict:
    try:
        return inference.lr_test(full, restricted).to_dict()
    except ValueError as exc:
        return {"error": str(exc)}


def interpret_fit(fit: FitResult, mass: float = 0.90) -> dict:
    """Medians, substitution rates against the first characteristic,
    equal-tail intervals and the randomness diagnostic."""
    out: dict = {"medians": inference.medians_report(fit)}
    meds = [r["median"] for r in out["medians"]]
    chars = [r["characteristic"] for r in out["medians"]]
    rates = []
    for j in range(1, len(meds)):
        try:
            r = inference.substitution_rate(meds[j], meds[0])
            rates.append({"numerator": chars[j], "denominator": chars[0], "rate": r, "magnitude": abs(r)})
        except ZeroDivisionError:
            rates.append({"numerator": chars[j], "denominator": chars[0], "rate": None, "magnitude": None})
    out["substitution_rates"] = rates
    if fit.model == "rc":
        rep = dict(zip(fit.extra["reported"]["names"], fit.extra["reported"]["values"]))
        intervals = []
        for i, fam in enumerate(fit.spec.families):
            s = rep.get(f"s{i + 1}", 0.0)
            lo, hi = inference.probability_interval(fam, rep[f"m{i + 1}"], s, mass)
            intervals.append({"characteristic": chars[i], "family": fam.value, "mass": mass, "lo": lo, "hi": hi})
        out["intervals"] = intervals
        out["randomness"] = inference.randomness_diagnostic(fit)
        corr = [n for n in fit.param_names if n.startswith("chol")]
        if corr:
            try:
                out["wald_correlations"] = inference.wald_test(
                    fit, inference.restriction_matrix(fit, corr)).to_dict()
            except (np.linalg.LinAlgError, ValueError) as exc:
                out["wald_correlations"] = {"error": str(exc)}
    return out


@dataclass
class PatentStudy:
    fit: FitResult
    mnl: FitResult
    uncorrelated: FitResult | None
    interpretation: dict
    lr_mnl: dict
    lr_correlations: dict | None

    def to_dict(self) -> dict:
        return {
            "fit": self.fit.to_dict(),
            "mnl": self.mnl.to_dict(),
            "uncorrelated": None if self.uncorrelated is None else self.uncorrelated.to_dict(),
            "interpretation": self.interpretation,
            "lr_mnl_vs_rc": self.lr_mnl,
            "lr_correlations": self.lr_correlations,
        }


def run_patent_study(data: Dataset, spec: MixingSpec = PATENT_SPEC, opts: StudyOptions | None = None) -> PatentStudy:
    """RC fit plus the full inference suite and a parallel MNL comparison."""
    opts = opts or StudyOptions()
    fit = fit_rc(data, spec, opts=opts.rc())
    mnl = fit_mnl(data, opts=opts.mnl())
    unc = None
    lr_corr = None
    if spec.correlated and spec.n_corr and opts.compare_uncorrelated:
        unc = fit_rc(data, replace(spec, correlated=False), opts=opts.rc())
        if unc.log_likelihood > fit.log_likelihood:
            # the correlated fit stopped at a worse local optimum than its own
            # restriction; restart it from the restricted estimate
            start = ThetaVector(unc.theta_hat.means, unc.theta_hat.scales, (0.0,) * spec.n_corr)
            refit = fit_rc(data, spec, init=start, opts=opts.rc())
            if refit.log_likelihood > fit.log_likelihood:
                fit = refit
        lr_corr = _safe_lr(fit, unc)
    return PatentStudy(fit, mnl, unc, interpret_fit(fit, opts.interval_mass), _safe_lr(fit, mnl), lr_corr)


@dataclass
class GridCell:
    cohort_year: int
    n_choosers: int
    k_negatives: int
    restrict_category: bool
    seed: int
    fit: FitResult | None = None
    error: str | None = None

    @property
    def label(self) -> str:
        r = "on" if self.restrict_category else "off"
        return f"{self.cohort_year}/n={self.n_choosers}/k={self.k_negatives}/cat={r}/seed={self.seed}"

    def to_dict(self) -> dict:
        return {
            "cohort_year": self.cohort_year,
            "n_choosers": self.n_choosers,
            "k_negatives": self.k_negatives,
            "restrict_category": self.restrict_category,
            "seed": self.seed,
            "fit": None if self.fit is None else self.fit.to_dict(),
            "error": self.error,
        }


def robustness_grid(corpus: PatentCorpus, cohort_years: Sequence[int], n_choosers: Sequence[int] = (10000,),
                    k_negatives: Sequence[int] = (6,), restrict_category: Sequence[bool] = (True,),
                    seeds: Sequence[int] = (0,), spec: MixingSpec = PATENT_SPEC,
                    opts: StudyOptions | None = None) -> list[GridCell]:
    """One RC fit per grid cell; a failing cell records its error and the grid continues.

    Each cell builds its dataset from ``Stream(seed)`` and estimates with
    draws seeded by ``seed``, so a one-cell grid reproduces ``run_patent_study``.
    """
    opts = opts or StudyOptions()
    cells = []
    for year in cohort_years:
        for n in n_choosers:
            for k in k_negatives:
                for rc_on in restrict_category:
                    for seed in seeds:
                        cell = GridCell(int(year), int(n), int(k), bool(rc_on), int(seed))
                        try:
                            data = build_patent_dataset(corpus, year, n, k, rc_on, Stream(seed))
                            cell.fit = fit_rc(data, spec, opts=replace(opts, seed=seed).rc())
                            if not cell.fit.converged:
                                cell.error = f"not converged: {cell.fit.message}"
                        except (ValueError, ArithmeticError, np.linalg.LinAlgError,
                                SingularInformationError, SimulationUnderflowError) as exc:
                            cell.error = str(exc)
                            log.warning("grid cell %s failed: %s", cell.label, exc)
                        cells.append(cell)
    return cells


def format_grid(cells: Sequence[GridCell]) -> str:
    """Estimates side by side, one column per cell, with significance stars."""
    names: list[str] = []
    for c in cells:
        if c.fit is not None:
            for n in inference.derived_fit(c.fit).param_names:
                if n not in names:
                    names.append(n)
    cols = []
    for c in cells:
        vals = {}
        if c.fit is not None:
            for r in inference.table_rows(c.fit):
                vals[r["parameter"]] = f"{r['coefficient']:.4f}{r['stars']}"
        cols.append(vals)
    header = ["Parameter"] + [c.label for c in cells]
    body = [[n] + [col.get(n, "-") for col in cols] for n in names]
    body.append(["log-likelihood"] + [f"{c.fit.log_likelihood:.2f}" if c.fit else "failed" for c in cells])
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]
    lines = ["  ".join(h.ljust(w) for h, w in zip(header, widths))]
    lines.append("  ".join("-" * w for w in widths))
    lines += ["  ".join(v.ljust(w) for v, w in zip(row, widths)) for row in body]
    for c in cells:
        if c.error:
            lines.append(f"{c.label}: {c.error}")
    lines.append("Significance: *** 0.001, ** 0.01, * 0.05, • 0.1")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# Synthetic corpus with a known truth


def generate_patent_corpus(n_patents: int = 500, cohort_year: int = 1975, n_years: int = 5,
                           n_categories: int = 3, subcategories_per_category: int = 2,
                           cohort_fraction: float = 0.5, citations_range: tuple[int, int] = (4, 10),
                           prior_citations_range: tuple[int, int] = (1, 6), internal_rate: float = 0.05,
                           spec: MixingSpec = PATENT_SPEC, theta: ThetaVector = PATENT_TRUTH,
                           stream: "Stream | int" = 0) -> PatentCorpus:
    """A corpus whose cohort citations follow the RC model with known ``theta``.

    Pre-cohort patents cite earlier ones with probability proportional to
    one plus their in-degree. Each cohort patent draws its coefficients
    once and a citation count ``T`` uniform on ``citations_range``. Each of
    its ``T`` citations is an independent logit choice over all
    same-category predecessors, with the covariates the pipeline computes,
    so a patent may be cited more than once. With probability
    ``internal_rate`` it also cites a cohort peer, which the pipeline must
    drop.
    """
    root = as_stream(stream)
    gen = root.child(0).generator()
    n_cohort = int(round(n_patents * cohort_fraction))
    n_prior = n_patents - n_cohort
    years = np.sort(gen.integers(cohort_year - n_years, cohort_year, size=n_prior))
    years = np.concatenate([years, np.full(n_cohort, cohort_year)])
    cats = gen.integers(0, n_categories, size=n_patents)
    subs = gen.integers(0, subcategories_per_category, size=n_patents)
    ids = [str(100000 + i) for i in range(n_patents)]
    patents = {
        ids[i]: PatentRecord(ids[i], int(years[i]), str(cats[i] + 1), f"{cats[i] + 1}{subs[i] + 1}")
        for i in range(n_patents)
    }
    citations: list[tuple[str, str]] = []
    indeg = np.zeros(n_patents)
    lo_c, hi_c = prior_citations_range
    for i in range(n_prior):
        earlier = np.flatnonzero(years[:n_prior] < years[i])
        c = min(int(gen.integers(lo_c, hi_c + 1)), earlier.size)
        if c == 0:
            continue
        w = 1.0 + indeg[earlier]
        picked = gen.choice(earlier, size=c, replace=False, p=w / w.sum())
        for j in picked:
            citations.append((ids[i], ids[int(j)]))
        indeg[picked] += 1

    by_cat = {c: np.flatnonzero((cats[:n_prior] == c)) for c in range(n_categories)}
    lo_t, hi_t = citations_range
    for n in range(n_cohort):
        i = n_prior + n
        pool = by_cat[int(cats[i])]
        beta = draw_coefficients(spec, theta, 1, root.child(1, n)).draws[0]
        g = root.child(2, n).generator()
        T = min(int(g.integers(lo_t, hi_t + 1)), pool.size)
        X = np.column_stack([
            indeg[pool] / T,
            (subs[pool] == subs[i]).astype(float),
            cohort_year - years[pool].astype(float),
        ])
        v = X @ beta
        p = np.exp(v - v.max())
        c = np.cumsum(p)
        for u in g.random(T):
            j = min(int(np.searchsorted(c, u * c[-1], side="right")), pool.size - 1)
            citations.append((ids[i], ids[int(pool[j])]))
        if n_cohort > 1 and g.random() < internal_rate:
            peer = n_prior + int(g.integers(0, n_cohort - 1))
            peer += peer >= i
            citations.append((ids[i], ids[peer]))
    return PatentCorpus(patents, citations)
