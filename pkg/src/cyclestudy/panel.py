"""County-by-period panels: data model, CSV ingestion, and derived columns.

A :class:`PanelDataset` wraps a pandas frame with one row per county and
period.  Rows are kept sorted by ``(county_id, period)`` so every estimator
sees the same row order no matter how the input was arranged.
"""

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping, Optional, Sequence

import numpy as np
import pandas as pd

ANNUAL = "annual"
MONTHLY = "monthly"

OUTCOME_COLUMNS = ("admissions_per_1000", "months_per_1000")
CONTROL_COLUMNS = ("ctrl_white_share", "ctrl_income_pc")
CSV_COLUMNS = (
    "county_id",
    "state_id",
    "district_id",
    "year",
    "month",
    "population",
    "admissions_per_1000",
    "months_per_1000",
    "election_year",
    "next_election_year",
    "ctrl_white_share",
    "ctrl_income_pc",
)
LIFE_SENTENCE_MONTHS = 1200
DEFAULT_ELECTION_MONTH = 11
COHORT_ANCHOR_YEAR = 1986


class PanelValidationError(ValueError):
    """Raised with every validation problem found, each tagged with its row."""

    def __init__(self, problems):
        self.problems = list(problems)
        lines = [f"row {row}: {msg}" if row is not None else msg for row, msg in self.problems]
        super().__init__("invalid panel:\n  " + "\n  ".join(lines))


@dataclass(frozen=True)
class PanelObservation:
    county_id: str
    state_id: str
    district_id: str
    period: int
    outcomes: Mapping[str, float]
    population: float
    controls: Mapping[str, float] = field(default_factory=dict)


@dataclass(frozen=True)
class ElectionCalendar:
    """Election periods for one county, spaced exactly ``term`` periods apart."""

    elections: tuple
    term: int = 4

    def __post_init__(self):
        if self.term <= 0 or self.term % 2:
            raise ValueError(f"term must be a positive even number of periods, got {self.term}")
        el = tuple(int(e) for e in self.elections)
        if not el:
            raise ValueError("calendar needs at least one election")
        diffs = np.diff(el)
        if np.any(diffs != self.term):
            raise ValueError(f"consecutive elections must differ by {self.term}: {el}")
        object.__setattr__(self, "elections", el)

    @property
    def half(self) -> int:
        return self.term // 2

    @classmethod
    def covering(cls, anchor: int, term: int, lo: int, hi: int) -> "ElectionCalendar":
        """Arithmetic calendar through ``anchor`` covering periods ``[lo, hi]``."""
        half = term // 2
        first = anchor + math.ceil((lo - half - anchor) / term) * term
        last = anchor + math.floor((hi + half - anchor) / term) * term
        return cls(tuple(range(first, last + 1, term)), term)

    def covers(self, period: int) -> bool:
        return self.elections[0] - self.half <= period <= self.elections[-1] + self.half

    def relative_time(self, period: int) -> int:
        """Periods from the nearest election, in ``[-T, T-1]``.

        A period equidistant from two elections belongs to the upcoming one
        (``k = -T``); ``+T`` past the last election is the same point.
        """
        period = int(period)
        if not self.covers(period):
            raise ValueError(
                f"period {period} is more than {self.half} periods from every election "
                f"{self.elections}"
            )
        return int(self.relative_times(np.array([period]))[0])

    def relative_times(self, periods) -> np.ndarray:
        periods = np.asarray(periods, dtype=np.int64)
        T = self.half
        return (periods - self.elections[0] + T) % self.term - T


def relative_time(period: int, calendar: ElectionCalendar) -> int:
    return calendar.relative_time(period)


def code_sentence_months(raw_months, life_flag: bool = False) -> float:
    """Sentence length in months with life and death sentences coded as 1200."""
    if life_flag:
        return float(LIFE_SENTENCE_MONTHS)
    if raw_months is None or raw_months < 0:
        raise ValueError(f"negative or missing sentence length {raw_months!r} without life flag")
    return raw_months


def month_period(year, month):
    """Monthly period index ``year * 12 + (month - 1)``."""
    return np.asarray(year) * 12 + (np.asarray(month) - 1)


def cohort_label(calendar: ElectionCalendar, frequency: str = ANNUAL, anchor: int = COHORT_ANCHOR_YEAR) -> int:
    """Election year of the calendar's phase, folded into ``[anchor, anchor + term_years)``."""
    if frequency == MONTHLY:
        year = calendar.elections[0] // 12
        years = calendar.term // 12
    else:
        year = calendar.elections[0]
        years = calendar.term
    return int(anchor + (year - anchor) % years)


class PanelDataset:
    """Validated county-by-period panel.

    Treat instances as read-only; transforms return new datasets.
    """

    def __init__(
        self,
        frame: pd.DataFrame,
        calendars: Mapping[str, ElectionCalendar],
        frequency: str = ANNUAL,
        outcomes: Optional[Sequence[str]] = None,
        controls: Optional[Sequence[str]] = None,
    ):
        if frequency not in (ANNUAL, MONTHLY):
            raise ValueError(f"frequency must be annual or monthly, got {frequency!r}")
        if outcomes is None:
            outcomes = [c for c in OUTCOME_COLUMNS if c in frame.columns]
        if controls is None:
            controls = [c for c in CONTROL_COLUMNS if c in frame.columns]
        self.frequency = frequency
        self.outcomes = tuple(outcomes)
        self.controls = tuple(controls)
        self.calendars = dict(calendars)
        self.frame = self._validate(frame)

    def _validate(self, frame: pd.DataFrame) -> pd.DataFrame:
        problems = []
        need = ["county_id", "state_id", "district_id", "period", "population", *self.outcomes]
        missing = [c for c in need if c not in frame.columns]
        if missing:
            raise PanelValidationError([(None, f"missing column {c!r}") for c in missing])
        df = frame.copy()
        for c in ("county_id", "state_id", "district_id"):
            df[c] = df[c].astype(str)
            for i in np.flatnonzero(df[c].str.len().to_numpy() == 0):
                problems.append((int(i) + 1, f"empty {c}"))
        df["period"] = df["period"].astype(np.int64)
        pop = df["population"].to_numpy(dtype=float)
        for i in np.flatnonzero(~(pop > 0)):
            problems.append((int(i) + 1, "population must be > 0"))
        for c in self.outcomes:
            vals = df[c].to_numpy(dtype=float)
            for i in np.flatnonzero(vals < 0):
                problems.append((int(i) + 1, f"outcome {c} must be >= 0"))
        dup = df.duplicated(["county_id", "period"], keep="first").to_numpy()
        for i in np.flatnonzero(dup):
            problems.append((int(i) + 1, "duplicate (county_id, period) key"))

        unknown = sorted(set(df["county_id"]) - set(self.calendars))
        for c in unknown:
            problems.append((None, f"no election calendar for county {c!r}"))
        if problems:
            raise PanelValidationError(problems)

        if "year" not in df.columns:
            df["year"] = df["period"] // 12 if self.frequency == MONTHLY else df["period"]
        df = df.sort_values(["county_id", "period"], kind="mergesort").reset_index(drop=True)

        cal = [self.calendars[c] for c in df["county_id"].unique()]
        codes = pd.factorize(df["county_id"], sort=False)[0]
        first = np.array([c.elections[0] for c in cal], dtype=np.int64)[codes]
        last = np.array([c.elections[-1] for c in cal], dtype=np.int64)[codes]
        term = np.array([c.term for c in cal], dtype=np.int64)[codes]
        half = term // 2
        period = df["period"].to_numpy()
        uncovered = (period < first - half) | (period > last + half)
        if uncovered.any():
            bad = [
                (None, f"county {df['county_id'].iat[i]!r} period {period[i]} is not within "
                       f"half a term of any election")
                for i in np.flatnonzero(uncovered)[:20]
            ]
            raise PanelValidationError(bad)
        df["rel_time"] = (period - first + half) % term - half
        labels = np.array([cohort_label(c, self.frequency) for c in cal], dtype=np.int64)
        df["cohort"] = labels[codes]
        return df

    def __len__(self):
        return len(self.frame)

    def __eq__(self, other):
        if not isinstance(other, PanelDataset):
            return NotImplemented
        if (self.frequency, self.outcomes, self.controls) != (other.frequency, other.outcomes, other.controls):
            return False
        if self.calendars != other.calendars:
            return False
        cols = self.columns()
        return self.frame[cols].equals(other.frame[cols])

    __hash__ = None

    def columns(self):
        cols = ["county_id", "state_id", "district_id", "period", "year"]
        if "month" in self.frame.columns:
            cols.append("month")
        return cols + ["population", *self.outcomes, *self.controls]

    @property
    def period_range(self):
        p = self.frame["period"]
        return int(p.min()), int(p.max())

    def observations(self) -> Iterator[PanelObservation]:
        df = self.frame
        for row in df.itertuples(index=False):
            r = row._asdict()
            yield PanelObservation(
                county_id=r["county_id"],
                state_id=r["state_id"],
                district_id=r["district_id"],
                period=int(r["period"]),
                outcomes={c: r[c] for c in self.outcomes},
                population=r["population"],
                controls={c: r[c] for c in self.controls},
            )

    def with_outcome(self, name: str, values) -> "PanelDataset":
        df = self.frame.copy()
        df[name] = np.asarray(values, dtype=float)
        outcomes = self.outcomes if name in self.outcomes else self.outcomes + (name,)
        return self._replace(df, outcomes=outcomes)

    def subset(self, mask) -> "PanelDataset":
        df = self.frame.loc[np.asarray(mask, dtype=bool)]
        cal = {c: self.calendars[c] for c in df["county_id"].unique()}
        return self._replace(df, calendars=cal)

    def _replace(self, frame, calendars=None, outcomes=None, controls=None):
        return PanelDataset(
            frame.drop(columns=["rel_time", "cohort"], errors="ignore"),
            self.calendars if calendars is None else calendars,
            self.frequency,
            self.outcomes if outcomes is None else outcomes,
            self.controls if controls is None else controls,
        )

    def relative_time(self) -> np.ndarray:
        return self.frame["rel_time"].to_numpy()

    def cohorts(self) -> np.ndarray:
        return self.frame["cohort"].to_numpy()

    def term(self) -> int:
        terms = {c.term for c in self.calendars.values()}
        if len(terms) != 1:
            raise ValueError(f"mixed term lengths in panel: {sorted(terms)}")
        return terms.pop()


def apply_log1p(dataset: PanelDataset, outcome: str, name: Optional[str] = None) -> PanelDataset:
    """Add ``log(1 + outcome)`` as a new outcome column; zeros map to zero."""
    if outcome not in dataset.frame.columns:
        raise KeyError(f"unknown outcome {outcome!r}")
    x = dataset.frame[outcome].to_numpy(dtype=float)
    if np.any(x < 0):
        raise ValueError(f"outcome {outcome!r} has negative values")
    return dataset.with_outcome(name or f"log1p_{outcome}", np.log1p(x))


# --- CSV ------------------------------------------------------------------


def _to_float(text: str) -> float:
    try:
        x = float(text)
    except ValueError:
        return float("nan")
    return x if math.isfinite(x) else float("nan")


def _parse_numeric(raw: pd.Series, col: str, problems, required: bool, integer: bool = False):
    text = raw.str.strip()
    empty = text == ""
    # pandas' fast parser can be off by one ulp; float() rounds correctly
    vals = pd.Series([_to_float(t) for t in text], index=raw.index, dtype=float)
    vals[empty] = np.nan
    bad = vals.isna() & ~empty
    for i in np.flatnonzero(bad.to_numpy()):
        problems.append((int(i) + 1, f"non-numeric value {raw.iat[i]!r} in column {col!r}"))
    if required:
        for i in np.flatnonzero(empty.to_numpy()):
            problems.append((int(i) + 1, f"missing value in column {col!r}"))
    vals = vals.to_numpy(dtype=float)
    if integer:
        frac = np.isfinite(vals) & (vals != np.round(vals))
        for i in np.flatnonzero(frac):
            problems.append((int(i) + 1, f"column {col!r} must be an integer"))
    return vals


def load_csv(
    path,
    schema: Optional[Mapping[str, str]] = None,
    term_years: int = 4,
    election_month: int = DEFAULT_ELECTION_MONTH,
    outcomes: Sequence[str] = OUTCOME_COLUMNS,
    controls: Sequence[str] = CONTROL_COLUMNS,
) -> PanelDataset:
    """Read and validate a panel CSV.

    ``schema`` maps canonical column names to the names used in the file.
    Every problem found is collected into one :class:`PanelValidationError`
    whose entries carry 1-based data row numbers.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)
    schema = dict(schema or {})
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    raw = raw.rename(columns={v: k for k, v in schema.items()})

    problems = []
    for c in ("county_id", "state_id", "district_id", "year", "population"):
        if c not in raw.columns:
            problems.append((None, f"missing column {c!r}"))
    present_outcomes = [c for c in outcomes if c in raw.columns]
    if not present_outcomes:
        problems.append((None, f"no outcome column among {list(outcomes)}"))
    has_flag = "election_year" in raw.columns and (raw["election_year"].str.strip() != "").any()
    has_next = "next_election_year" in raw.columns and (raw["next_election_year"].str.strip() != "").any()
    if has_flag and has_next:
        problems.append((None, "both election_year and next_election_year given; use one"))
    elif not (has_flag or has_next):
        problems.append((None, "missing election calendar: need election_year or next_election_year"))
    if problems:
        raise PanelValidationError(problems)

    frame = pd.DataFrame({c: raw[c].str.strip() for c in ("county_id", "state_id", "district_id")})
    year = _parse_numeric(raw["year"], "year", problems, True, integer=True)
    monthly = "month" in raw.columns and (raw["month"].str.strip() != "").any()
    if monthly:
        month = _parse_numeric(raw["month"], "month", problems, True, integer=True)
        for i in np.flatnonzero(np.isfinite(month) & ((month < 1) | (month > 12))):
            problems.append((int(i) + 1, "month must be in 1..12"))
    population = _parse_numeric(raw["population"], "population", problems, True)
    for i in np.flatnonzero(np.isfinite(population) & (population <= 0)):
        problems.append((int(i) + 1, "population must be > 0"))
    for c in present_outcomes:
        v = _parse_numeric(raw[c], c, problems, False)
        for i in np.flatnonzero(v < 0):
            problems.append((int(i) + 1, f"outcome {c} must be >= 0"))
        frame[c] = v
    present_controls = [c for c in controls if c in raw.columns]
    for c in present_controls:
        frame[c] = _parse_numeric(raw[c], c, problems, False)
    if has_flag:
        flag = _parse_numeric(raw["election_year"], "election_year", problems, True, integer=True)
        for i in np.flatnonzero(np.isfinite(flag) & ~np.isin(flag, (0, 1))):
            problems.append((int(i) + 1, "election_year must be 0 or 1"))
    else:
        nxt = _parse_numeric(raw["next_election_year"], "next_election_year", problems, True, integer=True)
    if problems:
        raise PanelValidationError(sorted(problems, key=lambda p: (p[0] or 0)))

    frame["year"] = year.astype(np.int64)
    frame["population"] = population
    if monthly:
        frame["month"] = month.astype(np.int64)
        frame["period"] = month_period(frame["year"], frame["month"])
    else:
        frame["period"] = frame["year"]
    dup = frame.duplicated(["county_id", "period"], keep="first").to_numpy()
    for i in np.flatnonzero(dup):
        problems.append((int(i) + 1, "duplicate (county_id, period) key"))
    if problems:
        raise PanelValidationError(problems)

    term = term_years * 12 if monthly else term_years
    calendars = {}
    for county, idx in frame.groupby("county_id", sort=False).indices.items():
        years = frame["year"].to_numpy()[idx]
        if has_flag:
            el_years = np.unique(years[flag[idx] == 1])
            if el_years.size == 0:
                problems.append((int(idx[0]) + 1, f"county {county!r} has no flagged election year"))
                continue
        else:
            el_years = np.unique(nxt[idx].astype(np.int64))
            bad = np.flatnonzero(nxt[idx] < years)
            for i in bad:
                problems.append((int(idx[i]) + 1, "next_election_year precedes the row's year"))
        if np.any(np.diff(el_years) != term_years):
            problems.append((int(idx[0]) + 1, f"county {county!r} elections {el_years.tolist()} "
                                               f"are not spaced {term_years} years apart"))
            continue
        anchor = int(el_years[0]) * 12 + election_month - 1 if monthly else int(el_years[0])
        p = frame["period"].to_numpy()[idx]
        calendars[county] = ElectionCalendar.covering(anchor, term, int(p.min()), int(p.max()))
    if problems:
        raise PanelValidationError(problems)

    return PanelDataset(
        frame,
        calendars,
        MONTHLY if monthly else ANNUAL,
        present_outcomes,
        present_controls,
    )


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def write_csv(dataset: PanelDataset, path) -> Path:
    """Write the panel in the fixed CSV schema; floats use shortest round-trip text.

    The calendar is written through ``next_election_year``.
    """
    path = Path(path)
    df = dataset.frame
    monthly = dataset.frequency == MONTHLY
    extra_outcomes = [c for c in dataset.outcomes if c not in OUTCOME_COLUMNS]
    extra_controls = [c for c in dataset.controls if c not in CONTROL_COLUMNS]
    header = ["county_id", "state_id", "district_id", "year"]
    if monthly:
        header.append("month")
    header.append("population")
    header += [c for c in OUTCOME_COLUMNS if c in dataset.outcomes] + extra_outcomes
    header.append("next_election_year")
    header += [c for c in CONTROL_COLUMNS if c in dataset.controls] + extra_controls

    nxt = np.empty(len(df), dtype=np.int64)
    period = df["period"].to_numpy()
    for county, idx in df.groupby("county_id", sort=False).indices.items():
        el = np.asarray(dataset.calendars[county].elections)
        pos = np.searchsorted(el, period[idx], side="left")
        if np.any(pos >= len(el)):
            cal = dataset.calendars[county]
            el = np.append(el, el[-1] + cal.term)
        nxt[idx] = el[pos]
    if monthly:
        nxt = nxt // 12

    cols = {c: df[c].to_numpy() for c in header if c in df.columns}
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(df)):
            row = []
            for c in header:
                if c == "next_election_year":
                    row.append(str(int(nxt[i])))
                elif c in ("county_id", "state_id", "district_id"):
                    row.append(cols[c][i])
                elif c in ("year", "month"):
                    row.append(str(int(cols[c][i])))
                else:
                    row.append(_fmt(float(cols[c][i])))
            w.writerow(row)
    return path
