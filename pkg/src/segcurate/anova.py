"""Full factorial designs and their analysis of variance.

Only balanced designs are handled: every cell of the cross product of the
non-replicate factors must hold the same number of runs. Under that
constraint the sums of squares of all effect terms are orthogonal and the
Type I/II/III distinction disappears.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .special import f_pvalue

FACTOR_KINDS = ("design", "nuisance", "replicate")
OUTCOME_COLUMN = "jaccard"
DEFAULT_MAX_ORDER = 3
DEFAULT_REPLICATES = 5


class DesignError(ValueError):
    """Run table does not fit the declared design."""


@dataclass(frozen=True)
class FactorSpec:
    name: str
    levels: tuple[str, ...]
    kind: str = "design"

    def __post_init__(self):
        object.__setattr__(self, "levels", tuple(str(v) for v in self.levels))
        if not self.levels:
            raise DesignError(f"factor {self.name!r} has no levels")
        if len(set(self.levels)) != len(self.levels):
            raise DesignError(f"factor {self.name!r} has repeated levels")
        if self.kind not in FACTOR_KINDS:
            raise DesignError(f"factor {self.name!r}: kind must be one of {FACTOR_KINDS}")


_CONDITIONINGS = ("none", "opening", "convexhull")

STUDY_FACTORS = (
    FactorSpec("training_set", ("all", "best"), "design"),
    FactorSpec("test_set", ("isic", "ph2", "dermofit"), "nuisance"),
    FactorSpec("train_conditioning", _CONDITIONINGS, "design"),
    FactorSpec("test_conditioning", _CONDITIONINGS, "design"),
    FactorSpec("model", ("linknet", "deeplab"), "design"),
)


def replicate_factor(replicates: int, name: str = "replicate") -> FactorSpec:
    if replicates < 1:
        raise DesignError(f"replicates must be >= 1, got {replicates}")
    return FactorSpec(name, tuple(str(i) for i in range(1, replicates + 1)), "replicate")


def with_replicates(factors: Sequence[FactorSpec], replicates: int) -> list[FactorSpec]:
    """``factors`` with any replicate factor replaced by one of ``replicates`` levels."""
    rep_names = [f.name for f in factors if f.kind == "replicate"]
    if len(rep_names) > 1:
        raise DesignError("a design has exactly one replicate factor")
    base = [f for f in factors if f.kind != "replicate"]
    return base + [replicate_factor(replicates, rep_names[0] if rep_names else "replicate")]


def study_factors(replicates: int = DEFAULT_REPLICATES) -> list[FactorSpec]:
    return with_replicates(STUDY_FACTORS, replicates)


def _split_factors(factors: Sequence[FactorSpec]) -> tuple[list[FactorSpec], FactorSpec | None]:
    treatment = [f for f in factors if f.kind != "replicate"]
    reps = [f for f in factors if f.kind == "replicate"]
    if len(reps) > 1:
        raise DesignError("a design has exactly one replicate factor")
    names = [f.name for f in factors]
    if len(set(names)) != len(names):
        raise DesignError("factor names must be unique")
    if not treatment:
        raise DesignError("need at least one non-replicate factor")
    return treatment, (reps[0] if reps else None)


@dataclass
class RunRecord:
    assignment: dict[str, str]
    outcome: float | None = None


def build_design(factors: Sequence[FactorSpec], replicates: int) -> list[RunRecord]:
    """Every combination of levels, each repeated ``replicates`` times.

    Rows follow the factor order given, the replicate index varying fastest.
    """
    full = with_replicates(factors, replicates)
    _split_factors(full)
    names = [f.name for f in full]
    return [
        RunRecord(dict(zip(names, combo)))
        for combo in itertools.product(*(f.levels for f in full))
    ]


# ---------------------------------------------------------------- analysis


@dataclass
class AnovaRow:
    term: tuple[str, ...]
    ss: float
    df: int
    ms: float | None = None
    f: float | None = None
    p: float | None = None
    eta_sq: float | None = None

    @property
    def name(self) -> str:
        return ":".join(self.term)


@dataclass
class AnovaTable:
    factors: list[FactorSpec]
    terms: list[AnovaRow]
    residual: AnovaRow
    total: AnovaRow
    replicates: int
    max_order: int

    def __getitem__(self, term) -> AnovaRow:
        key = tuple(term.split(":")) if isinstance(term, str) else tuple(term)
        for row in self.terms:
            if row.term == key or (len(row.term) == len(key) and set(row.term) == set(key)):
                return row
        raise KeyError(term)

    def rows(self) -> list[AnovaRow]:
        return [*self.terms, self.residual, self.total]

    def to_records(self) -> list[dict]:
        return [
            {"term": r.name, "ss": r.ss, "df": r.df, "ms": r.ms, "f": r.f, "p": r.p, "eta_sq": r.eta_sq}
            for r in self.rows()
        ]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(("term", "ss", "df", "ms", "f", "p", "eta_sq"))
        for rec in self.to_records():
            writer.writerow([_fmt(rec[k]) for k in ("term", "ss", "df", "ms", "f", "p", "eta_sq")])
        return buf.getvalue()

    def to_json(self) -> str:
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return str(v)
            return v

        payload = {
            "factors": [{"name": f.name, "kind": f.kind, "levels": list(f.levels)} for f in self.factors],
            "replicates": self.replicates,
            "max_order": self.max_order,
            "rows": [{k: clean(v) for k, v in rec.items()} for rec in self.to_records()],
        }
        return json.dumps(payload, indent=2) + "\n"


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _cell_array(runs: Sequence[RunRecord], treatment: Sequence[FactorSpec]) -> np.ndarray:
    """Outcomes as an array ``(L_1, ..., L_k, r)``; raises unless balanced."""
    index = [{lvl: i for i, lvl in enumerate(f.levels)} for f in treatment]
    cells: dict[tuple[int, ...], list[float]] = {}
    for n, run in enumerate(runs):
        if run.outcome is None:
            raise DesignError(f"run {n} has no outcome")
        y = float(run.outcome)
        if not math.isfinite(y):
            raise DesignError(f"run {n} has non-finite outcome {run.outcome!r}")
        key = []
        for f, idx in zip(treatment, index):
            if f.name not in run.assignment:
                raise DesignError(f"run {n} has no level for factor {f.name!r}")
            lvl = str(run.assignment[f.name])
            if lvl not in idx:
                raise DesignError(f"run {n}: unknown level {lvl!r} for factor {f.name!r}")
            key.append(idx[lvl])
        cells.setdefault(tuple(key), []).append(y)

    shape = tuple(len(f.levels) for f in treatment)
    n_cells = math.prod(shape)
    counts = {len(v) for v in cells.values()}
    if len(cells) != n_cells or len(counts) != 1:
        raise DesignError(
            f"unbalanced design: {len(cells)} of {n_cells} cells filled, "
            f"replicate counts {sorted(counts)}"
        )
    r = counts.pop()
    y = np.empty(shape + (r,))
    for key, values in cells.items():
        # sorted within cell: sums do not depend on run order
        y[key] = sorted(values)
    return y


def anova_table(
    runs: Sequence[RunRecord],
    factors: Sequence[FactorSpec],
    max_order: int = DEFAULT_MAX_ORDER,
) -> AnovaTable:
    """Sums of squares, F tests and eta squared for all terms up to ``max_order``.

    The effect of a term is obtained from marginal means by inclusion and
    exclusion over its sub-terms; its sum of squares is the squared effect
    summed over all runs. Whatever the included terms leave over, higher
    interactions and replicate noise, is pooled into the residual.
    """
    treatment, _ = _split_factors(factors)
    if max_order < 1:
        raise DesignError("max_order must be >= 1")
    y = _cell_array(runs, treatment)
    k = len(treatment)
    r = y.shape[-1]
    n = y.size
    levels = y.shape[:-1]

    # shift-invariant; anchoring at an observed value makes constant data exactly zero
    y = y - y.flat[0]
    grand = y.mean()
    ss_total = float(np.sum((y - grand) ** 2))

    means: dict[tuple[int, ...], np.ndarray] = {}

    def marginal(axes: tuple[int, ...]) -> np.ndarray:
        if axes not in means:
            drop = tuple(i for i in range(k + 1) if i not in axes)
            means[axes] = y.mean(axis=drop, keepdims=True)
        return means[axes]

    terms = []
    for order in range(1, min(max_order, k) + 1):
        for axes in itertools.combinations(range(k), order):
            effect = 0.0
            for sub_order in range(order + 1):
                sign = -1.0 if (order - sub_order) % 2 else 1.0
                for sub in itertools.combinations(axes, sub_order):
                    effect = effect + sign * marginal(sub)
            cells = math.prod(levels[i] for i in axes)
            ss = float(np.sum(np.asarray(effect) ** 2)) * (n / cells)
            df = math.prod(levels[i] - 1 for i in axes)
            terms.append(AnovaRow(tuple(treatment[i].name for i in axes), ss, df))

    df_total = n - 1
    df_resid = df_total - sum(t.df for t in terms)
    ss_resid = ss_total - math.fsum(t.ss for t in terms)
    if ss_resid < 0 and abs(ss_resid) <= 1e-9 * max(ss_total, 1e-300):
        ss_resid = 0.0
    ms_resid = ss_resid / df_resid if df_resid > 0 else None

    for t in terms:
        t.ms = t.ss / t.df if t.df > 0 else None
        t.eta_sq = t.ss / ss_total if ss_total > 0 else 0.0
        if ss_total <= 0 or ms_resid is None or t.ms is None:
            continue
        if ms_resid > 0:
            t.f = t.ms / ms_resid
            t.p = f_pvalue(t.f, t.df, df_resid)
        elif t.ms > 0:
            t.f, t.p = math.inf, 0.0

    residual = AnovaRow(
        ("Residual",), ss_resid, df_resid, ms_resid,
        eta_sq=ss_resid / ss_total if ss_total > 0 else 0.0,
    )
    total = AnovaRow(("Total",), ss_total, df_total)
    return AnovaTable(list(factors), terms, residual, total, r, max_order)


def designable_shares(table: AnovaTable, design_factor_names: Iterable[str]) -> dict[str, float]:
    """Each design-only term's fraction of the design-only sum of squares.

    A term counts when every factor in it is a design factor, interactions
    among design factors included.
    """
    design = set(design_factor_names)
    known = {f.name for f in table.factors}
    unknown = design - known
    if unknown:
        raise DesignError(f"unknown factors: {sorted(unknown)}")
    chosen = [t for t in table.terms if set(t.term) <= design]
    if not chosen:
        raise DesignError("no term is made only of design factors")
    total = math.fsum(t.ss for t in chosen)
    if total <= 0:
        raise DesignError("design terms explain no variation")
    return {t.name: t.ss / total for t in chosen}


def cell_means(
    runs: Sequence[RunRecord], factor_names: Sequence[str]
) -> list[tuple[tuple[str, ...], float, int]]:
    """Mean outcome per combination of ``factor_names``; interaction-plot data."""
    groups: dict[tuple[str, ...], list[float]] = {}
    for run in runs:
        if run.outcome is None:
            raise DesignError("cell means need outcomes")
        key = tuple(str(run.assignment[name]) for name in factor_names)
        groups.setdefault(key, []).append(float(run.outcome))
    return [(key, math.fsum(v) / len(v), len(v)) for key, v in sorted(groups.items())]


# ---------------------------------------------------------------- run tables


def _factor_block(factors: Sequence[FactorSpec]) -> str:
    return "".join(f"# factor {f.name} {f.kind} {'|'.join(f.levels)}\n" for f in factors)


def runs_to_csv(runs: Sequence[RunRecord], factors: Sequence[FactorSpec], header_block: bool = True) -> str:
    names = [f.name for f in factors]
    buf = io.StringIO()
    if header_block:
        buf.write(_factor_block(factors))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(names + [OUTCOME_COLUMN])
    for run in runs:
        outcome = "" if run.outcome is None else repr(float(run.outcome))
        writer.writerow([run.assignment[n] for n in names] + [outcome])
    return buf.getvalue()


def _parse_factor_block(lines: list[str], path) -> list[FactorSpec]:
    factors = []
    for line in lines:
        parts = line.lstrip("#").split()
        if not parts or parts[0] != "factor":
            continue
        if len(parts) != 4:
            raise DesignError(f"{path}: bad factor declaration {line.strip()!r}")
        _, name, kind, levels = parts
        factors.append(FactorSpec(name, tuple(levels.split("|")), kind))
    return factors


def load_runs(
    path: str | os.PathLike,
    factors: Sequence[FactorSpec] | None = None,
) -> tuple[list[RunRecord], list[FactorSpec]]:
    """Read an outcome table and check every level against the factor specs.

    Factor specs come from ``factors`` if given, else from ``# factor`` lines
    at the top of the file, else the five study factors with 5 replicates.
    Outcomes must be present and numeric, in ``[0, 1]``.
    """
    path = Path(path)
    text = path.read_text(encoding="utf-8-sig")
    lines = text.splitlines(keepends=True)
    comments = list(itertools.takewhile(lambda s: s.startswith("#"), lines))
    body = lines[len(comments):]
    if factors is None:
        factors = _parse_factor_block(comments, path) or study_factors()
    _split_factors(factors)

    reader = csv.DictReader(io.StringIO("".join(body)))
    columns = reader.fieldnames or []
    for name in [f.name for f in factors] + [OUTCOME_COLUMN]:
        if name not in columns:
            raise DesignError(f"{path}: missing column {name!r}")

    runs = []
    first = len(comments) + 2
    for lineno, row in enumerate(reader, start=first):
        assignment = {}
        for f in factors:
            value = (row[f.name] or "").strip()
            if value not in f.levels:
                raise DesignError(
                    f"{path}:{lineno}: column {f.name!r} has unknown level {value!r} "
                    f"(expected one of {'|'.join(f.levels)})"
                )
            assignment[f.name] = value
        raw = (row[OUTCOME_COLUMN] or "").strip()
        if not raw:
            raise DesignError(f"{path}:{lineno}: column {OUTCOME_COLUMN!r} is empty")
        try:
            outcome = float(raw)
        except ValueError:
            raise DesignError(f"{path}:{lineno}: column {OUTCOME_COLUMN!r} is not numeric: {raw!r}") from None
        if not 0.0 <= outcome <= 1.0:
            raise DesignError(f"{path}:{lineno}: {OUTCOME_COLUMN} {outcome} outside [0, 1]")
        runs.append(RunRecord(assignment, outcome))
    return runs, list(factors)


def factor_kinds(factors: Sequence[FactorSpec]) -> Mapping[str, list[str]]:
    out: dict[str, list[str]] = {k: [] for k in FACTOR_KINDS}
    for f in factors:
        out[f.kind].append(f.name)
    return out
