import csv
import io
import math
import os
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from persona_bench.utils.errors import InvalidArgumentError, ReportError
from persona_bench.utils.logger import logger
from persona_bench.workers.conjoint import N_TERMS, RegressionFit
from persona_bench.workers.lexicon import MeasureSet, Observation
from persona_bench.workers.persona import enumerate_personas

COMPACT_GROUPS: Dict[str, List[str]] = {
    "Authority": ["clout", "authentic", "ppron", "certitude", "allnone", "assent"],
    "Attitude": ["tone", "affect", "tone_pos", "tone_neg", "emo_anx"],
    "Reasoning": ["cognition", "analytic", "authentic", "quantity", "number", "emotion", "affect"],
}
# main-effect coefficient of each trait group
GROUP_TERMS = {"Attitude": 1, "Authority": 2, "Reasoning": 3}
LAYOUT_NAMES = ("default", "compact")
FORMATS = ("md", "txt", "csv")


def star(p: float, thresholds: Sequence[float] = (0.05, 0.01)) -> str:
    if not 0 < p <= 1:
        raise InvalidArgumentError(f"p-value must lie in (0, 1], got {p}")
    return "*" * sum(1 for threshold in thresholds if p < threshold)


class ReportLayout(BaseModel):
    groups: Dict[str, List[str]]
    thresholds: Tuple[float, ...] = (0.05, 0.01)
    # coefficients with p at or above this are shown as "-"
    suppress_at: float = 0.05

    @field_validator("thresholds")
    @classmethod
    def _strictly_decreasing(cls, value: Tuple[float, ...]) -> Tuple[float, ...]:
        if not value or any(b >= a for a, b in zip(value, value[1:])):
            raise ValueError("star thresholds must be strictly decreasing")
        return value

    @model_validator(mode="after")
    def _has_rows(self) -> "ReportLayout":
        if not any(self.groups.values()):
            raise ValueError("layout has no rows")
        return self

    @property
    def rows(self) -> List[Tuple[str, str]]:
        return [(group, name) for group, names in self.groups.items() for name in names]

    @classmethod
    def from_measures(cls, measures: MeasureSet) -> "ReportLayout":
        return cls(groups={group: list(names) for group, names in measures.groups.items()})

    @classmethod
    def named(cls, name: str, measures: Optional[MeasureSet] = None) -> "ReportLayout":
        if name == "default":
            return cls.from_measures(measures or MeasureSet.default())
        if name == "compact":
            return cls(groups={group: list(names) for group, names in COMPACT_GROUPS.items()})
        raise InvalidArgumentError(
            f"unknown layout {name!r}, choose from {', '.join(LAYOUT_NAMES)}"
        )


def _models(fits: Sequence[RegressionFit]) -> List[str]:
    return sorted({fit.model_id for fit in fits})


def _index(fits: Sequence[RegressionFit]) -> Dict[Tuple[str, str], RegressionFit]:
    return {(fit.model_id, fit.measure): fit for fit in fits}


def _cell(fit: RegressionFit, layout: ReportLayout) -> List[str]:
    if fit.skipped:
        return ["skipped"] + ["-"] * (N_TERMS - 1)
    cells = [f"{fit.r2:.3f}"]
    for j in range(1, N_TERMS):
        p = fit.p_values[j]
        if p >= layout.suppress_at:
            cells.append("-")
        else:
            cells.append(star(p, layout.thresholds) + f"{fit.coefficients[j]:.3f}")
    return cells


def table_rows(
    fits: Sequence[RegressionFit], layout: ReportLayout
) -> Tuple[List[str], List[List[str]]]:
    models = _models(fits)
    if not models:
        raise ReportError("no fits to report")
    index = _index(fits)
    header = ["Dimension", "Measure"]
    for model_id in models:
        header += [f"{model_id} R2"] + [f"{model_id} b{j}" for j in range(1, N_TERMS)]
    rows = []
    for group, name in layout.rows:
        row = [group, name]
        for model_id in models:
            fit = index.get((model_id, name))
            if fit is None:
                raise ReportError(f"no fit for measure {name} under model {model_id}")
            row += _cell(fit, layout)
        rows.append(row)
    return header, rows


def render_table(
    fits: Sequence[RegressionFit], layout: ReportLayout, fmt: str = "md"
) -> str:
    if fmt == "csv":
        return render_csv(fits, layout)
    if fmt not in FORMATS:
        raise InvalidArgumentError(f"unknown format {fmt!r}, choose from {', '.join(FORMATS)}")
    header, rows = table_rows(fits, layout)
    widths = [max(len(row[i]) for row in [header] + rows) for i in range(len(header))]

    def line(cells: List[str]) -> str:
        padded = [
            cell.ljust(width) if i < 2 else cell.rjust(width)
            for i, (cell, width) in enumerate(zip(cells, widths))
        ]
        if fmt == "md":
            return "| " + " | ".join(padded) + " |"
        return "  ".join(padded).rstrip()

    lines = [line(header)]
    if fmt == "md":
        lines.append(
            "| "
            + " | ".join(
                "-" * width if i < 2 else "-" * (width - 1) + ":"
                for i, width in enumerate(widths)
            )
            + " |"
        )
    else:
        lines.append("  ".join("-" * width for width in widths))
    lines += [line(row) for row in rows]
    return "\n".join(lines) + "\n"


CSV_COLUMNS = (
    ["dimension", "measure", "model", "n", "r2"]
    + [f"b{j}" for j in range(1, N_TERMS)]
    + [f"p{j}" for j in range(1, N_TERMS)]
    + ["skipped_reason"]
)


def render_csv(fits: Sequence[RegressionFit], layout: ReportLayout) -> str:
    """Unrounded values for every rendered cell, one line per (row, model)."""
    models = _models(fits)
    if not models:
        raise ReportError("no fits to report")
    index = _index(fits)
    output = io.StringIO()
    writer = csv.writer(output, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for group, name in layout.rows:
        for model_id in models:
            fit = index.get((model_id, name))
            if fit is None:
                raise ReportError(f"no fit for measure {name} under model {model_id}")
            if fit.skipped:
                values = [""] * (1 + 2 * (N_TERMS - 1))
            else:
                values = (
                    [repr(fit.r2)]
                    + [repr(b) for b in fit.coefficients[1:]]
                    + [repr(p) for p in fit.p_values[1:]]
                )
            writer.writerow([group, name, model_id, fit.n] + values + [fit.skipped_reason])
    return output.getvalue()


def _significant(fit: RegressionFit, alpha: float) -> bool:
    return bool(fit.significant_terms(alpha))


def distinguishing_count(
    fits: Sequence[RegressionFit],
    measures: Optional[Sequence[str]] = None,
    alpha: float = 0.05,
) -> Dict[str, int]:
    """Per model, distinct measures with any significant coefficient among b1..b7."""
    counts: Dict[str, Set[str]] = {model_id: set() for model_id in _models(fits)}
    for fit in fits:
        if measures is not None and fit.measure not in measures:
            continue
        if _significant(fit, alpha):
            counts[fit.model_id].add(fit.measure)
    return {model_id: len(names) for model_id, names in counts.items()}


def distinguishing_union(
    fits: Sequence[RegressionFit],
    measures: Optional[Sequence[str]] = None,
    alpha: float = 0.05,
) -> List[str]:
    return sorted(
        {
            fit.measure
            for fit in fits
            if (measures is None or fit.measure in measures) and _significant(fit, alpha)
        }
    )


def dimension_hits(
    fits: Sequence[RegressionFit], layout: ReportLayout, alpha: float = 0.05
) -> Dict[str, Dict[str, List[str]]]:
    """
    Per model and trait group, the group's measures whose main effect of that
    trait is significant. Groups that are not a trait are left out.
    """
    index = _index(fits)
    hits: Dict[str, Dict[str, List[str]]] = {}
    for model_id in _models(fits):
        hits[model_id] = {}
        for group, names in layout.groups.items():
            term = GROUP_TERMS.get(group)
            if term is None:
                continue
            hits[model_id][group] = [
                name
                for name in names
                if (model_id, name) in index
                and term in index[(model_id, name)].significant_terms(alpha)
            ]
    return hits


def render_summary(
    fits: Sequence[RegressionFit], layout: ReportLayout, alpha: float = 0.05
) -> str:
    names = [name for _, name in layout.rows]
    counts = distinguishing_count(fits, names, alpha)
    union = distinguishing_union(fits, names, alpha)
    distinct = len(set(names))
    lines = [f"Distinguishing measures (any of b1..b7 with p < {alpha:g}):"]
    lines += [f"- {model_id}: {count} of {distinct}" for model_id, count in counts.items()]
    lines.append(f"- any model: {len(union)} of {distinct} ({', '.join(union) or 'none'})")
    for model_id, groups in dimension_hits(fits, layout, alpha).items():
        for group, hit in groups.items():
            lines.append(f"- {model_id} {group} main effect: {', '.join(hit) or 'none'}")
    skipped = [fit for fit in fits if fit.skipped]
    if skipped:
        lines.append("")
        lines.append("Skipped fits:")
        lines += [f"- {fit.model_id}/{fit.measure}: {fit.skipped_reason}" for fit in skipped]
    return "\n".join(lines) + "\n"


class PersonaMeans(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    model_id: str
    persona_id: str
    n: int
    means: Dict[str, float]


def persona_means(
    observations: Sequence[Observation], measures: Sequence[str]
) -> List[PersonaMeans]:
    order = {spec.id: i for i, spec in enumerate(enumerate_personas("order"))}
    grouped: Dict[Tuple[str, str], List[Observation]] = {}
    for observation in observations:
        grouped.setdefault((observation.model_id, observation.persona_id), []).append(observation)
    result = []
    for (model_id, persona_id), group in sorted(
        grouped.items(), key=lambda item: (item[0][0], order.get(item[0][1], len(order)))
    ):
        result.append(
            PersonaMeans(
                model_id=model_id,
                persona_id=persona_id,
                n=len(group),
                means={
                    name: float(np.mean([o.profile.value(name) for o in group]))
                    for name in measures
                },
            )
        )
    return result


def write_persona_means(path: str, rows: Sequence[PersonaMeans], measures: Sequence[str]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, mode="w", newline="", encoding="utf-8") as file:
        writer = csv.writer(file)
        writer.writerow(["model_id", "persona_id", "n"] + list(measures))
        for row in rows:
            writer.writerow(
                [row.model_id, row.persona_id, row.n]
                + [f"{row.means[name]:.3f}" if math.isfinite(row.means[name]) else "" for name in measures]
            )
    logger.info(f"persona means for {len(rows)} persona(s) written to {path}")
