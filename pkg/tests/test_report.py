import csv
import io
from typing import Dict, Optional

import pytest

from persona_bench.utils.errors import InvalidArgumentError, ReportError
from persona_bench.workers.conjoint import RegressionFit
from persona_bench.workers.lexicon import CategoryProfile, MeasureSet, Observation
from persona_bench.workers.report import (
    ReportLayout,
    dimension_hits,
    distinguishing_count,
    distinguishing_union,
    persona_means,
    render_summary,
    render_table,
    star,
    table_rows,
    write_persona_means,
)


def make_fit(
    measure: str,
    model_id: str = "gpt",
    r2: float = 0.5,
    significant: Optional[Dict[int, float]] = None,
    coefficient: float = 0.25,
) -> RegressionFit:
    """Fit whose b1..b7 all equal `coefficient`, with p=0.5 unless listed in `significant`."""
    significant = significant or {}
    return RegressionFit(
        measure=measure,
        model_id=model_id,
        n=80,
        df=72,
        coefficients=[1.0] + [coefficient] * 7,
        std_errors=[0.1] * 8,
        t_values=[1.0] * 8,
        p_values=[0.001] + [significant.get(j, 0.5) for j in range(1, 8)],
        r2=r2,
    )


@pytest.mark.parametrize(
    "p, stars",
    [(1.0, ""), (0.05, ""), (0.0499, "*"), (0.01, "*"), (0.0099, "**"), (1e-300, "**")],
)
def test_star_boundaries(p: float, stars: str) -> None:
    assert star(p) == stars


@pytest.mark.parametrize("p", [0.0, -0.1, 1.01])
def test_star_rejects_out_of_range(p: float) -> None:
    with pytest.raises(InvalidArgumentError):
        star(p)


def test_assent_row_cells() -> None:
    fit = make_fit("assent", r2=0.987, significant={2: 0.004}, coefficient=0.211)
    layout = ReportLayout(groups={"Authority": ["assent"]})
    header, rows = table_rows([fit], layout)
    assert header[:4] == ["Dimension", "Measure", "gpt R2", "gpt b1"]
    assert rows[0][:5] == ["Authority", "assent", "0.987", "-", "**0.211"]
    assert rows[0][5:] == ["-"] * 5


def test_all_suppressed_row_keeps_r2() -> None:
    layout = ReportLayout(groups={"Attitude": ["tone"]})
    _, rows = table_rows([make_fit("tone", r2=0.0413)], layout)
    assert rows[0][2] == "0.041"
    assert rows[0][3:] == ["-"] * 7


def test_negative_coefficient_with_one_star() -> None:
    fit = make_fit("tone", significant={1: 0.03}, coefficient=-1.23456)
    _, rows = table_rows([fit], ReportLayout(groups={"Attitude": ["tone"]}))
    assert rows[0][3] == "*-1.235"


def test_missing_fit_is_an_error() -> None:
    layout = ReportLayout(groups={"Attitude": ["tone", "affect"]})
    with pytest.raises(ReportError):
        render_table([make_fit("tone")], layout)
    with pytest.raises(ReportError):
        render_table([make_fit("tone"), make_fit("affect", model_id="other")], layout)


def test_skipped_fit_renders_marker() -> None:
    skipped = RegressionFit(measure="tone", model_id="gpt", n=80, skipped_reason="constant")
    _, rows = table_rows([skipped], ReportLayout(groups={"Attitude": ["tone"]}))
    assert rows[0][2] == "skipped"


def test_markdown_and_text_tables() -> None:
    fits = [make_fit("tone", significant={1: 0.001}), make_fit("tone", model_id="alt")]
    layout = ReportLayout(groups={"Attitude": ["tone"]})
    md = render_table(fits, layout, "md").splitlines()
    assert len(md) == 3
    assert md[0].startswith("| Dimension")
    assert "alt R2" in md[0] and "gpt b7" in md[0]
    assert md[1].startswith("| ---")
    assert "**0.250" in md[2]
    txt = render_table(fits, layout, "txt").splitlines()
    assert txt[0].startswith("Dimension")
    assert "|" not in "".join(txt)
    with pytest.raises(InvalidArgumentError):
        render_table(fits, layout, "html")


def test_csv_export_carries_unrounded_values() -> None:
    fit = make_fit("assent", r2=0.98654, significant={2: 0.004}, coefficient=0.21123)
    text = render_table([fit], ReportLayout(groups={"Authority": ["assent"]}), "csv")
    (row,) = csv.DictReader(io.StringIO(text))
    assert row["dimension"] == "Authority"
    assert float(row["r2"]) == 0.98654
    assert float(row["b2"]) == 0.21123
    assert float(row["p2"]) == 0.004
    assert float(row["p1"]) == 0.5


def test_layouts() -> None:
    default = ReportLayout.named("default")
    assert default.groups == MeasureSet.default().groups
    compact = ReportLayout.named("compact")
    assert ("Authority", "assent") in compact.rows
    assert compact.rows.count(("Reasoning", "affect")) == 1
    with pytest.raises(InvalidArgumentError):
        ReportLayout.named("wide")
    with pytest.raises(ValueError):
        ReportLayout(groups={"A": ["x"]}, thresholds=(0.01, 0.05))


def test_distinguishing_counts_deduplicate_measures() -> None:
    fits = [
        make_fit("tone", significant={1: 0.01}),
        make_fit("affect", significant={7: 0.049}),
        make_fit("clout", significant={2: 0.001}),
        make_fit("number", significant={3: 0.02}),
        make_fit("ppron"),
        make_fit("tone", model_id="quiet"),
        make_fit("affect", model_id="quiet", significant={1: 0.05}),
    ]
    assert distinguishing_count(fits) == {"gpt": 4, "quiet": 0}
    assert distinguishing_count(fits, measures=["tone", "ppron"]) == {"gpt": 1, "quiet": 0}
    assert distinguishing_union(fits) == ["affect", "clout", "number", "tone"]


def test_dimension_hits() -> None:
    fits = [
        make_fit("tone", significant={1: 0.01}),
        make_fit("affect", significant={3: 0.01}),
        make_fit("clout", significant={1: 0.01}),
    ]
    layout = ReportLayout(
        groups={"Attitude": ["tone", "affect"], "Authority": ["clout"], "Reasoning": ["affect"]}
    )
    assert dimension_hits(fits, layout) == {
        "gpt": {"Attitude": ["tone"], "Authority": [], "Reasoning": ["affect"]}
    }
    summary = render_summary(fits, layout)
    assert "- gpt: 3 of 3" in summary
    assert "- gpt Authority main effect: none" in summary


def test_persona_means(tmp_path) -> None:
    def observation(persona_id: str, value: float) -> Observation:
        return Observation(
            persona_id=persona_id,
            model_id="gpt",
            session_index=0,
            turn=1,
            profile=CategoryProfile(word_count=5, hits={}, percentages={"tone": value}),
        )

    rows = persona_means(
        [observation("pes-sub-aff", 1.0), observation("opt-auth-ana", 2.0), observation("opt-auth-ana", 4.0)],
        ["tone"],
    )
    assert [(row.persona_id, row.n, row.means["tone"]) for row in rows] == [
        ("opt-auth-ana", 2, 3.0),
        ("pes-sub-aff", 1, 1.0),
    ]
    path = tmp_path / "means.csv"
    write_persona_means(str(path), rows, ["tone"])
    assert path.read_text(encoding="utf-8").splitlines()[1] == "gpt,opt-auth-ana,2,3.000"
