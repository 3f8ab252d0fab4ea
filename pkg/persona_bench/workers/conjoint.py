"""
Conjoint regression over the 2x2x2 persona factorial.

Every measure is regressed on the three trait factors with all two-way
interactions and the three-way interaction:

    y = b0 + b1*x1 + b2*x2 + b3*x3 + b4*x1*x2 + b5*x1*x3 + b6*x3*x2 + b7*x1*x2*x3

with x1 attitude, x2 authority and x3 reasoning. Under effect coding the
levels Optimistic, Authoritative and Analytical are +1.
"""
import csv
import os
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, model_validator

from persona_bench.utils.errors import (
    AnalysisError,
    ConfigError,
    DegenerateResponseError,
    EmptyResultError,
    InsufficientDataError,
    SingularDesignError,
)
from persona_bench.utils.logger import logger
from persona_bench.utils.tdist import two_sided_p
from persona_bench.workers.lexicon import MeasureSet, Observation
from persona_bench.workers.persona import (
    Attitude,
    Authority,
    PersonaSpec,
    Reasoning,
    enumerate_personas,
)

N_TERMS = 8
TERM_NAMES = [
    "intercept",
    "attitude",
    "authority",
    "reasoning",
    "attitude:authority",
    "attitude:reasoning",
    "reasoning:authority",
    "attitude:authority:reasoning",
]
RANK_TOLERANCE = 1e-10
PERFECT_FIT_TOLERANCE = 1e-12
SMALLEST_P = float(np.finfo(float).tiny)


class Coding(Enum):
    EFFECT = "effect"
    DUMMY = "dummy"


class DesignRow(BaseModel):
    model_config = ConfigDict(frozen=True)

    x1: float
    x2: float
    x3: float
    x12: float
    x13: float
    x23: float
    x123: float

    @model_validator(mode="after")
    def _products(self) -> "DesignRow":
        expected = (
            self.x1 * self.x2,
            self.x1 * self.x3,
            self.x3 * self.x2,
            self.x1 * self.x2 * self.x3,
        )
        if (self.x12, self.x13, self.x23, self.x123) != expected:
            raise ValueError("interaction columns must be products of the main effects")
        return self

    @classmethod
    def from_main_effects(cls, x1: float, x2: float, x3: float) -> "DesignRow":
        return cls(x1=x1, x2=x2, x3=x3, x12=x1 * x2, x13=x1 * x3, x23=x3 * x2, x123=x1 * x2 * x3)

    def vector(self) -> List[float]:
        return [1.0, self.x1, self.x2, self.x3, self.x12, self.x13, self.x23, self.x123]


def effect_code(spec: PersonaSpec, coding: Coding = Coding.EFFECT) -> DesignRow:
    low = -1.0 if coding == Coding.EFFECT else 0.0
    return DesignRow.from_main_effects(
        1.0 if spec.attitude == Attitude.optimistic else low,
        1.0 if spec.authority == Authority.authoritative else low,
        1.0 if spec.reasoning == Reasoning.analytical else low,
    )


class RegressionFit(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    measure: str = ""
    model_id: str = ""
    n: int = 0
    df: int = 0
    coefficients: List[float] = []
    std_errors: List[float] = []
    t_values: List[float] = []
    p_values: List[float] = []
    r2: float = float("nan")
    coding: Coding = Coding.EFFECT
    residuals: List[float] = []
    skipped_reason: str = ""

    @property
    def skipped(self) -> bool:
        return bool(self.skipped_reason)

    def significant_terms(self, alpha: float = 0.05) -> List[int]:
        """Indices 1..7 of the coefficients with p below alpha."""
        if self.skipped:
            return []
        return [j for j in range(1, N_TERMS) if self.p_values[j] < alpha]


def _missing_cells(rows: Sequence[DesignRow], coding: Coding) -> List[str]:
    present = {(row.x1, row.x2, row.x3) for row in rows}
    missing = []
    for spec in enumerate_personas("cell"):
        row = effect_code(spec, coding)
        if (row.x1, row.x2, row.x3) not in present:
            missing.append(spec.id)
    return missing


def fit_ols(
    observations: Sequence[Tuple[DesignRow, float]],
    measure: str = "",
    model_id: str = "",
    coding: Coding = Coding.EFFECT,
) -> RegressionFit:
    n = len(observations)
    if n <= N_TERMS:
        raise InsufficientDataError(
            f"{N_TERMS} coefficients need more than {N_TERMS} observations, got {n}"
        )
    X = np.array([row.vector() for row, _ in observations], dtype=float)
    y = np.array([value for _, value in observations], dtype=float)
    if not np.all(np.isfinite(y)):
        raise AnalysisError("response contains non-finite values")

    Q, R = np.linalg.qr(X)
    pivots = np.abs(np.diag(R))
    if np.any(pivots <= RANK_TOLERANCE * pivots.max()):
        missing = _missing_cells([row for row, _ in observations], coding)
        raise SingularDesignError(
            "design matrix is rank deficient"
            + (f", missing persona cells: {', '.join(missing)}" if missing else ""),
            missing_cells=missing,
        )
    if np.ptp(y) == 0:
        raise DegenerateResponseError(f"response is constant ({y[0]!r})")

    beta = np.linalg.solve(R, Q.T @ y)
    residuals = y - X @ beta
    rss = float(residuals @ residuals)
    tss = float(np.sum((y - y.mean()) ** 2))
    df = n - N_TERMS
    r_inv = np.linalg.inv(R)
    unscaled = np.sum(r_inv * r_inv, axis=1)  # diagonal of (X'X)^-1

    scale = max(1.0, float(np.max(np.abs(y))))
    if rss <= PERFECT_FIT_TOLERANCE * tss:
        r2 = 1.0
        std_errors = np.zeros(N_TERMS)
        t_values = [
            0.0 if abs(b) <= PERFECT_FIT_TOLERANCE * scale else float(np.sign(b)) * float("inf")
            for b in beta
        ]
        p_values = [1.0 if t == 0.0 else SMALLEST_P for t in t_values]
    else:
        r2 = min(1.0, max(0.0, 1.0 - rss / tss))
        std_errors = np.sqrt(rss / df * unscaled)
        t_values = [float(b / se) for b, se in zip(beta, std_errors)]
        p_values = [max(two_sided_p(t, df), SMALLEST_P) for t in t_values]

    return RegressionFit(
        measure=measure,
        model_id=model_id,
        n=n,
        df=df,
        coefficients=[float(b) for b in beta],
        std_errors=[float(se) for se in std_errors],
        t_values=t_values,
        p_values=p_values,
        r2=r2,
        coding=coding,
        residuals=[float(e) for e in residuals],
    )


def fit_all(
    observations: Sequence[Observation],
    measures: MeasureSet,
    coding: Coding = Coding.EFFECT,
) -> List[RegressionFit]:
    """One fit per (model_id, measure); failed groups come back marked as skipped."""
    grouped: Dict[str, List[Observation]] = {}
    for observation in observations:
        grouped.setdefault(observation.model_id, []).append(observation)
    rows: Dict[str, DesignRow] = {}
    fits = []
    for model_id in sorted(grouped):
        group = grouped[model_id]
        for observation in group:
            if observation.persona_id not in rows:
                rows[observation.persona_id] = effect_code(
                    PersonaSpec.from_id(observation.persona_id), coding
                )
        for name in measures.names:
            data = [
                (rows[observation.persona_id], observation.profile.value(name))
                for observation in group
            ]
            try:
                fit = fit_ols(data, measure=name, model_id=model_id, coding=coding)
            except AnalysisError as e:
                logger.warning(f"fit {model_id}/{name} skipped: {e}")
                fit = RegressionFit(
                    measure=name,
                    model_id=model_id,
                    n=len(data),
                    coding=coding,
                    skipped_reason=f"{type(e).__name__}: {e}",
                )
            fits.append(fit)
    if not fits or all(fit.skipped for fit in fits):
        raise EmptyResultError("every (model, measure) fit was skipped")
    logger.info(
        f"{sum(not fit.skipped for fit in fits)} fit(s) over {len(grouped)} model(s), "
        f"{sum(fit.skipped for fit in fits)} skipped"
    )
    return fits


FIT_COLUMNS = (
    ["model", "measure", "n", "df", "r2"]
    + [f"b{j}" for j in range(N_TERMS)]
    + [f"se{j}" for j in range(N_TERMS)]
    + [f"t{j}" for j in range(N_TERMS)]
    + [f"p{j}" for j in range(N_TERMS)]
    + ["skipped_reason"]
)


def write_fits(path: str, fits: Sequence[RegressionFit]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, mode="w", newline="", encoding="utf-8") as file:
        writer = csv.writer(file)
        writer.writerow(FIT_COLUMNS)
        for fit in fits:
            if fit.skipped:
                numbers = [""] * (1 + 4 * N_TERMS)
            else:
                numbers = [repr(fit.r2)] + [
                    repr(value)
                    for value in fit.coefficients + fit.std_errors + fit.t_values + fit.p_values
                ]
            writer.writerow(
                [fit.model_id, fit.measure, fit.n, fit.df] + numbers + [fit.skipped_reason]
            )
    logger.info(f"{len(fits)} fit(s) written to {path}")


def read_fits(path: str, coding: Optional[Coding] = None) -> List[RegressionFit]:
    if not os.path.isfile(path):
        raise ConfigError(f"fits file {path} not found")
    fits = []
    with open(path, newline="", encoding="utf-8") as file:
        reader = csv.DictReader(file)
        if reader.fieldnames != FIT_COLUMNS:
            raise ConfigError(f"{path} is not a fits file")
        for row in reader:
            fit = RegressionFit(
                measure=row["measure"],
                model_id=row["model"],
                n=int(row["n"]),
                df=int(row["df"]),
                coding=coding or Coding.EFFECT,
                skipped_reason=row["skipped_reason"],
            )
            if not fit.skipped:
                fit.r2 = float(row["r2"])
                fit.coefficients = [float(row[f"b{j}"]) for j in range(N_TERMS)]
                fit.std_errors = [float(row[f"se{j}"]) for j in range(N_TERMS)]
                fit.t_values = [float(row[f"t{j}"]) for j in range(N_TERMS)]
                fit.p_values = [float(row[f"p{j}"]) for j in range(N_TERMS)]
            fits.append(fit)
    logger.debug(f"{len(fits)} fit(s) read from {path}")
    return fits
