"""
Style drift monitoring for running sessions.

A baseline holds per-measure means and standard deviations of single
responses for one persona. During a session the last `window` responses are
compared against it with z-scores; when enough measures breach the
threshold the persona section of the prompt is appended to the context again.
"""
import csv
import os
from enum import Enum
from typing import TYPE_CHECKING, Dict, List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from persona_bench.utils.errors import ConfigError, InsufficientDataError, InvalidArgumentError
from persona_bench.utils.logger import colored, logger
from persona_bench.utils.main import load_key_values, resolve_path
from persona_bench.workers.lexicon import CategoryProfile, Lexicon, MeasureSet, analyze

if TYPE_CHECKING:
    from persona_bench.workers.session import Transcript

SD_FLOOR = 0.5


class DriftMode(Enum):
    periodic = "periodic"
    on_drift = "on_drift"
    off = "off"


class DriftPolicy(BaseModel):
    model_config = ConfigDict(extra="forbid")

    mode: DriftMode = DriftMode.on_drift
    window: int = Field(3, ge=1)
    threshold: float = Field(2.0, gt=0)
    min_breaches: int = Field(2, ge=1)
    every: int = Field(3, ge=1)
    cooldown: int = Field(2, ge=0)
    baseline: str = ""


class Baseline(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    persona_id: str
    model_id: str = ""
    n: int = Field(ge=2)
    means: Dict[str, float]
    sds: Dict[str, float]

    @property
    def measures(self) -> List[str]:
        return list(self.means)


class DriftReport(BaseModel):
    turn: int
    window_means: Dict[str, float]
    z_scores: Dict[str, float]
    breached: List[str]
    triggered: bool


def load_drift_policy(path: str) -> DriftPolicy:
    values = load_key_values(path)
    if "baseline" in values:
        values["baseline"] = resolve_path(path, values["baseline"])
    try:
        return DriftPolicy.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"{path}: invalid drift policy: {e}") from e


def calibrate_profiles(
    persona_id: str,
    profiles: Sequence[CategoryProfile],
    measures: MeasureSet,
    model_id: str = "",
) -> Baseline:
    if len(profiles) < 2:
        raise InsufficientDataError(
            f"baseline for {persona_id} needs at least 2 responses, got {len(profiles)}"
        )
    values = np.array(
        [[profile.value(name) for name in measures.names] for profile in profiles]
    )
    means = values.mean(axis=0)
    sds = values.std(axis=0, ddof=1)
    return Baseline(
        persona_id=persona_id,
        model_id=model_id,
        n=len(profiles),
        means={name: float(mean) for name, mean in zip(measures.names, means)},
        sds={name: float(sd) for name, sd in zip(measures.names, sds)},
    )


def calibrate(
    transcripts: Sequence["Transcript"],
    lexicon: Lexicon,
    measures: MeasureSet,
    persona_id: Optional[str] = None,
    model_id: Optional[str] = None,
) -> Baseline:
    """Baseline from every agent response of one persona's transcripts."""
    measures.check(lexicon)
    persona_ids = {transcript.persona_id for transcript in transcripts}
    if persona_id is None:
        if len(persona_ids) > 1:
            raise InvalidArgumentError(
                f"transcripts mix personas {sorted(persona_ids)}, choose one"
            )
        persona_id = next(iter(persona_ids), "")
    selected = [
        t
        for t in transcripts
        if t.persona_id == persona_id and (model_id is None or t.model_id == model_id)
    ]
    model_ids = sorted({t.model_id for t in selected})
    profiles = [
        analyze(exchange.agent, lexicon)
        for transcript in selected
        for exchange in transcript.exchanges
    ]
    baseline = calibrate_profiles(
        persona_id, profiles, measures, model_id=",".join(model_ids)
    )
    logger.info(f"baseline for {persona_id} calibrated from {baseline.n} response(s)")
    return baseline


def check_profiles(
    profiles: Sequence[CategoryProfile],
    baseline: Baseline,
    policy: DriftPolicy,
    turn: int = 0,
) -> DriftReport:
    if not profiles:
        raise InvalidArgumentError("drift window is empty")
    window_means: Dict[str, float] = {}
    z_scores: Dict[str, float] = {}
    for name in baseline.measures:
        mean = float(np.mean([profile.value(name) for profile in profiles]))
        window_means[name] = mean
        z_scores[name] = (mean - baseline.means[name]) / max(baseline.sds[name], SD_FLOOR)
    breached = [name for name, z in z_scores.items() if abs(z) > policy.threshold]
    return DriftReport(
        turn=turn,
        window_means=window_means,
        z_scores=z_scores,
        breached=breached,
        triggered=len(breached) >= policy.min_breaches,
    )


def check_window(
    responses: Sequence[str],
    baseline: Baseline,
    lexicon: Lexicon,
    policy: DriftPolicy,
    turn: int = 0,
) -> DriftReport:
    if not responses:
        raise InvalidArgumentError("drift window is empty")
    profiles = [analyze(response, lexicon) for response in responses]
    return check_profiles(profiles, baseline, policy, turn)


def maybe_reinject(
    policy: DriftPolicy,
    turn: int,
    report: Optional[DriftReport],
    persona_section: str,
    last_injection: Optional[int] = None,
) -> Optional[str]:
    if policy.mode == DriftMode.periodic:
        return persona_section if turn % policy.every == 0 else None
    if policy.mode == DriftMode.on_drift:
        if report is None or not report.triggered:
            return None
        if last_injection is not None and turn - last_injection <= policy.cooldown:
            return None
        return persona_section
    return None


class DriftMonitor:
    """Per-session monitor state; not shared between sessions."""

    def __init__(
        self,
        policy: DriftPolicy,
        persona_section: str,
        baseline: Optional[Baseline] = None,
        lexicon: Optional[Lexicon] = None,
    ):
        if policy.mode == DriftMode.on_drift and (baseline is None or lexicon is None):
            raise ConfigError("on_drift re-injection needs a baseline and a lexicon")
        self.policy = policy
        self.persona_section = persona_section
        self.baseline = baseline
        self.lexicon = lexicon
        self.profiles: List[CategoryProfile] = []
        self.reports: List[DriftReport] = []
        self.last_injection: Optional[int] = None

    def observe(self, turn: int, response: str) -> Optional[str]:
        report = None
        if self.baseline is not None and self.lexicon is not None:
            self.profiles.append(analyze(response, self.lexicon))
            if len(self.profiles) >= self.policy.window:
                report = check_profiles(
                    self.profiles[-self.policy.window :], self.baseline, self.policy, turn
                )
                self.reports.append(report)
                logger.debug(
                    f"turn {turn} drift "
                    f"{colored('triggered', False) if report.triggered else colored('clean', True)}"
                    + (f", breached: {', '.join(report.breached)}" if report.breached else "")
                )
        injection = maybe_reinject(
            self.policy, turn, report, self.persona_section, self.last_injection
        )
        if injection is not None:
            self.last_injection = turn
        return injection


BASELINE_COLUMNS = ["model_id", "persona_id", "measure", "mean", "sd", "n"]


def write_baselines(path: str, baselines: Sequence[Baseline]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, mode="w", newline="", encoding="utf-8") as file:
        writer = csv.writer(file)
        writer.writerow(BASELINE_COLUMNS)
        for baseline in baselines:
            for name in baseline.measures:
                writer.writerow(
                    [
                        baseline.model_id,
                        baseline.persona_id,
                        name,
                        repr(baseline.means[name]),
                        repr(baseline.sds[name]),
                        baseline.n,
                    ]
                )
    logger.info(f"{len(baselines)} baseline(s) written to {path}")


def read_baselines(path: str, model_id: Optional[str] = None) -> Dict[str, Baseline]:
    """
    Baselines keyed by persona id. With `model_id` the rows of that model are
    used when the file has any, otherwise every row; a persona may then
    appear under one model only.
    """
    if not os.path.isfile(path):
        raise ConfigError(f"baseline file {path} not found")
    with open(path, newline="", encoding="utf-8") as file:
        reader = csv.DictReader(file)
        if reader.fieldnames != BASELINE_COLUMNS:
            raise ConfigError(f"{path} is not a baseline file")
        rows = list(reader)
    if model_id is not None and any(row["model_id"] == model_id for row in rows):
        rows = [row for row in rows if row["model_id"] == model_id]
    grouped: Dict[str, List[Dict[str, str]]] = {}
    for row in rows:
        grouped.setdefault(row["persona_id"], []).append(row)
    baselines = {}
    for persona_id, group in grouped.items():
        models = {row["model_id"] for row in group}
        if len(models) > 1:
            raise ConfigError(
                f"{path} holds baselines of {persona_id} for several models "
                f"({', '.join(sorted(models))}), choose one"
            )
        baselines[persona_id] = Baseline(
            persona_id=persona_id,
            model_id=group[0]["model_id"],
            n=int(group[0]["n"]),
            means={row["measure"]: float(row["mean"]) for row in group},
            sds={row["measure"]: float(row["sd"]) for row in group},
        )
    return baselines
