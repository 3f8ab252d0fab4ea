import functools
import json
import os
from typing import Any, Callable, Dict, List, Optional, TypeVar

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from persona_bench.config import settings
from persona_bench.utils.errors import (
    BackendError,
    ConfigError,
    InvalidArgumentError,
    PersonaBenchError,
)
from persona_bench.utils.logger import colored, logger
from persona_bench.utils.main import load_key_values, resolve_path
from persona_bench.workers.backend import ChatBackend, load_backend_config, make_backend
from persona_bench.workers.conjoint import Coding, fit_all, read_fits, write_fits
from persona_bench.workers.drift import (
    Baseline,
    DriftMode,
    DriftMonitor,
    DriftPolicy,
    calibrate,
    load_drift_policy,
    read_baselines,
    write_baselines,
)
from persona_bench.workers.lexicon import (
    Lexicon,
    MeasureSet,
    ObservationUnit,
    load_lexicon,
    profile_transcripts,
    read_observations,
    write_observations,
)
from persona_bench.workers.persona import (
    PersonaSpec,
    PromptConfig,
    build_persona_section,
    enumerate_personas,
    load_prompt_config,
    select_personas,
)
from persona_bench.workers.report import (
    ReportLayout,
    persona_means,
    render_csv,
    render_summary,
    render_table,
    write_persona_means,
)
from persona_bench.workers.session import (
    CampaignResult,
    ConversationScript,
    TranscriptStore,
    load_script,
    run_campaign,
    sort_transcripts,
)

_T = TypeVar("_T")

DATA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "data")
DEFAULT_TEMPLATE = os.path.join(DATA_DIR, "template.env")
DEFAULT_SCRIPT = os.path.join(DATA_DIR, "script.txt")
DEFAULT_LEXICON = os.path.join(DATA_DIR, "lexicon.dic")

STAGES = ["campaign", "analyze", "fit", "report", "monitor"]
PERSONA_ORDER = [spec.id for spec in enumerate_personas("order")]

OBSERVATIONS_FILE = "observations.csv"
FITS_FILE = "fits.csv"
REPORT_FILE = "report"
PERSONA_MEANS_FILE = "persona_means.csv"
BASELINES_FILE = "baselines.csv"
DRIFT_REPORTS_FILE = "drift_reports.jsonl"

PATH_KEYS = ("template", "script", "lexicon", "drift_policy", "out")


class PipelineConfig(BaseModel):
    """Everything one pipeline run reads; stages talk through files in `out`."""

    model_config = ConfigDict(extra="forbid")

    template: str = DEFAULT_TEMPLATE
    script: str = DEFAULT_SCRIPT
    backends: List[str] = Field(min_length=1)
    personas: str = "all"
    seed: int = Field(default_factory=lambda: settings.default_seed)
    sessions: int = Field(10, ge=1)
    parallel: int = Field(default_factory=lambda: settings.default_parallel, ge=1)
    lexicon: str = DEFAULT_LEXICON
    measures: str = "default"
    unit: ObservationUnit = ObservationUnit.response
    coding: Coding = Coding.EFFECT
    layout: str = "default"
    format: str = "md"
    drift_policy: str = ""
    reset_per_turn: bool = False
    out: str = "out"

    @field_validator("backends", mode="before")
    @classmethod
    def _split_backends(cls, value: Any) -> Any:
        if isinstance(value, str):
            return [item.strip() for item in value.split(",") if item.strip()]
        return value

    @field_validator("layout")
    @classmethod
    def _known_layout(cls, value: str) -> str:
        ReportLayout.named(value)
        return value

    @field_validator("format")
    @classmethod
    def _known_format(cls, value: str) -> str:
        if value not in ("md", "txt"):
            raise ValueError("report format must be md or txt")
        return value


def load_pipeline_config(path: str, **overrides: Any) -> PipelineConfig:
    values: Dict[str, Any] = dict(load_key_values(path))
    for key in PATH_KEYS:
        if key in values:
            values[key] = resolve_path(path, values[key])
    if "backends" in values:
        values["backends"] = [
            resolve_path(path, item.strip())
            for item in values["backends"].split(",")
            if item.strip()
        ]
    values.update({key: value for key, value in overrides.items() if value is not None})
    try:
        return PipelineConfig.model_validate(values)
    except ValidationError as e:
        raise ConfigError(f"{path}: invalid pipeline config: {e}") from e


def pipeline_schema() -> str:
    return json.dumps(PipelineConfig.model_json_schema(), indent=2)


def stage(name: str) -> Callable[[Callable[..., _T]], Callable[..., _T]]:
    """Log the stage boundaries and name the stage in fatal errors."""

    def decorator(func: Callable[..., _T]) -> Callable[..., _T]:
        @functools.wraps(func)
        def wrapper(*args: Any, **kwargs: Any) -> _T:
            logger.info(f"stage {name} started")
            try:
                result = func(*args, **kwargs)
            except PersonaBenchError as e:
                logger.error(f"stage {name} {colored('failed', False)}: {e}")
                raise
            logger.info(f"stage {name} {colored('done', True)}")
            return result

        return wrapper

    return decorator


class Bench:
    """Pipeline facade; workers are loaded on first use."""

    _prompt_config: Optional[PromptConfig] = None
    _script: Optional[ConversationScript] = None
    _lexicon: Optional[Lexicon] = None
    _backends: Optional[List[ChatBackend]] = None
    _drift_policy: Optional[DriftPolicy] = None
    _store: Optional[TranscriptStore] = None

    def __init__(self, config: PipelineConfig):
        self.config = config
        logger.info(
            f"pipeline config loaded. backends: {len(config.backends)}, "
            f"sessions: {config.sessions}, seed: {config.seed}, out: {config.out}"
        )

    @property
    def prompt_config(self) -> PromptConfig:
        if not self._prompt_config:
            self._prompt_config = load_prompt_config(self.config.template)
        return self._prompt_config

    @property
    def script(self) -> ConversationScript:
        if not self._script:
            self._script = load_script(self.config.script)
        return self._script

    @property
    def lexicon(self) -> Lexicon:
        if not self._lexicon:
            self._lexicon = load_lexicon(self.config.lexicon)
        return self._lexicon

    @property
    def measures(self) -> MeasureSet:
        return MeasureSet.parse(self.config.measures)

    @property
    def personas(self) -> List[PersonaSpec]:
        return select_personas(self.config.personas, self.prompt_config.agent_name)

    @property
    def backends(self) -> List[ChatBackend]:
        if self._backends is None:
            self._backends = [
                make_backend(load_backend_config(path)) for path in self.config.backends
            ]
            model_ids = [backend.model_id for backend in self._backends]
            if len(set(model_ids)) != len(model_ids):
                raise ConfigError(f"backends share a model id: {', '.join(model_ids)}")
        return self._backends

    @property
    def drift_policy(self) -> Optional[DriftPolicy]:
        if self._drift_policy is None and self.config.drift_policy:
            self._drift_policy = load_drift_policy(self.config.drift_policy)
        return self._drift_policy

    @property
    def store(self) -> TranscriptStore:
        if not self._store:
            self._store = TranscriptStore(self.config.out)
        return self._store

    def path(self, name: str) -> str:
        return os.path.join(self.config.out, name)

    def baselines_for(self, model_id: str) -> Dict[str, Baseline]:
        policy = self.drift_policy
        if policy is None or not policy.baseline:
            return {}
        return read_baselines(policy.baseline, model_id)

    def validate(self, start: str = "campaign") -> None:
        """Load every input the stages from `start` on need, before any request."""
        if start not in STAGES:
            raise InvalidArgumentError(f"unknown stage {start!r}, choose from {', '.join(STAGES)}")
        os.makedirs(self.config.out, exist_ok=True)
        if not os.access(self.config.out, os.W_OK):
            raise ConfigError(f"output directory {self.config.out} is not writable")
        self.measures.check(self.lexicon)
        ReportLayout.named(self.config.layout, self.measures)
        if start in ("campaign", "monitor"):
            logger.debug(
                f"{len(self.personas)} persona(s), agent {self.prompt_config.agent_name}"
            )
        if start == "campaign":
            logger.debug(
                f"script {self.script.script_id} with {len(self.script.utterances)} turn(s), "
                f"backends: {', '.join(backend.model_id for backend in self.backends)}"
            )
            policy = self.drift_policy
            if policy is not None and policy.mode == DriftMode.on_drift:
                if not policy.baseline:
                    raise ConfigError("on_drift re-injection needs a baseline file")
                for backend in self.backends:
                    self.baselines_for(backend.model_id)
        logger.debug(f"pipeline inputs validated from stage {start}")

    @stage("campaign")
    def campaign(self) -> List[CampaignResult]:
        results = []
        for backend in self.backends:
            results.append(
                run_campaign(
                    self.personas,
                    self.prompt_config,
                    self.script,
                    backend,
                    self.config.sessions,
                    self.config.seed,
                    parallel=self.config.parallel,
                    drift_policy=self.drift_policy,
                    baselines=self.baselines_for(backend.model_id),
                    lexicon=self.lexicon,
                    reset_per_turn=self.config.reset_per_turn,
                    store=self.store,
                )
            )
        failed = sum(len(result.failures) for result in results)
        if failed:
            logger.warning(f"{failed} session(s) failed, see {self.store.failures_path}")
        empty = [
            backend.model_id
            for backend, result in zip(self.backends, results)
            if not result.transcripts and not result.skipped
        ]
        if empty:
            raise BackendError(
                f"no session completed on {', '.join(empty)}, "
                f"see {self.store.failures_path}"
            )
        return results

    @stage("analyze")
    def analyze(self) -> None:
        transcripts = sort_transcripts(self.store.load(), PERSONA_ORDER)
        observations = profile_transcripts(
            transcripts, self.lexicon, self.measures, self.config.unit
        )
        write_observations(self.path(OBSERVATIONS_FILE), observations, self.measures)

    @stage("fit")
    def fit(self) -> None:
        observations, names = read_observations(self.path(OBSERVATIONS_FILE))
        measures = self.measures
        missing = [name for name in measures.names if name not in names]
        if missing:
            raise ConfigError(
                f"{self.path(OBSERVATIONS_FILE)} lacks measure(s) {', '.join(missing)}"
            )
        fits = fit_all(observations, measures, self.config.coding)
        write_fits(self.path(FITS_FILE), fits)

    @stage("report")
    def report(self) -> None:
        fits = read_fits(self.path(FITS_FILE), self.config.coding)
        layout = ReportLayout.named(self.config.layout, self.measures)
        table = render_table(fits, layout, self.config.format)
        with open(self.path(f"{REPORT_FILE}.{self.config.format}"), "w", encoding="utf-8") as f:
            f.write(table + "\n" + render_summary(fits, layout))
        with open(self.path(f"{REPORT_FILE}.csv"), "w", encoding="utf-8", newline="") as f:
            f.write(render_csv(fits, layout))
        observations, _ = read_observations(self.path(OBSERVATIONS_FILE))
        write_persona_means(
            self.path(PERSONA_MEANS_FILE),
            persona_means(observations, self.measures.names),
            self.measures.names,
        )

    @stage("monitor")
    def monitor(self) -> None:
        transcripts = sort_transcripts(self.store.load(), PERSONA_ORDER)
        keys = sorted(
            {(t.model_id, t.persona_id) for t in transcripts},
            key=lambda key: (key[0], PERSONA_ORDER.index(key[1])),
        )
        baselines = {
            key: calibrate(transcripts, self.lexicon, self.measures, key[1], key[0])
            for key in keys
        }
        write_baselines(self.path(BASELINES_FILE), list(baselines.values()))
        policy = self.drift_policy or DriftPolicy()
        triggered: Dict[str, int] = {}
        with open(self.path(DRIFT_REPORTS_FILE), "w", encoding="utf-8") as f:
            for transcript in transcripts:
                spec = PersonaSpec.from_id(transcript.persona_id, self.prompt_config.agent_name)
                monitor = DriftMonitor(
                    policy,
                    build_persona_section(
                        spec, self.prompt_config.template, self.prompt_config.vocabulary
                    ),
                    baselines[(transcript.model_id, transcript.persona_id)],
                    self.lexicon,
                )
                for turn, exchange in enumerate(transcript.exchanges, start=1):
                    monitor.observe(turn, exchange.agent)
                for report in monitor.reports:
                    record = {
                        "model_id": transcript.model_id,
                        "persona_id": transcript.persona_id,
                        "session_index": transcript.session_index,
                    }
                    record.update(report.model_dump())
                    f.write(json.dumps(record) + "\n")
                triggered[transcript.model_id] = triggered.get(transcript.model_id, 0) + sum(
                    report.triggered for report in monitor.reports
                )
        for model_id, count in sorted(triggered.items()):
            logger.info(f"{model_id}: {count} triggered drift window(s) in replay")

    def run(self, start: str = "campaign") -> None:
        self.validate(start)
        for name in STAGES[STAGES.index(start) :]:
            getattr(self, name)()


def run_pipeline(config: PipelineConfig, start: str = "campaign") -> Bench:
    bench = Bench(config)
    bench.run(start)
    return bench
