"""
Scripted benchmark conversations.

A session drives one persona through the donor script against one backend.
A campaign runs personas x sessions for one backend, in parallel up to a
bound, and appends every finished session to the transcript store.
"""
import json
import os
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from datetime import datetime
from typing import Dict, Iterable, List, Optional, Sequence, Set, Tuple

from filelock import FileLock
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from persona_bench.config import settings
from persona_bench.utils.errors import (
    BackendError,
    ConfigError,
    InvalidArgumentError,
    SessionError,
)
from persona_bench.utils.logger import logger
from persona_bench.utils.main import derive_seed
from persona_bench.workers.backend import ChatBackend, ChatMessage, Role
from persona_bench.workers.drift import (
    Baseline,
    DriftMode,
    DriftMonitor,
    DriftPolicy,
    DriftReport,
)
from persona_bench.workers.lexicon import Lexicon
from persona_bench.workers.persona import (
    PersonaSpec,
    PromptConfig,
    build_persona_section,
    build_prompt,
    persona_tag,
)

TRANSCRIPTS_FILE = "transcripts.jsonl"
FAILURES_FILE = "failed_sessions.jsonl"

SessionKey = Tuple[str, str, int]


class ConversationScript(BaseModel):
    script_id: str
    utterances: List[str]

    @field_validator("utterances")
    @classmethod
    def _utterances_not_empty(cls, value: List[str]) -> List[str]:
        if not all(utterance.strip() for utterance in value):
            raise ValueError("script utterances must not be empty")
        return value


class Exchange(BaseModel):
    donor: str
    agent: str


class Injection(BaseModel):
    turn: int
    text: str


class Transcript(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    persona_id: str
    model_id: str
    session_index: int = Field(ge=0)
    seed: int
    script_id: str = ""
    exchanges: List[Exchange] = []
    injections: List[Injection] = []
    drift_reports: List[DriftReport] = []
    started_at: str = ""
    finished_at: str = ""

    @property
    def key(self) -> SessionKey:
        return self.model_id, self.persona_id, self.session_index


class SessionFailure(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    persona_id: str
    model_id: str
    session_index: int
    seed: int
    error: str
    transcript: Optional[Transcript] = None


class CampaignResult(BaseModel):
    transcripts: List[Transcript] = []
    failures: List[SessionFailure] = []
    skipped: int = 0


def load_script(path: str) -> ConversationScript:
    """One donor utterance per line; blank lines and `#` comments are ignored."""
    try:
        with open(path, encoding="utf-8") as f:
            lines = [line.strip() for line in f]
    except OSError as e:
        raise ConfigError(f"cannot read script {path}: {e}") from e
    utterances = [line for line in lines if line and not line.startswith("#")]
    if not utterances:
        raise ConfigError(f"script {path} has no utterances")
    script_id = os.path.splitext(os.path.basename(path))[0]
    logger.debug(f"script {script_id} loaded with {len(utterances)} utterance(s)")
    return ConversationScript(script_id=script_id, utterances=utterances)


def _now() -> str:
    return datetime.now().isoformat(timespec="seconds")


def run_session(
    spec: PersonaSpec,
    prompt_config: PromptConfig,
    script: ConversationScript,
    backend: ChatBackend,
    seed: int,
    session_index: int = 0,
    drift_policy: Optional[DriftPolicy] = None,
    baseline: Optional[Baseline] = None,
    lexicon: Optional[Lexicon] = None,
    reset_per_turn: bool = False,
) -> Transcript:
    if not script.utterances:
        raise InvalidArgumentError("script has no utterances")
    persona_section = build_persona_section(
        spec, prompt_config.template, prompt_config.vocabulary
    )
    system_prompt = (
        build_prompt(spec, prompt_config.template, prompt_config.vocabulary)
        + "\n"
        + persona_tag(spec)
    )
    monitor = (
        DriftMonitor(drift_policy, persona_section, baseline, lexicon)
        if drift_policy is not None
        else None
    )
    transcript = Transcript(
        persona_id=spec.id,
        model_id=backend.model_id,
        session_index=session_index,
        seed=seed,
        script_id=script.script_id,
        started_at=_now(),
    )
    history = [ChatMessage(role=Role.system, content=system_prompt, turn_index=0)]
    for turn, utterance in enumerate(script.utterances, start=1):
        donor = ChatMessage(role=Role.donor, content=utterance, turn_index=turn)
        if reset_per_turn:
            # persona prompt and injections so far, without earlier exchanges
            history = [m for m in history if m.role == Role.system]
        history.append(donor)
        try:
            response = backend.respond(list(history), seed)
        except BackendError as e:
            transcript.finished_at = _now()
            raise SessionError(
                f"session {session_index} of {spec.id} on {backend.model_id} "
                f"failed at turn {turn}: {e}",
                transcript=transcript,
            ) from e
        history.append(ChatMessage(role=Role.agent, content=response, turn_index=turn))
        transcript.exchanges.append(Exchange(donor=utterance, agent=response))
        if monitor is None:
            continue
        injection = monitor.observe(turn, response)
        if injection is not None:
            history.append(
                ChatMessage(role=Role.system, content=injection, turn_index=turn)
            )
            transcript.injections.append(Injection(turn=turn, text=injection))
            logger.debug(f"{spec.id} session {session_index}: persona re-injected at turn {turn}")
    if monitor is not None:
        transcript.drift_reports = monitor.reports
    transcript.finished_at = _now()
    return transcript


class TranscriptStore:
    """Append-only JSONL store, one record per finished session."""

    def __init__(self, out_dir: str):
        os.makedirs(out_dir, exist_ok=True)
        self.path = os.path.join(out_dir, TRANSCRIPTS_FILE)
        self.failures_path = os.path.join(out_dir, FAILURES_FILE)
        self._lock = threading.Lock()
        self._file_lock = FileLock(
            self.path + ".lock", timeout=settings.transcript_lock_timeout
        )

    def _append(self, path: str, record: str) -> None:
        with self._lock, self._file_lock:
            with open(path, mode="a", encoding="utf-8") as f:
                f.write(record + "\n")

    def append(self, transcript: Transcript) -> None:
        self._append(self.path, transcript.model_dump_json())

    def append_failure(self, failure: SessionFailure) -> None:
        self._append(self.failures_path, failure.model_dump_json())

    def completed_keys(self) -> Set[SessionKey]:
        if not os.path.isfile(self.path):
            return set()
        return {transcript.key for transcript in load_transcripts(self.path)}

    def load(self) -> List[Transcript]:
        return load_transcripts(self.path)


def load_transcripts(path: str) -> List[Transcript]:
    if not os.path.isfile(path):
        raise ConfigError(f"transcript file {path} not found")
    transcripts: Dict[SessionKey, Transcript] = {}
    with open(path, encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                transcript = Transcript.model_validate(json.loads(line))
            except (ValueError, ValidationError) as e:
                raise ConfigError(f"{path} line {line_number}: bad transcript record: {e}") from e
            if transcript.key in transcripts:
                logger.warning(f"duplicate transcript {transcript.key} in {path}, keeping the first")
                continue
            transcripts[transcript.key] = transcript
    return list(transcripts.values())


def sort_transcripts(
    transcripts: Iterable[Transcript], persona_order: Sequence[str] = ()
) -> List[Transcript]:
    rank = {persona_id: i for i, persona_id in enumerate(persona_order)}
    return sorted(
        transcripts,
        key=lambda t: (
            t.model_id,
            rank.get(t.persona_id, len(rank)),
            t.persona_id,
            t.session_index,
        ),
    )


def run_campaign(
    personas: Sequence[PersonaSpec],
    prompt_config: PromptConfig,
    script: ConversationScript,
    backend: ChatBackend,
    sessions_per_persona: int,
    campaign_seed: int,
    parallel: int = 1,
    drift_policy: Optional[DriftPolicy] = None,
    baselines: Optional[Dict[str, Baseline]] = None,
    lexicon: Optional[Lexicon] = None,
    reset_per_turn: bool = False,
    store: Optional[TranscriptStore] = None,
    resume: bool = True,
) -> CampaignResult:
    if not personas:
        raise InvalidArgumentError("campaign needs at least one persona")
    if sessions_per_persona < 1:
        raise InvalidArgumentError("sessions per persona must be at least 1")
    if not script.utterances:
        raise InvalidArgumentError("script has no utterances")
    if parallel < 1:
        raise InvalidArgumentError("parallel must be at least 1")
    baselines = baselines or {}
    if drift_policy is not None and drift_policy.mode == DriftMode.on_drift:
        missing = [spec.id for spec in personas if spec.id not in baselines]
        if missing:
            raise ConfigError(f"no drift baseline for persona(s) {', '.join(missing)}")
        if lexicon is None:
            raise ConfigError("on_drift re-injection needs a lexicon")
    done = store.completed_keys() if store is not None and resume else set()
    jobs = []
    skipped = 0
    for spec in personas:
        for session_index in range(sessions_per_persona):
            if (backend.model_id, spec.id, session_index) in done:
                skipped += 1
                continue
            seed = derive_seed(campaign_seed, backend.model_id, spec.id, str(session_index))
            jobs.append((spec, session_index, seed))
    if skipped:
        logger.info(f"{backend.model_id}: {skipped} session(s) already in the store, skipped")
    logger.info(
        f"{backend.model_id}: running {len(jobs)} session(s) "
        f"of {len(script.utterances)} turn(s), parallel {parallel}"
    )
    result = CampaignResult(skipped=skipped)
    with ThreadPoolExecutor(max_workers=parallel) as executor:
        futures = {
            executor.submit(
                run_session,
                spec,
                prompt_config,
                script,
                backend,
                seed,
                session_index,
                drift_policy,
                baselines.get(spec.id),
                lexicon,
                reset_per_turn,
            ): (spec, session_index, seed)
            for spec, session_index, seed in jobs
        }
        for future in as_completed(futures):
            spec, session_index, seed = futures[future]
            try:
                transcript = future.result()
            except SessionError as e:
                logger.warning(str(e))
                failure = SessionFailure(
                    persona_id=spec.id,
                    model_id=backend.model_id,
                    session_index=session_index,
                    seed=seed,
                    error=str(e),
                    transcript=e.transcript,
                )
                result.failures.append(failure)
                if store is not None:
                    store.append_failure(failure)
                continue
            result.transcripts.append(transcript)
            if store is not None:
                store.append(transcript)
            logger.debug(f"{backend.model_id}: {spec.id} session {session_index} done")
    persona_order = [spec.id for spec in personas]
    result.transcripts = sort_transcripts(result.transcripts, persona_order)
    result.failures.sort(
        key=lambda f: (persona_order.index(f.persona_id), f.session_index)
    )
    logger.info(
        f"{backend.model_id}: {len(result.transcripts)} session(s) finished, "
        f"{len(result.failures)} failed"
    )
    return result
