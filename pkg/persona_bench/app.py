import csv
import functools
import os
from typing import Any, Callable, List, Optional, TypeVar

from typer import Argument, Exit, Option, Typer, echo

from persona_bench.bench import (
    DEFAULT_LEXICON,
    DEFAULT_SCRIPT,
    DEFAULT_TEMPLATE,
    PERSONA_ORDER,
    STAGES,
    Bench,
    load_pipeline_config,
    pipeline_schema,
)
from persona_bench.config import Settings, set_settings, settings
from persona_bench.utils.errors import BackendError, InvalidArgumentError, PersonaBenchError
from persona_bench.utils.logger import logger, set_logger
from persona_bench.workers.backend import load_backend_config, make_backend
from persona_bench.workers.conjoint import Coding, fit_all, read_fits, write_fits
from persona_bench.workers.drift import (
    calibrate,
    load_drift_policy,
    read_baselines,
    write_baselines,
)
from persona_bench.workers.lexicon import (
    MeasureSet,
    ObservationUnit,
    load_lexicon,
    overlap_report,
    profile_transcripts,
    read_observations,
    write_observations,
)
from persona_bench.workers.persona import (
    PersonaSpec,
    build_prompt,
    load_prompt_config,
    select_personas,
)
from persona_bench.workers.report import (
    ReportLayout,
    persona_means,
    render_summary,
    render_table,
    write_persona_means,
)
from persona_bench.workers.session import (
    TranscriptStore,
    load_script,
    load_transcripts,
    run_campaign,
    sort_transcripts,
)

_T = TypeVar("_T")

app = Typer(add_completion=False, help="persona prompt benchmark for chat agents")
personas_app = Typer(help="inspect the eight persona prompts")
app.add_typer(personas_app, name="personas")


def exit_on_error(func: Callable[..., _T]) -> Callable[..., _T]:
    """Turn a PersonaBenchError into its exit code after logging it."""

    @functools.wraps(func)
    def decorator(*args: Any, **kwargs: Any) -> _T:
        try:
            return func(*args, **kwargs)
        except PersonaBenchError as e:
            logger.error(f"{type(e).__name__}: {e}")
            raise Exit(code=e.exit_code)

    return decorator


@app.callback()
def setup(
    env_path: str = Option("", "--env", help="path to .env file with settings"),
    log_level: str = Option("", "--log-level", help="stderr log level"),
) -> None:
    if env_path:
        set_settings(Settings(_env_file=env_path))
    if env_path or log_level:
        set_logger(log_level or settings.stderr_log_level, settings.log_file_path)
    logger.debug(f"debug log to file: {settings.log_file_path}")


@personas_app.command("list", help="list persona ids and their trait levels")
@exit_on_error
def list_personas(
    template: str = Option(DEFAULT_TEMPLATE, help="prompt template file"),
) -> None:
    config = load_prompt_config(template)
    for spec in select_personas("all", config.agent_name):
        echo(
            f"{spec.id}\t{spec.attitude.value}\t{spec.authority.value}\t{spec.reasoning.value}"
        )


@personas_app.command("render", help="print the full prompt of one persona")
@exit_on_error
def render_persona(
    persona_id: str = Option(..., "--id", help="persona id, e.g. opt-auth-ana"),
    template: str = Option(DEFAULT_TEMPLATE, help="prompt template file"),
) -> None:
    config = load_prompt_config(template)
    spec = PersonaSpec.from_id(persona_id, config.agent_name)
    echo(build_prompt(spec, config.template, config.vocabulary))


@app.command("run", help="run a benchmark campaign against one or more backends")
@exit_on_error
def run(
    backends: List[str] = Option(..., "--backend", help="backend config file, repeatable"),
    personas: str = Option("all", help="'all' or comma separated persona ids"),
    script: str = Option(DEFAULT_SCRIPT, help="donor script, one utterance per line"),
    template: str = Option(DEFAULT_TEMPLATE, help="prompt template file"),
    sessions: int = Option(10, help="sessions per persona"),
    out: str = Option("out", help="output directory"),
    seed: Optional[int] = Option(None, help="campaign seed"),
    parallel: Optional[int] = Option(None, help="concurrent sessions"),
    drift_policy: str = Option("", help="drift policy file"),
    lexicon: str = Option(DEFAULT_LEXICON, help="lexicon used by the drift monitor"),
    reset_per_turn: bool = Option(
        False, "--reset-per-turn", help="send only the prompt and current utterance each turn"
    ),
    resume: bool = Option(True, "--resume/--no-resume", help="skip sessions already stored"),
) -> None:
    config = load_prompt_config(template)
    selected = select_personas(personas, config.agent_name)
    conversation = load_script(script)
    loaded = [make_backend(load_backend_config(path)) for path in backends]
    policy = load_drift_policy(drift_policy) if drift_policy else None
    lex = load_lexicon(lexicon) if policy is not None else None
    store = TranscriptStore(out)
    failed = 0
    for backend in loaded:
        baselines = (
            read_baselines(policy.baseline, backend.model_id)
            if policy is not None and policy.baseline
            else {}
        )
        result = run_campaign(
            selected,
            config,
            conversation,
            backend,
            sessions,
            settings.default_seed if seed is None else seed,
            parallel=settings.default_parallel if parallel is None else parallel,
            drift_policy=policy,
            baselines=baselines,
            lexicon=lex,
            reset_per_turn=reset_per_turn,
            store=store,
            resume=resume,
        )
        failed += len(result.failures)
    if failed:
        raise BackendError(f"{failed} session(s) failed, see {store.failures_path}")


@app.command("analyze", help="profile transcripts into an observations table")
@exit_on_error
def analyze(
    transcripts: str = Option(..., "--in", help="transcripts.jsonl"),
    lexicon: str = Option(DEFAULT_LEXICON, help="lexicon file"),
    measures: str = Option("default", help="'default' or comma separated measure names"),
    unit: ObservationUnit = Option(ObservationUnit.response, help="observation unit"),
    out: str = Option("observations.csv", help="observations CSV"),
    overlap: str = Option(
        "", "--overlap-report", help="also write tokens counted by several measures"
    ),
) -> None:
    lex = load_lexicon(lexicon)
    measure_set = MeasureSet.parse(measures)
    loaded = sort_transcripts(load_transcripts(transcripts), PERSONA_ORDER)
    write_observations(out, profile_transcripts(loaded, lex, measure_set, unit), measure_set)
    if overlap:
        with open(overlap, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["model_id", "persona_id", "session_index", "turn", "token", "categories"])
            for transcript in loaded:
                for turn, exchange in enumerate(transcript.exchanges, start=1):
                    for token, categories in overlap_report(exchange.agent, lex, measure_set):
                        writer.writerow(
                            [
                                transcript.model_id,
                                transcript.persona_id,
                                transcript.session_index,
                                turn,
                                token,
                                ";".join(categories),
                            ]
                        )
        logger.info(f"overlap report written to {overlap}")


@app.command("fit", help="fit the conjoint regression per model and measure")
@exit_on_error
def fit(
    observations: str = Option(..., "--in", help="observations CSV"),
    measures: str = Option("default", help="'default' or comma separated measure names"),
    group_by: str = Option("model", help="grouping column, only 'model' is supported"),
    coding: Coding = Option(Coding.EFFECT, help="factor coding"),
    out: str = Option("fits.csv", help="fits CSV"),
) -> None:
    if group_by != "model":
        raise InvalidArgumentError(f"cannot group by {group_by!r}, only by model")
    loaded, names = read_observations(observations)
    measure_set = MeasureSet.parse(measures)
    missing = [name for name in measure_set.names if name not in names]
    if missing:
        raise InvalidArgumentError(f"{observations} lacks measure(s) {', '.join(missing)}")
    write_fits(out, fit_all(loaded, measure_set, coding))


@app.command("report", help="render fits as a coefficient table")
@exit_on_error
def report(
    fits: str = Option(..., "--fits", help="fits CSV"),
    layout: str = Option("default", help="default or compact"),
    fmt: str = Option("md", "--format", help="md, txt or csv"),
    measures: str = Option("default", help="measure groups for the default layout"),
    out: str = Option("", help="output file, stdout when empty"),
    means: str = Option("", help="also write per-persona means to this CSV"),
    observations: str = Option("", help="observations CSV, needed by --means"),
) -> None:
    loaded = read_fits(fits)
    table_layout = ReportLayout.named(layout, MeasureSet.parse(measures))
    text = render_table(loaded, table_layout, fmt)
    if fmt != "csv":
        text += "\n" + render_summary(loaded, table_layout)
    if out:
        os.makedirs(os.path.dirname(os.path.abspath(out)), exist_ok=True)
        with open(out, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        logger.info(f"report written to {out}")
    else:
        echo(text, nl=False)
    if means:
        if not observations:
            raise InvalidArgumentError("--means needs --observations")
        rows, names = read_observations(observations)
        write_persona_means(means, persona_means(rows, names), names)


@app.command("calibrate", help="calibrate a drift baseline from transcripts")
@exit_on_error
def calibrate_baseline(
    transcripts: str = Option(..., "--in", help="transcripts.jsonl"),
    persona_id: str = Option(..., "--persona", help="persona id"),
    model_id: Optional[str] = Option(None, "--model", help="only this model's transcripts"),
    lexicon: str = Option(DEFAULT_LEXICON, help="lexicon file"),
    measures: str = Option("default", help="'default' or comma separated measure names"),
    out: str = Option("baseline.csv", help="baseline CSV"),
) -> None:
    baseline = calibrate(
        load_transcripts(transcripts),
        load_lexicon(lexicon),
        MeasureSet.parse(measures),
        persona_id,
        model_id,
    )
    write_baselines(out, [baseline])


@app.command("pipeline", help="run every stage from one pipeline config")
@exit_on_error
def pipeline(
    config: str = Argument("", help="pipeline config file"),
    start: str = Option("campaign", "--from", help=f"first stage: {', '.join(STAGES)}"),
    print_schema: bool = Option(False, "--print-schema", help="print the config schema"),
    seed: Optional[int] = Option(None, help="override the campaign seed"),
    parallel: Optional[int] = Option(None, help="override the session parallelism"),
    out: Optional[str] = Option(None, help="override the output directory"),
) -> None:
    if print_schema:
        echo(pipeline_schema())
        return
    if not config:
        raise InvalidArgumentError("a pipeline config file is required")
    bench = Bench(load_pipeline_config(config, seed=seed, parallel=parallel, out=out))
    bench.run(start)
