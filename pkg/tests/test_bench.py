import csv
import os
from typing import Callable, List

import pytest
import requests

from persona_bench.bench import (
    BASELINES_FILE,
    DRIFT_REPORTS_FILE,
    FITS_FILE,
    OBSERVATIONS_FILE,
    PERSONA_MEANS_FILE,
    Bench,
    PipelineConfig,
    load_pipeline_config,
    pipeline_schema,
    run_pipeline,
)
from persona_bench.config import settings
from persona_bench.utils.errors import BackendError, ConfigError, InvalidArgumentError
from persona_bench.workers.backend import load_backend_config, make_backend
from persona_bench.workers.conjoint import fit_all, read_fits
from persona_bench.workers.lexicon import MeasureSet, load_lexicon, profile_transcripts
from persona_bench.workers.persona import enumerate_personas, load_prompt_config
from persona_bench.workers.session import load_script, run_campaign

OUTPUTS = [
    OBSERVATIONS_FILE,
    FITS_FILE,
    "report.md",
    "report.csv",
    PERSONA_MEANS_FILE,
    BASELINES_FILE,
    DRIFT_REPORTS_FILE,
]


@pytest.fixture
def mock_config(data_path: Callable[[str], str], tmp_path) -> Callable[..., PipelineConfig]:
    def make(out: str = "out", **values) -> PipelineConfig:
        return PipelineConfig(
            backends=[data_path("mock_a.env"), data_path("mock_b.env")],
            parallel=4,
            out=str(tmp_path / out),
            **values,
        )

    return make


def read_rows(path: str) -> List[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def test_full_pipeline_on_two_mock_backends(mock_config: Callable[..., PipelineConfig]) -> None:
    bench = run_pipeline(mock_config())
    assert len(bench.store.load()) == 160
    assert len(read_rows(bench.path(OBSERVATIONS_FILE))) == 1600
    fits = read_fits(bench.path(FITS_FILE))
    assert len(fits) == 38
    assert {fit.model_id for fit in fits} == {"mock-a", "mock-b"}
    for model_id in ("mock-a", "mock-b"):
        (tone_pos,) = [f for f in fits if f.model_id == model_id and f.measure == "tone_pos"]
        assert tone_pos.n == 800
        assert tone_pos.coefficients[1] > 0
        assert tone_pos.p_values[1] < 0.01
    for name in OUTPUTS:
        assert os.path.isfile(bench.path(name)), name
    with open(bench.path("report.md"), encoding="utf-8") as f:
        report = f.read()
    assert "mock-a R2" in report and "mock-b b7" in report
    assert "Distinguishing measures" in report
    means = read_rows(bench.path(PERSONA_MEANS_FILE))
    assert len(means) == 16
    assert means[0]["persona_id"] == "opt-auth-ana"
    baselines = read_rows(bench.path(BASELINES_FILE))
    assert len({(row["model_id"], row["persona_id"]) for row in baselines}) == 16


def test_reruns_are_byte_identical(mock_config: Callable[..., PipelineConfig]) -> None:
    first = run_pipeline(mock_config("first"))
    second = run_pipeline(mock_config("second"))
    for name in OUTPUTS:
        with open(first.path(name), "rb") as a, open(second.path(name), "rb") as b:
            assert a.read() == b.read(), name


def test_start_from_analyze(mock_config: Callable[..., PipelineConfig]) -> None:
    config = mock_config()
    bench = run_pipeline(config)
    with open(bench.path(FITS_FILE), "rb") as f:
        fits = f.read()
    for name in (OBSERVATIONS_FILE, FITS_FILE, "report.md"):
        os.remove(bench.path(name))
    again = run_pipeline(config, start="analyze")
    assert len(again.store.load()) == 160
    with open(again.path(FITS_FILE), "rb") as f:
        assert f.read() == fits
    assert os.path.isfile(again.path("report.md"))


def test_resumed_campaign_runs_nothing_new(mock_config: Callable[..., PipelineConfig]) -> None:
    config = mock_config()
    run_pipeline(config)
    results = Bench(config).campaign()
    assert [result.skipped for result in results] == [80, 80]
    assert all(result.transcripts == [] for result in results)


def test_analyze_without_transcripts(mock_config: Callable[..., PipelineConfig]) -> None:
    with pytest.raises(ConfigError):
        run_pipeline(mock_config(), start="analyze")
    with pytest.raises(InvalidArgumentError):
        run_pipeline(mock_config(), start="plot")


def test_missing_lexicon_fails_before_any_request(
    monkeypatch, data_path: Callable[[str], str], tmp_path
) -> None:
    def post(*args, **kwargs):
        raise AssertionError("no request expected")

    monkeypatch.setattr(requests, "post", post)
    config = PipelineConfig(
        backends=[data_path("http_backend.env")],
        lexicon=str(tmp_path / "missing.dic"),
        out=str(tmp_path / "out"),
    )
    with pytest.raises(ConfigError):
        run_pipeline(config)


def test_unknown_measure_fails_validation(mock_config: Callable[..., PipelineConfig]) -> None:
    with pytest.raises(ConfigError):
        Bench(mock_config(measures="tone,charisma")).validate()


def test_on_drift_needs_a_baseline(mock_config: Callable[..., PipelineConfig], tmp_path) -> None:
    policy = tmp_path / "drift.env"
    policy.write_text("MODE=on_drift\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        Bench(mock_config(drift_policy=str(policy))).validate()


def test_shared_model_ids_are_rejected(data_path: Callable[[str], str], tmp_path) -> None:
    config = PipelineConfig(
        backends=[data_path("mock_a.env"), data_path("mock_a.env")], out=str(tmp_path)
    )
    with pytest.raises(ConfigError):
        Bench(config).validate()


def test_periodic_drift_policy_in_campaign(
    mock_config: Callable[..., PipelineConfig], data_path: Callable[[str], str]
) -> None:
    bench = Bench(mock_config(drift_policy=data_path("drift.env"), personas="opt-auth-ana", sessions=1))
    bench.validate()
    bench.campaign()
    transcripts = bench.store.load()
    assert len(transcripts) == 2
    assert all([i.turn for i in t.injections] == [3, 6, 9] for t in transcripts)


def test_load_pipeline_config(data_path: Callable[[str], str], tmp_path) -> None:
    config = load_pipeline_config(data_path("pipeline.env"), seed=7, out=str(tmp_path))
    assert config.backends == [
        os.path.normpath(data_path("mock_a.env")),
        os.path.normpath(data_path("mock_b.env")),
    ]
    assert config.seed == 7
    assert config.sessions == 10
    assert config.template == os.path.normpath(data_path("template.env"))
    assert config.out == str(tmp_path)
    bad = tmp_path / "pipeline.env"
    bad.write_text("BACKENDS=a.env\nSESSIONS=0\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_pipeline_config(str(bad))
    bad.write_text("BACKENDS=a.env\nPLOT=yes\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_pipeline_config(str(bad))
    bad.write_text("SESSIONS=2\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_pipeline_config(str(bad))
    assert '"backends"' in pipeline_schema()


@pytest.mark.parametrize("backend_file", ["mock_a.env", "mock_b.env"])
def test_planted_effects_over_twenty_seeds(data_path: Callable[[str], str], backend_file: str) -> None:
    """Optimists get five times the tone_pos words, `number` has one rate for everyone."""
    prompt_config = load_prompt_config(data_path("template.env"))
    script = load_script(data_path("script.txt"))
    lexicon = load_lexicon(data_path("lexicon.dic"))
    measures = MeasureSet.parse("tone_pos,number")
    personas = enumerate_personas(prompt_config.agent_name)
    backend = make_backend(load_backend_config(data_path(backend_file)))
    uniform_hits = 0
    for seed in range(20):
        result = run_campaign(personas, prompt_config, script, backend, 10, campaign_seed=seed)
        fits = {
            fit.measure: fit
            for fit in fit_all(profile_transcripts(result.transcripts, lexicon, measures), measures)
        }
        assert fits["tone_pos"].coefficients[1] > 0, seed
        assert fits["tone_pos"].p_values[1] < 0.01, seed
        uniform_hits += fits["number"].p_values[1] < 0.05
    assert uniform_hits <= 1


def test_config_defaults_follow_settings_overlay(monkeypatch) -> None:
    monkeypatch.setattr(settings, "default_seed", 5)
    monkeypatch.setattr(settings, "default_parallel", 3)
    config = PipelineConfig(backends=["a.env"])
    assert (config.seed, config.parallel) == (5, 3)
    assert PipelineConfig(backends=["a.env"], seed=9).seed == 9


def test_campaign_without_completed_sessions_is_a_backend_failure(
    monkeypatch, data_path: Callable[[str], str], tmp_path
) -> None:
    def post(*args, **kwargs):
        raise requests.ConnectionError("connection refused")

    monkeypatch.setattr(requests, "post", post)
    backend = tmp_path / "down.env"
    backend.write_text("KIND=http\nMODEL=x\nENDPOINT=http://127.0.0.1:9\nMAX_RETRIES=0\n", encoding="utf-8")
    config = PipelineConfig(
        backends=[data_path("mock_a.env"), str(backend)],
        personas="opt-auth-ana",
        sessions=1,
        out=str(tmp_path / "out"),
    )
    with pytest.raises(BackendError, match="no session completed on x"):
        run_pipeline(config)
    bench = Bench(config)
    assert [t.model_id for t in bench.store.load()] == ["mock-a"]
