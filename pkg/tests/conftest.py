import os
from typing import Callable, Dict, List, Optional

import pytest

from persona_bench.bench import DATA_DIR, DEFAULT_LEXICON, DEFAULT_TEMPLATE
from persona_bench.utils.logger import set_logger
from persona_bench.workers.backend import BackendConfig, BackendKind, MockBackend, MockFixture
from persona_bench.workers.lexicon import Lexicon, load_lexicon, parse_lexicon
from persona_bench.workers.persona import PromptConfig, load_prompt_config

set_logger("WARNING", "")

MINI_LEXICON = """\
%
1\tcertitude
2\taffect
3\ttone_pos
4\ttone_neg
%
must\t1
always\t1
help*\t2
hope\t2,3
good\t2,3
bad\t2,4
sad*\t2,4
composite tone = 50 +1*tone_pos -1*tone_neg, clamp 0 100
"""


@pytest.fixture
def mini_lexicon() -> Lexicon:
    return parse_lexicon(MINI_LEXICON)


@pytest.fixture(scope="session")
def shipped_lexicon() -> Lexicon:
    return load_lexicon(DEFAULT_LEXICON)


@pytest.fixture(scope="session")
def prompt_config() -> PromptConfig:
    return load_prompt_config(DEFAULT_TEMPLATE)


@pytest.fixture
def data_path() -> Callable[[str], str]:
    def path(name: str) -> str:
        return os.path.join(DATA_DIR, name)

    return path


@pytest.fixture
def make_mock_backend() -> Callable[..., MockBackend]:
    """Mock backend over an in-memory fixture."""

    def make(
        rates: Optional[Dict[str, Dict[str, float]]] = None,
        lines: Optional[List[str]] = None,
        model: str = "mock-test",
        length: int = 50,
        seed: int = 0,
    ) -> MockBackend:
        rates = rates or {"*": {}}
        fixture = MockFixture.model_validate(
            {
                "words": {
                    "tone_pos": ["hope", "good", "great", "happy"],
                    "tone_neg": ["bad", "awful", "sad", "grim"],
                    "number": ["one", "two", "ten"],
                },
                "personas": {
                    pattern: {
                        "lines": lines or ["We hope you can help today."],
                        "rates": planted,
                        "length": length,
                    }
                    for pattern, planted in rates.items()
                },
            }
        )
        config = BackendConfig(
            kind=BackendKind.mock, model=model, fixture_path="in-memory", seed=seed
        )
        return MockBackend(config, fixture)

    return make
