import itertools
import re
from enum import Enum
from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, ValidationError, field_validator

from persona_bench.utils.errors import ConfigError, InvalidArgumentError
from persona_bench.utils.logger import logger
from persona_bench.utils.main import load_key_values


class Attitude(Enum):
    optimistic = "Optimistic"
    pessimistic = "Pessimistic"


class Authority(Enum):
    authoritative = "Authoritative"
    submissive = "Submissive"


class Reasoning(Enum):
    analytical = "Analytical"
    affective = "Affective"


LEVEL_CODES: Dict[Enum, str] = {
    Attitude.optimistic: "opt",
    Attitude.pessimistic: "pes",
    Authority.authoritative: "auth",
    Authority.submissive: "sub",
    Reasoning.analytical: "ana",
    Reasoning.affective: "aff",
}
CODE_LEVELS: Dict[str, Enum] = {code: level for level, code in LEVEL_CODES.items()}

SLOTS = ("NAME", "ATTITUDE", "AUTHORITY", "REASONING")
SLOT_PATTERN = re.compile(r"\{(" + "|".join(SLOTS) + r")\}")
PERSONA_TAG_PATTERN = re.compile(r"^\[persona:([a-z]+-[a-z]+-[a-z]+)\]$", re.MULTILINE)


class PersonaSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    attitude: Attitude
    authority: Authority
    reasoning: Reasoning
    agent_name: str

    @field_validator("agent_name")
    @classmethod
    def _name_not_empty(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("agent_name must not be empty")
        return value

    @property
    def id(self) -> str:
        return "-".join(
            LEVEL_CODES[level] for level in (self.attitude, self.authority, self.reasoning)
        )

    @property
    def levels(self) -> Tuple[Attitude, Authority, Reasoning]:
        return self.attitude, self.authority, self.reasoning

    @classmethod
    def from_id(cls, persona_id: str, agent_name: str = "Alex") -> "PersonaSpec":
        codes = persona_id.split("-")
        if len(codes) != 3 or any(code not in CODE_LEVELS for code in codes):
            raise InvalidArgumentError(f"unknown persona id {persona_id!r}")
        attitude, authority, reasoning = (CODE_LEVELS[code] for code in codes)
        if not (
            isinstance(attitude, Attitude)
            and isinstance(authority, Authority)
            and isinstance(reasoning, Reasoning)
        ):
            raise InvalidArgumentError(
                f"persona id {persona_id!r} must list attitude, authority, reasoning in order"
            )
        return cls(
            attitude=attitude,
            authority=authority,
            reasoning=reasoning,
            agent_name=agent_name,
        )


class PromptTemplate(BaseModel):
    model_config = ConfigDict(frozen=True)

    task: str
    goal: str
    rules: str
    persona_pattern: str

    @field_validator("task", "goal", "rules", "persona_pattern")
    @classmethod
    def _section_not_empty(cls, value: str) -> str:
        if not value.strip():
            raise ValueError("template sections must not be empty")
        return value

    @field_validator("persona_pattern")
    @classmethod
    def _slots_once(cls, value: str) -> str:
        for slot in SLOTS:
            count = value.count("{" + slot + "}")
            if count != 1:
                raise ValueError(
                    f"persona_pattern must contain {{{slot}}} exactly once, found {count}"
                )
        return value


class SlotVocabulary(BaseModel):
    """Text inserted for each trait level. Missing levels fail at render time."""

    model_config = ConfigDict(frozen=True)

    renderings: Dict[str, str] = {}

    @field_validator("renderings")
    @classmethod
    def _dimensions_differ(cls, value: Dict[str, str]) -> Dict[str, str]:
        for dimension in (Attitude, Authority, Reasoning):
            texts = [value.get(level.value, "").strip() for level in dimension]
            if all(texts) and texts[0] == texts[1]:
                raise ValueError(
                    f"{dimension.__name__} levels must render differently, both are {texts[0]!r}"
                )
        return value

    def render(self, level: Enum) -> str:
        text = self.renderings.get(level.value, "").strip()
        if not text:
            raise ConfigError(f"slot vocabulary has no rendering for {level.value}")
        return text


class PromptConfig(BaseModel):
    template: PromptTemplate
    vocabulary: SlotVocabulary
    agent_name: str = "Alex"


def enumerate_personas(agent_name: str) -> List[PersonaSpec]:
    """All eight trait combinations; attitude varies slowest, reasoning fastest."""
    if not agent_name or not agent_name.strip():
        raise InvalidArgumentError("agent_name must not be empty")
    return [
        PersonaSpec(
            attitude=attitude,
            authority=authority,
            reasoning=reasoning,
            agent_name=agent_name,
        )
        for attitude, authority, reasoning in itertools.product(
            Attitude, Authority, Reasoning
        )
    ]


def select_personas(selection: str, agent_name: str) -> List[PersonaSpec]:
    personas = enumerate_personas(agent_name)
    if selection.strip().lower() == "all":
        return personas
    wanted = [item.strip() for item in selection.split(",") if item.strip()]
    by_id = {spec.id: spec for spec in personas}
    unknown = [persona_id for persona_id in wanted if persona_id not in by_id]
    if unknown:
        raise InvalidArgumentError(f"unknown persona id(s): {', '.join(unknown)}")
    if not wanted:
        raise InvalidArgumentError("no personas selected")
    return [by_id[persona_id] for persona_id in wanted]


def _fill(pattern: str, values: Dict[str, str]) -> str:
    text = pattern
    for slot, value in values.items():
        text = text.replace("{" + slot + "}", value)
    residual = SLOT_PATTERN.search(text)
    if residual:
        raise ConfigError(f"slot {residual.group(0)} left unfilled in prompt")
    return text


def build_persona_section(
    spec: PersonaSpec, template: PromptTemplate, vocab: SlotVocabulary
) -> str:
    return _fill(
        template.persona_pattern,
        {
            "NAME": spec.agent_name,
            "ATTITUDE": vocab.render(spec.attitude),
            "AUTHORITY": vocab.render(spec.authority),
            "REASONING": vocab.render(spec.reasoning),
        },
    )


def build_prompt(spec: PersonaSpec, template: PromptTemplate, vocab: SlotVocabulary) -> str:
    sections = [
        template.task.strip(),
        template.goal.strip(),
        template.rules.strip(),
        build_persona_section(spec, template, vocab),
    ]
    return "\n".join(sections)


def persona_tag(spec: PersonaSpec) -> str:
    return f"[persona:{spec.id}]"


def read_persona_tag(text: str) -> Optional[str]:
    match = PERSONA_TAG_PATTERN.search(text)
    return match.group(1) if match else None


def strip_persona_tag(text: str) -> str:
    return PERSONA_TAG_PATTERN.sub("", text).rstrip()


def load_prompt_config(path: str) -> PromptConfig:
    values = load_key_values(path)
    section_keys = ("task", "goal", "rules", "persona_pattern")
    level_keys = [level.value.lower() for level in LEVEL_CODES]
    unknown = set(values) - set(section_keys) - set(level_keys) - {"agent_name"}
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(sorted(unknown))}")
    try:
        config = PromptConfig(
            template=PromptTemplate(
                **{key: values.get(key, "") for key in section_keys}
            ),
            vocabulary=SlotVocabulary(
                renderings={
                    level.value: values[level.value.lower()]
                    for level in LEVEL_CODES
                    if level.value.lower() in values
                }
            ),
            agent_name=values.get("agent_name", "Alex"),
        )
    except ValidationError as e:
        raise ConfigError(f"{path}: invalid prompt template: {e}") from e
    logger.debug(f"prompt template loaded from {path}")
    return config
