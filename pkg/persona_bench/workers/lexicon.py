"""
Dictionary-based psycholinguistic text analysis.

A lexicon maps words and word stems (``help*``) to one or more categories.
The measure of a category in a text is the percentage of the text's tokens
that belong to it. Composite measures are clamped affine combinations of
category percentages.
"""
import csv
import os
import re
from enum import Enum
from typing import (
    TYPE_CHECKING,
    Dict,
    FrozenSet,
    Iterable,
    List,
    Optional,
    Sequence,
    Set,
    Tuple,
)

from pydantic import BaseModel, ConfigDict, field_validator, model_validator

from persona_bench.utils.errors import (
    ConfigError,
    InvalidArgumentError,
    LexiconParseError,
)
from persona_bench.utils.logger import logger

if TYPE_CHECKING:
    from persona_bench.workers.session import Transcript

TOKEN_PATTERN = re.compile(r"[^\W_]+(?:'[^\W_]+)*")
COMPOSITE_PATTERN = re.compile(
    r"^composite\s+(?P<name>\w+)\s*=\s*(?P<expr>.+?)\s*,\s*clamp\s+(?P<lo>\S+)\s+(?P<hi>\S+)\s*$"
)
NUMBER = r"\d+(?:\.\d+)?|\.\d+"
BASE_PATTERN = re.compile(rf"^\s*(?P<base>[+-]?(?:{NUMBER}))")
TERM_PATTERN = re.compile(rf"\s*(?P<sign>[+-])\s*(?P<weight>{NUMBER})\s*\*\s*(?P<name>\w+)")

DEFAULT_MEASURE_GROUPS: Dict[str, List[str]] = {
    "Authority": ["clout", "authentic", "ppron", "certitude", "allnone", "assent"],
    "Attitude": [
        "tone",
        "affect",
        "tone_pos",
        "tone_neg",
        "emo_anx",
        "emo_pos",
        "tentat",
        "focusfuture",
    ],
    "Reasoning": [
        "cognition",
        "analytic",
        "authentic",
        "quantity",
        "number",
        "emotion",
        "affect",
    ],
}


class CompositeDef(BaseModel):
    model_config = ConfigDict(frozen=True)

    name: str
    base: float
    weights: Dict[str, float]
    lo: float = 0.0
    hi: float = 100.0

    @field_validator("weights")
    @classmethod
    def _has_weights(cls, value: Dict[str, float]) -> Dict[str, float]:
        if not value:
            raise ValueError("composite needs at least one weighted category")
        return value

    @model_validator(mode="after")
    def _clamp_range(self) -> "CompositeDef":
        if not self.lo < self.hi:
            raise ValueError(f"clamp range [{self.lo}, {self.hi}] is empty")
        return self

    def serialize(self) -> str:
        terms = " ".join(
            f"{'-' if weight < 0 else '+'}{abs(weight)!r}*{name}"
            for name, weight in self.weights.items()
        )
        return f"composite {self.name} = {self.base!r} {terms}, clamp {self.lo!r} {self.hi!r}"


class Lexicon(BaseModel):
    """Immutable after parsing; entries map to category names, not ids."""

    model_config = ConfigDict(frozen=True)

    categories: Dict[int, str]
    literals: Dict[str, FrozenSet[str]] = {}
    stems: Dict[str, FrozenSet[str]] = {}
    composites: List[CompositeDef] = []

    @model_validator(mode="after")
    def _references_exist(self) -> "Lexicon":
        names = set(self.categories.values())
        if len(names) != len(self.categories):
            raise ValueError("category names must be unique")
        for word, cats in list(self.literals.items()) + list(self.stems.items()):
            missing = set(cats) - names
            if missing:
                raise ValueError(f"{word!r} references unknown categories {missing}")
        overlap = set(self.literals) & set(self.stems)
        if overlap:
            raise ValueError(f"entries are both literal and stem: {sorted(overlap)}")
        if "" in self.stems:
            raise ValueError("stem entries need a prefix before '*'")
        for composite in self.composites:
            if composite.name in names:
                raise ValueError(f"composite {composite.name} shadows a category")
            missing = set(composite.weights) - names
            if missing:
                raise ValueError(
                    f"composite {composite.name} references unknown categories {missing}"
                )
        return self

    @property
    def category_names(self) -> List[str]:
        return [self.categories[key] for key in sorted(self.categories)]

    @property
    def composite_names(self) -> List[str]:
        return [composite.name for composite in self.composites]

    def has_measure(self, name: str) -> bool:
        return name in self.categories.values() or name in self.composite_names

    def categories_of(self, token: str) -> Set[str]:
        found: Set[str] = set(self.literals.get(token, ()))
        for end in range(1, len(token) + 1):
            cats = self.stems.get(token[:end])
            if cats:
                found.update(cats)
        return found


class MeasureSet(BaseModel):
    """Measure names analyzed per trait dimension; a name may sit in several groups."""

    model_config = ConfigDict(frozen=True)

    groups: Dict[str, List[str]]

    @property
    def names(self) -> List[str]:
        seen: List[str] = []
        for members in self.groups.values():
            for name in members:
                if name not in seen:
                    seen.append(name)
        return seen

    @classmethod
    def default(cls) -> "MeasureSet":
        return cls(groups={group: list(names) for group, names in DEFAULT_MEASURE_GROUPS.items()})

    @classmethod
    def parse(cls, value: str) -> "MeasureSet":
        """`default`, or a comma separated list of names forming one group."""
        if value.strip().lower() in ("", "default"):
            return cls.default()
        names = [item.strip() for item in value.split(",") if item.strip()]
        return cls(groups={"Custom": names})

    def check(self, lexicon: Lexicon) -> None:
        unknown = [name for name in self.names if not lexicon.has_measure(name)]
        if unknown:
            raise ConfigError(f"measure(s) not in lexicon: {', '.join(unknown)}")


class CategoryProfile(BaseModel):
    word_count: int
    hits: Dict[str, int]
    percentages: Dict[str, float]
    composites: Dict[str, float] = {}

    @property
    def empty(self) -> bool:
        return self.word_count == 0

    def value(self, name: str) -> float:
        if name in self.percentages:
            return self.percentages[name]
        if name in self.composites:
            return self.composites[name]
        raise ConfigError(f"measure {name} not in profile")


class ObservationUnit(str, Enum):
    response = "response"
    session = "session"


class Observation(BaseModel):
    model_config = ConfigDict(protected_namespaces=())

    persona_id: str
    model_id: str
    session_index: int
    # 1-based turn for response observations, 0 for pooled sessions
    turn: int
    profile: CategoryProfile


def tokenize(text: str) -> List[str]:
    normalized = text.replace("’", "'").casefold()
    return TOKEN_PATTERN.findall(normalized)


def _parse_composite(line: str, line_number: int, names: Set[str]) -> CompositeDef:
    match = COMPOSITE_PATTERN.match(line)
    if not match:
        raise LexiconParseError(f"malformed composite definition {line!r}", line_number)
    expr = match.group("expr")
    base_match = BASE_PATTERN.match(expr)
    if not base_match:
        raise LexiconParseError(f"composite needs a base value: {expr!r}", line_number)
    weights: Dict[str, float] = {}
    position = base_match.end()
    while position < len(expr):
        term = TERM_PATTERN.match(expr, position)
        if not term:
            raise LexiconParseError(
                f"cannot read composite term at {expr[position:]!r}", line_number
            )
        name = term.group("name")
        if name not in names:
            raise LexiconParseError(
                f"composite {match.group('name')} uses unknown category {name}",
                line_number,
            )
        sign = -1.0 if term.group("sign") == "-" else 1.0
        weights[name] = weights.get(name, 0.0) + sign * float(term.group("weight"))
        position = term.end()
    try:
        return CompositeDef(
            name=match.group("name"),
            base=float(base_match.group("base")),
            weights=weights,
            lo=float(match.group("lo")),
            hi=float(match.group("hi")),
        )
    except ValueError as e:
        raise LexiconParseError(str(e), line_number) from e


def parse_lexicon(source: str) -> Lexicon:
    """
    Parse the lexicon text format.

    A ``%`` line opens and closes the category header (``<id> <name>``
    lines); entry lines follow as ``<word-or-stem> <id>[,<id>...]``.
    ``composite`` lines may appear anywhere after the header.
    """
    categories: Dict[int, str] = {}
    literal_sets: Dict[str, Set[str]] = {}
    stem_sets: Dict[str, Set[str]] = {}
    composites: List[CompositeDef] = []
    section = "before"
    for line_number, raw in enumerate(source.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line == "%":
            if section == "before":
                section = "header"
            elif section == "header":
                if not categories:
                    raise LexiconParseError("empty category section", line_number)
                section = "entries"
            else:
                raise LexiconParseError("unexpected '%' after the header", line_number)
            continue
        if section == "before":
            raise LexiconParseError("lexicon must start with a '%' header", line_number)
        if section == "header":
            parts = line.split()
            if len(parts) != 2 or not parts[0].isdigit():
                raise LexiconParseError(f"malformed category line {line!r}", line_number)
            category_id, name = int(parts[0]), parts[1].lower()
            if category_id in categories or name in categories.values():
                raise LexiconParseError(f"duplicate category {line!r}", line_number)
            categories[category_id] = name
            continue
        if line.startswith("composite "):
            composites.append(
                _parse_composite(line, line_number, set(categories.values()))
            )
            continue
        parts = line.split(None, 1)
        if len(parts) != 2:
            raise LexiconParseError(f"entry without categories {line!r}", line_number)
        word = parts[0].casefold()
        ids = [item for item in re.split(r"[,\s]+", parts[1]) if item]
        names: Set[str] = set()
        for item in ids:
            if not item.isdigit():
                raise LexiconParseError(f"category id {item!r} is not a number", line_number)
            if int(item) not in categories:
                raise LexiconParseError(f"undeclared category id {item}", line_number)
            names.add(categories[int(item)])
        if word.endswith("*"):
            prefix = word[:-1]
            if not prefix or "*" in prefix:
                raise LexiconParseError(f"malformed stem {parts[0]!r}", line_number)
            if prefix in literal_sets:
                raise LexiconParseError(f"{prefix!r} is both literal and stem", line_number)
            stem_sets.setdefault(prefix, set()).update(names)
        else:
            if "*" in word:
                raise LexiconParseError(f"'*' only allowed at the end: {word!r}", line_number)
            if word in stem_sets:
                raise LexiconParseError(f"{word!r} is both literal and stem", line_number)
            literal_sets.setdefault(word, set()).update(names)
    if section == "before" or not categories:
        raise LexiconParseError("empty category section")
    if section == "header":
        raise LexiconParseError("category header is not closed with '%'")
    lexicon = Lexicon(
        categories=categories,
        literals={word: frozenset(names) for word, names in literal_sets.items()},
        stems={prefix: frozenset(names) for prefix, names in stem_sets.items()},
        composites=composites,
    )
    logger.debug(
        f"lexicon parsed: {len(categories)} categories, {len(literal_sets)} words, "
        f"{len(stem_sets)} stems, {len(composites)} composites"
    )
    return lexicon


def serialize_lexicon(lexicon: Lexicon) -> str:
    ids = {name: category_id for category_id, name in lexicon.categories.items()}
    lines = ["%"]
    lines += [f"{key}\t{lexicon.categories[key]}" for key in sorted(lexicon.categories)]
    lines.append("%")
    entries: List[Tuple[str, FrozenSet[str]]] = sorted(lexicon.literals.items()) + sorted(
        (prefix + "*", cats) for prefix, cats in lexicon.stems.items()
    )
    for word, cats in sorted(entries):
        lines.append(f"{word}\t{','.join(str(i) for i in sorted(ids[c] for c in cats))}")
    lines += [composite.serialize() for composite in lexicon.composites]
    return "\n".join(lines) + "\n"


def load_lexicon(path: str) -> Lexicon:
    try:
        with open(path, encoding="utf-8") as f:
            source = f.read()
    except OSError as e:
        raise ConfigError(f"cannot read lexicon {path}: {e}") from e
    try:
        return parse_lexicon(source)
    except LexiconParseError as e:
        raise LexiconParseError(f"{path}: {e}") from e


def compute_composite(profile: CategoryProfile, definition: CompositeDef) -> float:
    value = definition.base
    for name, weight in definition.weights.items():
        if name not in profile.percentages:
            raise ConfigError(f"composite {definition.name} needs category {name}")
        value += weight * profile.percentages[name]
    return min(max(value, definition.lo), definition.hi)


def _profile_from_hits(word_count: int, hits: Dict[str, int], lexicon: Lexicon) -> CategoryProfile:
    percentages = {
        name: (100.0 * hits[name] / word_count if word_count else 0.0)
        for name in lexicon.category_names
    }
    profile = CategoryProfile(word_count=word_count, hits=hits, percentages=percentages)
    profile.composites = {
        composite.name: compute_composite(profile, composite)
        for composite in lexicon.composites
    }
    return profile


def count_hits(tokens: Sequence[str], lexicon: Lexicon) -> Dict[str, int]:
    hits = {name: 0 for name in lexicon.category_names}
    for token in tokens:
        for name in lexicon.categories_of(token):
            hits[name] += 1
    return hits


def analyze(
    text: str, lexicon: Lexicon, measures: Optional[MeasureSet] = None
) -> CategoryProfile:
    if measures is not None:
        measures.check(lexicon)
    tokens = tokenize(text)
    return _profile_from_hits(len(tokens), count_hits(tokens, lexicon), lexicon)


def pool_profiles(profiles: Iterable[CategoryProfile], lexicon: Lexicon) -> CategoryProfile:
    """Token-weighted pooling: summed hits over summed word counts."""
    word_count = 0
    hits = {name: 0 for name in lexicon.category_names}
    for profile in profiles:
        word_count += profile.word_count
        for name, count in profile.hits.items():
            hits[name] += count
    return _profile_from_hits(word_count, hits, lexicon)


def overlap_report(
    text: str, lexicon: Lexicon, measures: MeasureSet
) -> List[Tuple[str, List[str]]]:
    """Tokens counted by two or more of the measured base categories, in text order."""
    measures.check(lexicon)
    measured = set(measures.names) & set(lexicon.category_names)
    report = []
    for token in tokenize(text):
        cats = sorted(lexicon.categories_of(token) & measured)
        if len(cats) >= 2:
            report.append((token, cats))
    return report


def profile_transcripts(
    transcripts: Sequence["Transcript"],
    lexicon: Lexicon,
    measures: MeasureSet,
    unit: ObservationUnit = ObservationUnit.response,
) -> List[Observation]:
    if not transcripts:
        raise InvalidArgumentError("no transcripts to profile")
    measures.check(lexicon)
    observations = []
    for transcript in transcripts:
        profiles = [analyze(exchange.agent, lexicon) for exchange in transcript.exchanges]
        if unit == ObservationUnit.response:
            observations += [
                Observation(
                    persona_id=transcript.persona_id,
                    model_id=transcript.model_id,
                    session_index=transcript.session_index,
                    turn=turn,
                    profile=profile,
                )
                for turn, profile in enumerate(profiles, start=1)
            ]
        else:
            observations.append(
                Observation(
                    persona_id=transcript.persona_id,
                    model_id=transcript.model_id,
                    session_index=transcript.session_index,
                    turn=0,
                    profile=pool_profiles(profiles, lexicon),
                )
            )
    empty = sum(1 for observation in observations if observation.profile.empty)
    if empty:
        logger.warning(f"{empty} observation(s) have no tokens")
    logger.info(
        f"{len(observations)} observation(s) from {len(transcripts)} transcript(s), unit {unit.value}"
    )
    return observations


OBSERVATION_COLUMNS = ["model_id", "persona_id", "session_index", "turn", "word_count"]


def write_observations(
    path: str, observations: Sequence[Observation], measures: MeasureSet
) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, mode="w", newline="", encoding="utf-8") as file:
        writer = csv.writer(file)
        writer.writerow(OBSERVATION_COLUMNS + measures.names)
        for observation in observations:
            writer.writerow(
                [
                    observation.model_id,
                    observation.persona_id,
                    observation.session_index,
                    observation.turn,
                    observation.profile.word_count,
                ]
                + [repr(observation.profile.value(name)) for name in measures.names]
            )
    logger.info(f"{len(observations)} observation(s) written to {path}")


def read_observations(path: str) -> Tuple[List[Observation], List[str]]:
    """
    Load an observations CSV. Restored profiles carry the measure values only
    (in `percentages`), which is all the regression stage reads.
    """
    if not os.path.isfile(path):
        raise ConfigError(f"observations file {path} not found")
    with open(path, newline="", encoding="utf-8") as file:
        rows = list(csv.reader(file))
    if not rows or rows[0][: len(OBSERVATION_COLUMNS)] != OBSERVATION_COLUMNS:
        raise ConfigError(f"{path} is not an observations file")
    names = rows[0][len(OBSERVATION_COLUMNS) :]
    observations = []
    for row in rows[1:]:
        model_id, persona_id, session_index, turn, word_count = row[: len(OBSERVATION_COLUMNS)]
        values = [float(item) for item in row[len(OBSERVATION_COLUMNS) :]]
        observations.append(
            Observation(
                persona_id=persona_id,
                model_id=model_id,
                session_index=int(session_index),
                turn=int(turn),
                profile=CategoryProfile(
                    word_count=int(word_count),
                    hits={},
                    percentages=dict(zip(names, values)),
                ),
            )
        )
    logger.debug(f"{len(observations)} observation(s) read from {path}")
    return observations, names
