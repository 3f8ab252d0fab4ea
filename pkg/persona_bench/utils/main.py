import os
import zlib
from typing import Callable, Dict, Iterable, Optional, TypeVar

import numpy as np
from dotenv import dotenv_values

from persona_bench.utils.errors import ConfigError

_T = TypeVar("_T")

SECRET_KEY_MARKERS = ("api_key", "apikey", "access_token", "secret", "password")


def first(
    iterable: Iterable[_T], condition: Callable[[_T], bool] = lambda x: True
) -> Optional[_T]:
    return next((x for x in iterable if condition(x)), None)


def load_key_values(path: str) -> Dict[str, str]:
    """
    Read a `KEY=value` config file into a dict with lowercase keys.

    Empty values are dropped so model defaults apply. Secrets are refused:
    the API key is only ever taken from the environment.
    """
    if not os.path.isfile(path):
        raise ConfigError(f"config file {path} not found")
    values: Dict[str, str] = {}
    for key, value in dotenv_values(path, encoding="utf-8").items():
        lowered = key.strip().lower()
        if any(marker in lowered for marker in SECRET_KEY_MARKERS):
            raise ConfigError(
                f"{path}: key {key} looks like a credential, "
                "set it in the environment instead"
            )
        if value is None or value.strip() == "":
            continue
        values[lowered] = value
    return values


def resolve_path(base_file: str, value: str) -> str:
    if os.path.isabs(value):
        return value
    return os.path.normpath(os.path.join(os.path.dirname(base_file), value))


def derive_seed(root_seed: int, *labels: str) -> int:
    """Stable 32-bit child seed for the given labels, independent of call order."""
    entropy = [root_seed & 0xFFFFFFFF] + [
        zlib.crc32(label.encode("utf-8")) for label in labels
    ]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])
