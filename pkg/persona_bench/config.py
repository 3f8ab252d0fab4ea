from functools import lru_cache

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """
    Define the settings (config).
    """

    # http chat backend, read from the environment only
    chat_api_key: str = ""

    # campaign defaults
    default_seed: int = 20240101
    default_parallel: int = 1
    transcript_lock_timeout: int = 30

    # log file
    log_file_path: str = "persona-bench.log"
    stderr_log_level: str = "INFO"
    model_config = SettingsConfigDict(
        env_file=".env", env_file_encoding="utf-8", extra="ignore"
    )


@lru_cache()
def get_settings() -> Settings:
    return Settings()


def set_settings(new_settings: Settings) -> None:
    for field, value in new_settings.model_dump(exclude_unset=True).items():
        setattr(settings, field, value)


settings: Settings = get_settings()
