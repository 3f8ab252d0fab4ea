__version__ = "0.1.0"

from persona_bench.app import app
from persona_bench.bench import Bench as Bench
from persona_bench.utils.logger import logger as logger


def main() -> None:
    app()
