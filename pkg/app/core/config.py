import os
from pydantic import BaseModel
from dotenv import load_dotenv
from functools import lru_cache

load_dotenv()


def _flag(name: str, default: str) -> bool:
    return os.getenv(name, default).strip().lower() in ("1", "true", "yes", "on")


class Settings(BaseModel):
    API_PREFIX: str = "/api"
    PROJECT_NAME: str = "M-DSL Simulator"
    OUTPUT_ROOT: str = os.getenv("MDSL_OUTPUT_ROOT", "runs")
    LOG_LEVEL: str = os.getenv("MDSL_LOG_LEVEL", "INFO")
    LOG_DIR: str = os.getenv("MDSL_LOG_DIR", "logs")
    LOG_TO_FILE: bool = _flag("MDSL_LOG_TO_FILE", "true")
    # worker threads used by the orchestrator's local phase
    PARALLELISM: int = int(os.getenv("MDSL_PARALLELISM", "1"))
    CORS_ALLOW_ORIGINS: str = os.getenv("CORS_ALLOW_ORIGINS", "")


@lru_cache
def get_settings():
    return Settings()
