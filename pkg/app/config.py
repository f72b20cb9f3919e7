import os
from dotenv import load_dotenv

load_dotenv()


def _int_env(name: str, default: int) -> int:
    raw = os.getenv(name, "")
    return int(raw) if raw.strip() else default


class Settings:
    LOG_LEVEL: str = os.getenv("BRANCHFLOW_LOG_LEVEL", "INFO").upper()
    OUTPUT_DIR: str = os.getenv("BRANCHFLOW_OUTPUT_DIR", "out")
    # threads used to run replicate blocks; results never depend on it
    WORKERS: int = _int_env("BRANCHFLOW_WORKERS", 1)
    # replicates per RNG block; part of the reproducibility key
    BLOCK_SIZE: int = _int_env("BRANCHFLOW_BLOCK_SIZE", 250)
    # targets one simulated replicate may reach before the run is aborted
    MAX_POPULATION: int = _int_env("BRANCHFLOW_MAX_POPULATION", 1_000_000)


settings = Settings()
