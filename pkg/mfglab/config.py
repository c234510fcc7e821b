from pydantic_settings import BaseSettings, SettingsConfigDict

class Settings(BaseSettings):
    LOG: str = "INFO"
    THREADS: int = 1
    OUTPUT_ROOT: str = "runs"

    model_config = SettingsConfigDict(env_prefix="MFG_", env_file=".env", extra="ignore")

settings = Settings()
