from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Workbench configuration with environment variable support"""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_prefix="SIMCATE_",
        case_sensitive=False,
        extra="ignore",
        protected_namespaces=("settings_",),
    )

    # Sweep defaults
    output_dir: str = "results"
    threads: int = 1
    default_seed: int = 0

    # Logging
    log_level: str = "INFO"

    # Server Configuration
    host: str = "0.0.0.0"
    port: int = 8000

    # Model registry
    model_ttl_minutes: int = 60
    max_upload_bytes: int = 5 * 1024 * 1024


settings = Settings()
