"""Configuration from .env and environment variables."""
import logging
import os
import sys
from pathlib import Path

from pydantic import Field
from pydantic_settings import BaseSettings, SettingsConfigDict

PROJECT_ROOT = Path(__file__).resolve().parent.parent


class Settings(BaseSettings):
    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        extra="ignore",
    )

    # Каталоги: данные (WDBC), конфиги дискретных моделей, результаты
    isir_data_dir: str = "data"
    config_dir: str = "configs"
    output_dir: str = "out"

    # 0: по числу ядер машины
    workers: int = Field(default=0, ge=0)
    log_level: str = "INFO"

    # Дискретная лаборатория
    enumeration_budget: int = Field(default=10**8, gt=0)
    mc_samples: int = Field(default=100_000, gt=0)
    grid_lo: float = 2.0
    grid_hi: float = 150.0
    grid_step: float = 0.01

    # Адаптация lambda и пилотные прогоны
    adapt_beta: float = Field(default=0.75, gt=0)
    adapt_n_max: int = Field(default=2**13 + 1, ge=2)
    burn_in_fraction: float = Field(default=0.10, ge=0, lt=1)
    pilot_iters: int = Field(default=10_000, gt=0)

    # Ядро i-SIR: размер блока предложений на один RNG-подпоток
    proposal_block: int = Field(default=256, gt=0)
    init_max_attempts: int = Field(default=1000, gt=0)

    laplace_tol: float = Field(default=1e-8, gt=0)
    laplace_max_iter: int = Field(default=100, gt=0)

    app_host: str = "0.0.0.0"
    app_port: int = 8000

    def _resolve(self, value: str, base_dir: Path | None = None) -> Path:
        p = Path(value)
        if not p.is_absolute():
            base = base_dir if base_dir is not None else PROJECT_ROOT
            p = base / p
        return p

    def get_data_path(self, filename: str = "wdbc.data", base_dir: Path | None = None) -> Path:
        return self._resolve(self.isir_data_dir, base_dir) / filename

    def get_config_path(self, name: str, base_dir: Path | None = None) -> Path:
        """Model config by file name or bare name (`experiment1` -> configs/experiment1.json)."""
        p = Path(name)
        if p.suffix == "":
            p = p.with_suffix(".json")
        if p.is_absolute() or p.exists():
            return p
        return self._resolve(self.config_dir, base_dir) / p

    def get_output_dir(self, override: str | None = None) -> Path:
        return self._resolve(override or self.output_dir)

    def effective_workers(self, override: int | None = None) -> int:
        n = override if override is not None else self.workers
        return n if n > 0 else (os.cpu_count() or 1)


settings = Settings()


def configure_logging(level: str | None = None) -> logging.Logger:
    """Логи приложения в stderr, один обработчик на логгер `app`."""
    app_log = logging.getLogger("app")
    app_log.setLevel((level or settings.log_level).upper())
    if not app_log.handlers:
        h = logging.StreamHandler(sys.stderr)
        h.setFormatter(logging.Formatter("%(levelname)s: %(name)s: %(message)s"))
        app_log.addHandler(h)
    app_log.propagate = False
    return app_log
