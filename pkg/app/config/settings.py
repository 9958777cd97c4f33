import os
from pathlib import Path


class Settings:
    # Environment overrides mirror the CLI flag names
    ENV_PREFIX: str = "TOSFORGE"

    OUT_DIR: str = os.getenv("TOSFORGE_OUT", "runs/default")
    LOG_LEVEL: str = os.getenv("TOSFORGE_LOG_LEVEL", "INFO")

    # Deterministic kernels - required for bit-identical training reruns
    DETERMINISTIC: bool = os.getenv("TOSFORGE_DETERMINISTIC", "false").lower() == "true"

    # Progress bars - set to False for CI logs
    PROGRESS: bool = os.getenv("TOSFORGE_PROGRESS", "true").lower() == "true"

    CONFIG_DIR: Path = Path(__file__).resolve().parent

    @property
    def REFERENCE_CONFIGS(self) -> dict:
        """Shipped reference config per experiment"""
        return {
            "polygon": self.CONFIG_DIR / "polygon.yaml",
            "sprite": self.CONFIG_DIR / "sprite.yaml",
            "sprite_vr": self.CONFIG_DIR / "sprite_vr.yaml",
        }


settings = Settings()
