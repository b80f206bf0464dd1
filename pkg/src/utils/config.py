"""
Configuration management for GrassGP
"""

from pathlib import Path
from typing import Any, Dict, List

import yaml
from loguru import logger
from pydantic import ValidationError

from ..core.ko_bench import KoConfig
from ..core.pipeline import PipelineConfig


class Config:
    """YAML-backed configuration with dot-notation access"""

    def __init__(self, config_path: str = "config.yaml"):
        self.config_path = Path(config_path)
        self._config: Dict[str, Any] = {}
        self.load_config()

    def load_config(self):
        """Load configuration from file; a missing or unreadable file leaves the defaults"""
        try:
            if self.config_path.exists():
                with open(self.config_path, "r", encoding="utf-8") as f:
                    self._config = yaml.safe_load(f) or {}
                logger.info(f"✅ Configuration loaded from {self.config_path}")
            else:
                logger.warning(f"⚠️ Configuration file not found: {self.config_path}, using defaults")
                self._config = {}
        except (OSError, yaml.YAMLError) as e:
            logger.error(f"❌ Error loading configuration: {e}")
            self._config = {}

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get configuration value using dot notation

        Args:
            key: Configuration key (supports dot notation like 'clustering.n_start')
            default: Default value if key not found

        Returns:
            Configuration value or default
        """
        value = self._config
        try:
            for k in key.split("."):
                value = value[k]
            return value
        except (KeyError, TypeError):
            return default

    def set(self, key: str, value: Any):
        """Set configuration value using dot notation"""
        keys = key.split(".")
        config = self._config
        for k in keys[:-1]:
            if not isinstance(config.get(k), dict):
                config[k] = {}
            config = config[k]
        config[keys[-1]] = value

    def save_config(self):
        """Save current configuration to file"""
        try:
            with open(self.config_path, "w", encoding="utf-8") as f:
                yaml.dump(self._config, f, default_flow_style=False, indent=2)
            logger.info(f"💾 Configuration saved to {self.config_path}")
        except OSError as e:
            logger.error(f"❌ Error saving configuration: {e}")

    def get_logging_config(self) -> Dict[str, Any]:
        return self.get("logging", {}) or {}

    def _section(self, name: str) -> Dict[str, Any]:
        section = self.get(name, {}) or {}
        if not isinstance(section, dict):
            raise ValueError(f"Configuration section '{name}' must be a mapping")
        return dict(section)

    def get_pipeline_config(self) -> PipelineConfig:
        """
        Pipeline settings assembled from the reduction, clustering, karcher,
        gp and pipeline sections

        Raises:
            pydantic.ValidationError: on unknown keys or out-of-range values
        """
        data: Dict[str, Any] = {}
        data.update(self._section("reduction"))
        data.update(self._section("pipeline"))
        for name in ("clustering", "karcher", "gp"):
            section = self._section(name)
            if section:
                data[name] = section
        jobs = self.get("app.max_concurrent_jobs")
        if jobs is not None:
            data["max_workers"] = jobs
        return PipelineConfig.model_validate(data)

    def get_ko_config(self) -> KoConfig:
        return KoConfig.model_validate(self._section("ko"))

    def validate_config(self) -> List[str]:
        """
        Validate configuration and return list of issues

        Returns:
            List of configuration issues; empty when every section is valid
        """
        issues = []
        for name, build in (("pipeline", self.get_pipeline_config), ("ko", self.get_ko_config)):
            try:
                build()
            except (ValidationError, ValueError) as e:
                issues.append(f"Invalid {name} settings: {e}")

        level = str(self.get("logging.level", "INFO")).upper()
        if level not in {"TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR", "CRITICAL"}:
            issues.append(f"Unknown logging level: {level}")
        return issues
