"""
Configuration module for the exceptional nexus toolkit.
Handles loading and accessing configuration from YAML file.
"""
import os
import yaml
from typing import Any, Dict


THREADS_ENV = 'EXNEXUS_THREADS'


class Config:
    """Configuration manager for the toolkit."""

    def __init__(self, config_path: str = "config.yaml"):
        """
        Initialize configuration.

        Args:
            config_path: Path to configuration YAML file
        """
        self.config_path = config_path
        self.config_data: Dict[str, Any] = {}
        self.load()

    def load(self) -> None:
        """Load configuration from YAML file."""
        with open(self.config_path, 'r') as f:
            self.config_data = yaml.safe_load(f) or {}

        # Set convenience properties
        self.output = self.config_data.get('output', {})
        self.logging = self.config_data.get('logging', {})
        self.spectrum = self.config_data.get('spectrum', {})
        self.perturbation = self.config_data.get('perturbation', {})
        self.dynamics = self.config_data.get('dynamics', {})
        self.fitting = self.config_data.get('fitting', {})
        self.runtime = self.config_data.get('runtime', {})

    def get_output_config(self) -> Dict[str, Any]:
        """
        Get output configuration.

        Returns:
            Output configuration dictionary
        """
        return self.output

    def get_logging_config(self) -> Dict[str, Any]:
        """
        Get logging configuration.

        Returns:
            Logging configuration dictionary
        """
        return self.logging

    def get_spectrum_config(self) -> Dict[str, Any]:
        return self.spectrum

    def get_perturbation_config(self) -> Dict[str, Any]:
        return self.perturbation

    def get_dynamics_config(self) -> Dict[str, Any]:
        return self.dynamics

    def get_fitting_config(self) -> Dict[str, Any]:
        return self.fitting

    def max_workers(self) -> int:
        """
        Worker thread count for parameter sweeps.

        The EXNEXUS_THREADS environment variable overrides `runtime.max_workers`.

        Returns:
            Positive thread count
        """
        env_value = os.environ.get(THREADS_ENV)
        if env_value:
            try:
                return max(1, int(env_value))
            except ValueError:
                pass
        return max(1, int(self.runtime.get('max_workers', 1)))

    def get(self, key: str, default: Any = None) -> Any:
        """
        Get configuration value by dot-separated key path.

        Args:
            key: Dot-separated key path (e.g., 'perturbation.eps')
            default: Default value if key not found

        Returns:
            Configuration value or default
        """
        keys = key.split('.')
        value = self.config_data

        for k in keys:
            if isinstance(value, dict) and k in value:
                value = value[k]
            else:
                return default

        return value

    def validate_required_fields(self) -> bool:
        """
        Validate that required configuration fields are present.

        Returns:
            True if all required fields present, False otherwise
        """
        required_fields = [
            'output.directory',
            'logging.level',
        ]

        for field in required_fields:
            if self.get(field) is None:
                return False

        return True
