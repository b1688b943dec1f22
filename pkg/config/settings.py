"""
CascadeSplit - Configuration Settings
Process-level configuration: logging, service endpoint, run directory, cost constants.
"""

import os
from pathlib import Path
from typing import Dict, Tuple
from dataclasses import dataclass, field
from dotenv import load_dotenv

from core.exceptions import ConfigurationError

# Load environment variables
load_dotenv()


# project paths
PROJECT_ROOT = Path(__file__).parent.parent
LOGS_DIR = PROJECT_ROOT / "logs"

# exit compute costs in milliseconds from on-device measurements: (exit 1, exit 2 end-to-end)
DEVICE_PROFILES: Dict[str, Tuple[float, float]] = {
    'samsung-s10': (38.0, 74.0),
    'iphone-11': (34.0, 68.0),
}


def parse_address(address: str) -> Tuple[str, int]:
    """Split 'host:port' into its parts"""
    host, sep, port = address.rpartition(':')
    if not sep or not host or not port.isdigit():
        raise ConfigurationError(f"address must look like host:port, got {address!r}")
    return host, int(port)


# logging configuration
@dataclass
class LoggingConfig:
    """Logging Configuration"""
    level: str = os.getenv('CASCADESPLIT_LOG_LEVEL', 'INFO')
    format: str = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    file_path: Path = Path(os.getenv('CASCADESPLIT_LOG_FILE', str(LOGS_DIR / 'cascadesplit.log')))
    max_bytes: int = 10_485_760  # 10 MB
    backup_count: int = 5


# offload service configuration
@dataclass
class ServiceConfig:
    """Split-inference server endpoint"""
    address: str = os.getenv('CASCADESPLIT_ADDR', '127.0.0.1:7461')
    timeout_ms: float = float(os.getenv('CASCADESPLIT_TIMEOUT_MS', '1000'))
    metrics_port: int = int(os.getenv('CASCADESPLIT_METRICS_PORT', '0'))
    max_payload_bytes: int = 16 * 1024 * 1024

    def validate(self) -> bool:
        """Validate service configuration"""
        parse_address(self.address)
        if self.timeout_ms <= 0:
            raise ConfigurationError("CASCADESPLIT_TIMEOUT_MS must be positive")
        return True


# run directory configuration
@dataclass
class RunDirConfig:
    """Artifact layout"""
    root: Path = Path(os.getenv('CASCADESPLIT_RUN_DIR', 'runs'))
    subdirs: Tuple[str, ...] = ('data', 'models', 'dus', 'replays', 'reports')


# cost constants
@dataclass
class CostConfig:
    """Compute and communication costs in millisecond-equivalents"""
    device: str = os.getenv('CASCADESPLIT_DEVICE', 'samsung-s10')
    communication_cost: float = float(os.getenv('CASCADESPLIT_COMM_COST', '100'))
    profiles: Dict[str, Tuple[float, float]] = field(default_factory=lambda: dict(DEVICE_PROFILES))

    def exit_costs(self) -> Tuple[float, float]:
        """Exit-1 and end-to-end exit-2 costs of the selected device"""
        if self.device not in self.profiles:
            raise ConfigurationError(
                f"unknown device profile {self.device!r}; known: {sorted(self.profiles)}"
            )
        return self.profiles[self.device]


# main configuration container
class Config:
    """Main Configuration Container"""

    def __init__(self):
        self.logging = LoggingConfig()
        self.service = ServiceConfig()
        self.run_dir = RunDirConfig()
        self.cost = CostConfig()

    def validate(self) -> bool:
        """Validate critical configurations"""
        self.service.validate()
        self.cost.exit_costs()
        return True

    def status(self) -> Dict[str, str]:
        """Resolved settings as plain strings"""
        exit1, exit2 = self.cost.exit_costs()
        return {
            'log_level': self.logging.level,
            'log_file': str(self.logging.file_path),
            'address': self.service.address,
            'timeout_ms': str(self.service.timeout_ms),
            'run_dir': str(self.run_dir.root),
            'device': f"{self.cost.device} (exit1={exit1}, exit2={exit2})",
            'communication_cost': str(self.cost.communication_cost),
        }


# global config
config = Config()
settings = config


def get_config() -> Config:
    """Get global configuration instance"""
    return config
