"""
Configuration management for ClockGuard.
"""
import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()


class Config:
    """Tool configuration loaded from environment variables."""
    
    # Tool identity
    TOOL_NAME: str = "ClockGuard"
    TOOL_VERSION: str = "1.0.0"
    
    # Paths
    OUTPUT_DIR: str = os.getenv("CLOCKGUARD_OUTPUT_DIR", "results")
    PRESETS_DIR: str = os.getenv(
        "CLOCKGUARD_PRESETS_DIR", str(Path(__file__).parent / "presets")
    )
    CALIBRATIONS_DIR: str = os.getenv(
        "CLOCKGUARD_CALIBRATIONS_DIR", str(Path(__file__).parent / "calibrations")
    )
    
    # Simulation / filter defaults
    DEFAULT_TAU: float = 1.0  # seconds
    DEFAULT_QUANTIZATION: float = 5e-9  # seconds
    MIN_MEASUREMENT_VARIANCE: float = 1e-24  # s^2, floor on r_diag
    
    # Detection defaults
    DEFAULT_MULTIPLIER: float = 6.0
    DEFAULT_CONFIRM_EPOCHS: int = 1
    DEFAULT_WARMUP: float = 30.0  # seconds
    MIN_CALIBRATION_EPOCHS: int = 100
    MIN_CHARACTERIZE_EPOCHS: int = 1000
    CALIBRATION_SEED_OFFSET: int = 10007
    
    # Batch
    BATCH_WORKERS: int = int(os.getenv("CLOCKGUARD_BATCH_WORKERS", "0"))
    
    # Logging Configuration
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_FILE: str = os.getenv("CLOCKGUARD_LOG_FILE", "logs/clockguard.log")
    
    @classmethod
    def validate(cls) -> bool:
        """
        Validate numeric defaults.
        
        Returns:
            bool: True if configuration is valid
            
        Raises:
            ValueError: If a default is out of range
        """
        if cls.DEFAULT_TAU <= 0:
            raise ValueError("DEFAULT_TAU must be positive")
        if cls.DEFAULT_QUANTIZATION < 0:
            raise ValueError("DEFAULT_QUANTIZATION must be non-negative")
        if cls.DEFAULT_MULTIPLIER <= 0:
            raise ValueError("DEFAULT_MULTIPLIER must be positive")
        if cls.DEFAULT_CONFIRM_EPOCHS < 1:
            raise ValueError("DEFAULT_CONFIRM_EPOCHS must be at least 1")
        if cls.DEFAULT_WARMUP < 0:
            raise ValueError("DEFAULT_WARMUP must be non-negative")
        if cls.BATCH_WORKERS < 0:
            raise ValueError("CLOCKGUARD_BATCH_WORKERS must be non-negative")
        if cls.LOG_LEVEL.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"Unknown LOG_LEVEL: {cls.LOG_LEVEL}")
        return True
    
    @classmethod
    def display(cls) -> None:
        """Display current configuration."""
        print(f"=== {cls.TOOL_NAME} v{cls.TOOL_VERSION} ===")
        print(f"Output dir: {cls.OUTPUT_DIR}")
        print(f"Presets: {cls.PRESETS_DIR}")
        print(f"Detection: {cls.DEFAULT_MULTIPLIER}σ, k={cls.DEFAULT_CONFIRM_EPOCHS}, "
              f"warm-up {cls.DEFAULT_WARMUP}s")
        print(f"Log Level: {cls.LOG_LEVEL}")
        print("=" * 50)
