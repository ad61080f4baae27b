"""
ClockGuard - Main Entry Point

Detects GNSS time attacks by comparing a GNSS-disciplined clock against an
ensemble of free-running local oscillators through a Kalman filter.
"""
import sys
from pathlib import Path

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent))

from modules.cli import main as cli_main
from utils.logger import setup_logger

logger = setup_logger(__name__)


def main():
    """Main entry point for the ClockGuard command line."""
    try:
        exit_code = cli_main(sys.argv[1:])
    except KeyboardInterrupt:
        print("\n\n👋 Interrupted")
        logger.info("Interrupted by user")
        exit_code = 130
    sys.exit(exit_code)


if __name__ == "__main__":
    main()
