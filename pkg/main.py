#!/usr/bin/env python3
"""
CAD Sequence Toolkit - Main Entry Point
Reverse engineering of sketch-extrude CAD sequences from point clouds
"""

import os
import sys

# Add current directory to path for imports
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from utils import logger


def main(argv=None) -> int:
    """Main entry point"""
    try:
        # Check Python version
        if sys.version_info < (3, 10):
            print("❌ Python 3.10+ required")
            return 1

        import cli
        return cli.main(argv)

    except KeyboardInterrupt:
        logger("⚠️ Interrupted by user", "WARNING")
        return 130
    except Exception as e:
        logger(f"❌ Fatal error: {str(e)}", "ERROR")
        import traceback
        logger(f"Full traceback: {traceback.format_exc()}", "ERROR")
        return 1


if __name__ == "__main__":
    sys.exit(main())
