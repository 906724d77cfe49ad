"""
Orchestra simulator - federated representation learning by balanced clustering
Main entry point; see `python main.py --help` for the subcommands.
"""

import sys

from dotenv import load_dotenv

from app.cli import main

# Load environment variables from local.env
load_dotenv(dotenv_path="local.env")


if __name__ == "__main__":
    sys.exit(main())
