#!/usr/bin/env python
"""Django's command-line utility; experiments run as `manage.py deeplimit <command> --config PATH`."""
import os
import sys
from pathlib import Path


def main():
    """Run administrative tasks."""
    # Load .env from the project root (overrides stale values in the shell)
    try:
        from dotenv import load_dotenv
        load_dotenv(Path(__file__).resolve().parent / ".env", override=True)
    except ModuleNotFoundError:
        pass

    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "deeplimit_site.settings")
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Are you sure it's installed and "
            "available on your PYTHONPATH environment variable? Did you "
            "forget to activate a virtual environment?"
        ) from exc
    execute_from_command_line(sys.argv)


if __name__ == '__main__':
    main()
