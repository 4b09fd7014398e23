from __future__ import annotations

import logging

from django.core.management.base import BaseCommand, CommandError

from deeplimit.constants import COMMANDS
from deeplimit.dispatch import USAGE, dispatch
from deeplimit.exceptions import ConfigError
from deeplimit.runconfig import parse_config

logger = logging.getLogger(__name__)


class Command(BaseCommand):
    help = "Run a deep-limit experiment driver: " + ", ".join(COMMANDS)

    def add_arguments(self, parser):
        parser.add_argument("experiment_command", nargs="?", default="", help="One of: " + ", ".join(COMMANDS))
        parser.add_argument("--config", dest="config", help="Path to the JSON run configuration")
        parser.add_argument("--out", dest="out", default=None, help="Output directory (overrides output_dir)")
        parser.add_argument("--seed", dest="seed", type=int, default=None, help="Unsigned 64-bit seed (overrides seed)")
        parser.add_argument("--threads", dest="threads", type=int, default=None, help="Threads for multistart runs and independent ladder levels")

    def handle(self, *args, **options):
        command = options["experiment_command"]
        if command not in COMMANDS:
            self.stderr.write(USAGE)
            raise CommandError(f"unknown command {command!r}" if command else "missing command", returncode=2)
        if not options.get("config"):
            self.stderr.write(USAGE)
            raise CommandError("--config is required", returncode=2)

        try:
            cfg = parse_config(options["config"])
            cfg = cfg.with_overrides(seed=options.get("seed"), threads=options.get("threads"))
        except ConfigError as e:
            raise CommandError(f"invalid config: {e}") from e

        status = dispatch(command, cfg, out_dir=options.get("out"), threads=options.get("threads"))
        if status != 0:
            raise CommandError(f"{command} finished with status {status}; see the log and manifest.json", returncode=status)
        self.stdout.write(self.style.SUCCESS(f"{command}: done"))
