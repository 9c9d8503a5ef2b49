"""Shared plumbing for the WavFT management commands.

Exit codes: 0 on success, 1 when the configuration or arguments fail
validation, 2 when a run fails at runtime.
"""

import logging
from pathlib import Path

from django.conf import settings
from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from core.config import PRESETS, load_config
from core.exceptions import ConfigurationError, WavFTError

logger = logging.getLogger(__name__)

VALIDATION_EXIT = 1
RUNTIME_EXIT = 2


def format_validation_error(exc):
    if hasattr(exc, "message_dict"):
        return "; ".join(f"{key}: {' '.join(messages)}" for key, messages in sorted(exc.message_dict.items()))
    return " ".join(exc.messages)


class WavFTCommand(BaseCommand):
    def add_config_arguments(self, parser):
        parser.add_argument("--config", help="TOML or JSON run config")
        parser.add_argument("--preset", choices=PRESETS, help="preset defaults the config is layered on")
        parser.add_argument(
            "--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
            help="override one config value; repeatable",
        )

    def build_config(self, options, flags=None):
        preset = options.get("preset")
        if preset is None and not options.get("config"):
            preset = settings.WAVFT_DEFAULT_PRESET
        return load_config(options.get("config"), preset, options.get("overrides") or [], flags)

    def output_dir(self, value, default_name):
        path = Path(value) if value else Path(settings.WAVFT_OUTPUT_ROOT) / default_name
        path.mkdir(parents=True, exist_ok=True)
        return path

    def stage(self, number, message):
        self.stdout.write(f"\n{number}. {message}")

    def execute(self, *args, **options):
        try:
            return super().execute(*args, **options)
        except ValidationError as exc:
            raise CommandError(f"invalid configuration: {format_validation_error(exc)}",
                               returncode=VALIDATION_EXIT) from exc
        except ConfigurationError as exc:
            raise CommandError(f"invalid configuration: {exc}", returncode=VALIDATION_EXIT) from exc
        except WavFTError as exc:
            logger.exception("command failed")
            raise CommandError(f"{type(exc).__name__}: {exc}", returncode=RUNTIME_EXIT) from exc
        except OSError as exc:
            logger.exception("command failed")
            raise CommandError(f"I/O error: {exc}", returncode=RUNTIME_EXIT) from exc
