import logging

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from policy.exceptions import (
    ConfigurationError,
    DatasetError,
    EstimationError,
    InfeasibleBudgetError,
    LearnerError,
)

logger = logging.getLogger(__name__)


class PolicyCommand(BaseCommand):
    """Base for the estimation commands.

    Subclasses implement ``run``; exceptions from the engine become
    ``CommandError`` with exit code 2 for an infeasible budget and 1 for
    everything else.
    """

    def add_threads_argument(self, parser):
        parser.add_argument(
            "--threads", type=int, default=settings.POLICY.get("THREADS", -1),
            help="Worker pool size (-1 = all cores)",
        )

    def handle(self, *args, **options):
        try:
            self.run(**options)
        except CommandError:
            raise
        except InfeasibleBudgetError as exc:
            raise CommandError(f"validation: {exc}", returncode=2) from exc
        except DatasetError as exc:
            raise CommandError(f"data: {'; '.join(exc.messages)}", returncode=1) from exc
        except ConfigurationError as exc:
            raise CommandError(f"config: {'; '.join(exc.messages)}", returncode=1) from exc
        except LearnerError as exc:
            raise CommandError(f"learners: {exc}", returncode=1) from exc
        except EstimationError as exc:
            raise CommandError(f"estimation: {exc}", returncode=1) from exc
        except OSError as exc:
            raise CommandError(f"I/O error: {exc}", returncode=1) from exc

    def run(self, **options):
        raise NotImplementedError

    def check_threads(self, threads: int) -> int:
        if threads == 0 or threads < -1:
            raise CommandError("threads must be -1 or a positive integer")
        return threads

    def warn(self, message: str):
        logger.warning(message)
        self.stderr.write(self.style.WARNING(f"⚠ {message}"))
