import logging

from django.core.management.base import BaseCommand, CommandError

from evacanalytics.exceptions import EvacAnalyticsError, StageError
from pipeline.config import FIELD_NAMES, PipelineConfig, load_config
from pipeline.service import PipelineService

logger = logging.getLogger(__name__)


class PipelineCommand(BaseCommand):
    """
    Base for the pipeline management commands.

    Every config field is exposed as a ``--field-name`` flag that wins over the
    config file. Errors leave through ``CommandError`` carrying the exit code of
    their class (2 config, 3 data, 4 fit).
    """

    requires_system_checks = []

    def add_arguments(self, parser):
        parser.add_argument('--config', help='dotenv-style KEY=VALUE config file')
        group = parser.add_argument_group('config overrides')
        for name in FIELD_NAMES:
            group.add_argument(f"--{name.replace('_', '-')}", dest=name, default=None, metavar='VALUE')

    def load(self, options) -> PipelineConfig:
        overrides = {name: options.get(name) for name in FIELD_NAMES}
        return load_config(options.get('config'), overrides)

    def handle(self, *args, **options):
        try:
            cfg = self.load(options)
        except EvacAnalyticsError as e:
            raise CommandError(str(e), returncode=e.exit_code)

        service = PipelineService(cfg)
        try:
            written = self.execute_stage(service, options)
            service.writer.write_config()
        except StageError as e:
            service.write_error(e)
            raise CommandError(str(e), returncode=e.exit_code)
        except EvacAnalyticsError as e:
            raise CommandError(str(e), returncode=e.exit_code)

        for path in written or ():
            self.stdout.write(str(path))

    def execute_stage(self, service: PipelineService, options):
        raise NotImplementedError('subclasses of PipelineCommand must provide an execute_stage() method')


def single_stage(writer_name: str, stage: str, help_text: str):
    """Command class writing one artifact through ``PipelineService.<writer_name>``."""

    class Command(PipelineCommand):
        help = help_text

        def execute_stage(self, service, options):
            with service.stage(stage):
                result = getattr(service, writer_name)()
            return result if isinstance(result, list) else [result]

    return Command
