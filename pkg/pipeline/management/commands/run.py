from django.core.management.base import CommandError

from pipeline.commands import PipelineCommand
from pipeline.service import run_pipeline


class Command(PipelineCommand):
    help = 'Run every stage from GPS ingest to reports and write the run manifest'

    def execute_stage(self, service, options):
        status = run_pipeline(service.cfg)
        if status != 0:
            raise CommandError(
                f"pipeline failed; see {service.writer.path('error.json')}", returncode=status
            )
        return [service.writer.path('manifest.json')]
