import logging
from dataclasses import replace

from pipeline.commands import PipelineCommand
from synth.generator import ScenarioConfig, default_lgus, generate_scenario

logger = logging.getLogger(__name__)


class Command(PipelineCommand):
    help = 'Generate a synthetic scenario (gps, lgu, intensity, census and ground-truth CSVs)'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--lgus', type=int, default=150, help='number of LGUs')
        parser.add_argument('--min-users', type=int, default=500)
        parser.add_argument('--max-users', type=int, default=5000)
        parser.add_argument('--days-before', type=int, default=14)
        parser.add_argument('--days-after', type=int, default=7)
        parser.add_argument('--fixes-per-day', type=float, default=40.0)
        parser.add_argument('--gps-noise-m', type=float, default=30.0)

    def execute_stage(self, service, options):
        cfg = service.cfg
        scenario_cfg = replace(
            ScenarioConfig(),
            seed=cfg.seed,
            lgus=default_lgus(options['lgus'], options['min_users'], options['max_users'], seed=cfg.seed),
            event_time=cfg.event_time,
            tz_offset_s=cfg.tz_offset_s,
            days_before=options['days_before'],
            days_after=options['days_after'],
            fixes_per_day=options['fixes_per_day'],
            gps_noise_m=options['gps_noise_m'],
            sample_rate=cfg.sample_rate,
            cell_size_m=cfg.cell_size_m,
        )
        with service.stage('synth'):
            paths = generate_scenario(scenario_cfg).write(cfg.output_dir)
        logger.info('Wrote synthetic scenario to %s', cfg.output_dir)
        return list(paths.values())
