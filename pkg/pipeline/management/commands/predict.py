from analytics_core.fragility import FragilityParams
from evacanalytics.exceptions import ConfigError
from pipeline.commands import PipelineCommand


class Command(PipelineCommand):
    help = 'Predict evacuees per LGU from intensities and resident populations (predict.csv)'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument('--population', required=True, help='CSV with columns lgu_id,population')
        parser.add_argument('--mu', type=float)
        parser.add_argument('--sigma', type=float)
        parser.add_argument('--a', type=float)

    def execute_stage(self, service, options):
        given = [options.get(k) for k in ('mu', 'sigma', 'a')]
        params = None
        if any(v is not None for v in given):
            if any(v is None for v in given):
                raise ConfigError('give all of --mu, --sigma and --a or none', field='mu')
            params = FragilityParams(*given)
        with service.stage('predict'):
            return service.write_predict(options['population'], params)
