import json
import tempfile
from io import StringIO
from pathlib import Path

from django.core.management import call_command, get_commands, load_command_class
from django.core.management.base import CommandError
from django.test import SimpleTestCase

from analytics_core.fragility import KUMAMOTO_PARAMS, frag_eval
from pipeline.test_service import write_scenario


class CommandTestCase(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.root = Path(self.tmp.name)

    def call(self, name, *args, **options):
        out = StringIO()
        call_command(name, *args, stdout=out, **options)
        return out.getvalue()


PIPELINE_COMMANDS = (
    'synth', 'homes', 'evac', 'rates', 'fit', 'loo', 'predict', 'distfit', 'rsweep', 'popest', 'report', 'run',
)


class CommandRegistryTest(SimpleTestCase):
    """Every pipeline command loads and documents itself"""

    def test_all_commands_load(self):
        commands = get_commands()
        for name in PIPELINE_COMMANDS:
            with self.subTest(command=name):
                self.assertEqual(commands[name], 'pipeline')
                command = load_command_class('pipeline', name)
                self.assertTrue(command.help)


class SynthCommandTest(CommandTestCase):
    """Test scenario generation from the command line"""

    def test_writes_scenario(self):
        out_dir = self.root / 'scenario'
        printed = self.call(
            'synth', lgus=3, min_users=4, max_users=6, days_before=2, days_after=2,
            fixes_per_day=4.0, output_dir=str(out_dir), seed='7',
        )
        for name in ('gps.csv', 'lgu.csv', 'intensity.csv', 'census.csv', 'ground_truth.csv'):
            self.assertTrue((out_dir / name).is_file())
            self.assertIn(name, printed)
        self.assertEqual(len((out_dir / 'lgu.csv').read_text().splitlines()), 4)

    def test_bad_config_exits_with_code_2(self):
        with self.assertRaises(CommandError) as ctx:
            self.call('synth', sample_rate='0', output_dir=str(self.root))
        self.assertEqual(ctx.exception.returncode, 2)


class PredictCommandTest(CommandTestCase):
    """Test evacuee prediction from the command line"""

    def setUp(self):
        super().setUp()
        self.intensity = self.root / 'intensity.csv'
        self.intensity.write_text('lgu_id,si\n43100,6.5\n43200,5.0\n')
        self.population = self.root / 'population.csv'
        self.population.write_text('lgu_id,population\n43100,1000\n43200,500\n')

    def predict(self, **options):
        self.call(
            'predict', population=str(self.population), intensity_path=str(self.intensity),
            output_dir=str(self.root / 'out'), **options,
        )
        return json.loads((self.root / 'out' / 'predict.json').read_text())

    def test_published_curve_by_default(self):
        doc = self.predict()
        expected = 1000 * frag_eval(6.5, KUMAMOTO_PARAMS) + 500 * frag_eval(5.0, KUMAMOTO_PARAMS)
        self.assertAlmostEqual(doc['total_predicted'], expected)
        self.assertEqual(doc['mu'], KUMAMOTO_PARAMS.mu)
        self.assertTrue((self.root / 'out' / 'predict.csv').is_file())
        self.assertTrue((self.root / 'out' / 'config.env').is_file())

    def test_explicit_params(self):
        doc = self.predict(mu=1.0, sigma=0.1, a=0.5)
        self.assertAlmostEqual(doc['total_predicted'], 750.0, places=3)

    def test_fitted_params_from_output_dir(self):
        out = self.root / 'out'
        out.mkdir()
        (out / 'fragility.json').write_text(json.dumps({'mu': 1.0, 'sigma': 0.1, 'a': 0.2}))
        self.assertEqual(self.predict()['a'], 0.2)

    def test_partial_params(self):
        with self.assertRaises(CommandError) as ctx:
            self.predict(mu=1.0)
        self.assertEqual(ctx.exception.returncode, 2)

    def test_missing_population_file(self):
        self.population.unlink()
        with self.assertRaises(CommandError) as ctx:
            self.predict()
        self.assertEqual(ctx.exception.returncode, 3)
        error = json.loads((self.root / 'out' / 'error.json').read_text())
        self.assertEqual(error['stage'], 'predict')


class StageCommandTest(CommandTestCase):
    """Test the single-stage commands and the full run"""

    def scenario(self):
        scenario_dir = self.root / 'scenario'
        write_scenario(scenario_dir)
        config = self.root / 'evac.env'
        config.write_text(
            f"GPS_PATH={scenario_dir / 'gps.csv'}\n"
            f"LGU_PATH={scenario_dir / 'lgu.csv'}\n"
            f"INTENSITY_PATH={scenario_dir / 'intensity.csv'}\n"
            f"OUTPUT_DIR={self.root / 'out'}\n"
            'HOME_WINDOW_DAYS=10\n'
        )
        return config

    def test_homes_then_evac(self):
        config = self.scenario()
        printed = self.call('homes', config=str(config))
        self.assertIn('homes.csv', printed)
        self.call('evac', config=str(config), r_m='300')
        out = self.root / 'out'
        self.assertTrue((out / 'evac.csv').is_file())
        self.assertIn('R_M=300.0', (out / 'config.env').read_text())

    def test_run_writes_manifest(self):
        config = self.scenario()
        printed = self.call('run', config=str(config))
        self.assertIn('manifest.json', printed)

    def test_run_failure_exit_code(self):
        config = self.root / 'evac.env'
        config.write_text(f"GPS_PATH={self.root / 'absent.csv'}\nOUTPUT_DIR={self.root / 'out'}\n")
        with self.assertRaises(CommandError) as ctx:
            self.call('run', config=str(config))
        self.assertEqual(ctx.exception.returncode, 3)
        self.assertTrue((self.root / 'out' / 'error.json').is_file())

    def test_unknown_config_key(self):
        config = self.root / 'evac.env'
        config.write_text('RADIUS=5\n')
        with self.assertRaises(CommandError) as ctx:
            self.call('homes', config=str(config))
        self.assertEqual(ctx.exception.returncode, 2)
