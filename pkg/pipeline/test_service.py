import json
import shutil
import tempfile
from dataclasses import replace
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pandas as pd
from django.test import SimpleTestCase

from analytics_core.fragility import KUMAMOTO_PARAMS
from evacanalytics.exceptions import StageError
from mobility.geo import GeoPoint, destination_point
from mobility.evac import EvacRecord
from pipeline.config import PipelineConfig
from pipeline.service import Inputs, PipelineService, run_pipeline
from synth.generator import KUMAMOTO_CENTER, LguSpec, ScenarioConfig, generate_scenario, sample_truncated_pareto

SCENARIO_SI = (4.5, 5.0, 5.5, 6.0, 6.5, 6.7)

RUN_ARTIFACTS = (
    'homes.csv', 'evac.csv', 'rates.csv', 'fragility.json', 'powerlaw.json', 'popgrid.csv', 'popest.json',
    'curve.csv', 'scatter.csv', 'rates_by_si.csv', 'timing.csv', 'distpdf.csv', 'distpdf_all.csv',
    'summary.json', 'config.env', 'manifest.json',
)


def scenario_lgus(n_users=30):
    lgus = []
    for i, si in enumerate(SCENARIO_SI):
        p = destination_point(KUMAMOTO_CENTER, 90.0, 8000.0 * i)
        centroid = GeoPoint(round(p.lat, 7), round(p.lon, 7))
        lgus.append(LguSpec(f'{43100 + i}', centroid, 1500.0, n_users, si))
    return tuple(lgus)


def write_scenario(directory, **kwargs):
    cfg = ScenarioConfig(lgus=scenario_lgus(), days_before=8, days_after=7, **kwargs)
    scenario = generate_scenario(cfg)
    return scenario, scenario.write(directory)


def read_artifact(path, **kwargs):
    return pd.read_csv(path, comment='#', **kwargs)


class PipelineRunTest(SimpleTestCase):
    """End-to-end runs over a small synthetic scenario"""

    @classmethod
    def setUpClass(cls):
        super().setUpClass()
        cls.tmp = tempfile.mkdtemp()
        cls.scenario, paths = write_scenario(Path(cls.tmp) / 'scenario')
        cls.cfg = replace(
            PipelineConfig(),
            gps_path=str(paths['gps.csv']),
            lgu_path=str(paths['lgu.csv']),
            intensity_path=str(paths['intensity.csv']),
            census_path=str(paths['census.csv']),
            output_dir=str(Path(cls.tmp) / 'out'),
            home_window_days=10,
        )
        cls.status = run_pipeline(cls.cfg)
        cls.out = Path(cls.cfg.output_dir)

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.tmp, ignore_errors=True)
        super().tearDownClass()

    def test_all_artifacts_written(self):
        self.assertEqual(self.status, 0)
        for name in RUN_ARTIFACTS:
            with self.subTest(name=name):
                self.assertTrue((self.out / name).is_file())
        self.assertFalse((self.out / 'error.json').exists())

    def test_provenance(self):
        manifest = json.loads((self.out / 'manifest.json').read_text())
        self.assertEqual(sorted(manifest['inputs']), ['census', 'gps', 'intensity', 'lgu'])
        self.assertEqual(manifest['parameters']['r_m'], 200.0)
        self.assertIn('fragility.json', manifest['artifacts'])
        header = (self.out / 'rates.csv').read_text().splitlines()[0]
        self.assertTrue(header.startswith('# evacanalytics '))
        self.assertIn(f"config_sha256={manifest['_meta']['config_sha256']}", header)

    def test_rerun_is_byte_identical(self):
        before = {name: (self.out / name).read_bytes() for name in RUN_ARTIFACTS}
        self.assertEqual(run_pipeline(self.cfg), 0)
        for name in RUN_ARTIFACTS:
            with self.subTest(name=name):
                self.assertEqual((self.out / name).read_bytes(), before[name])

    def test_evacuation_matches_ground_truth(self):
        evac = read_artifact(self.out / 'evac.csv', dtype={'user_id': str})
        truth = {r.user_id: r.evacuated for r in self.scenario.truth}
        self.assertGreaterEqual(len(evac), 0.9 * len(truth))
        detected = dict(zip(evac.user_id, evac.evacuated.astype(bool)))
        tp = sum(1 for u, flag in detected.items() if flag and truth[u])
        fp = sum(1 for u, flag in detected.items() if flag and not truth[u])
        fn = sum(1 for u, flag in detected.items() if not flag and truth[u])
        self.assertGreaterEqual(tp / (tp + fp), 0.95)
        self.assertGreaterEqual(tp / (tp + fn), 0.95)

    def test_rates_cover_every_lgu(self):
        rates = read_artifact(self.out / 'rates.csv', dtype={'lgu_id': str})
        self.assertEqual(sorted(rates.lgu_id), [l.lgu_id for l in scenario_lgus()])
        self.assertTrue((rates.M_star <= rates.M).all())
        fit = json.loads((self.out / 'fragility.json').read_text())
        self.assertEqual(fit['r_m'], 200.0)
        self.assertGreater(fit['a'], 0.0)

    def test_population_estimate(self):
        popest = json.loads((self.out / 'popest.json').read_text())
        homes = read_artifact(self.out / 'homes.csv')
        self.assertAlmostEqual(popest['estimated_total'], len(homes) / self.cfg.sample_rate)
        self.assertEqual(popest['mode'], 'homes')
        self.assertGreaterEqual(popest['correlation'], 0.85)
        grid = read_artifact(self.out / 'popgrid.csv')
        self.assertEqual(list(grid.columns), ['x', 'y', 'population', 'estimated'])

    def test_distance_fits_record_small_bins(self):
        doc = json.loads((self.out / 'powerlaw.json').read_text())
        self.assertIn('errors', doc)
        self.assertTrue(doc['errors'])
        self.assertTrue(all('InsufficientSamplesError' in e or 'EmptyDistributionError' in e for e in doc['errors'].values()))

    def test_predict_uses_fitted_parameters(self):
        population = Path(self.tmp) / 'population.csv'
        population.write_text('lgu_id,population\n43100,1000\n43105,2000\n')
        service = PipelineService(self.cfg)
        params, _, _, prediction = service.predict(str(population))
        fit = json.loads((self.out / 'fragility.json').read_text())
        self.assertAlmostEqual(params.mu, fit['mu'])
        self.assertEqual(sorted(prediction.per_lgu), ['43100', '43105'])
        _, _, _, published = service.predict(str(population), KUMAMOTO_PARAMS)
        self.assertGreater(published.per_lgu['43105'], published.per_lgu['43100'])


class PipelineFailureTest(SimpleTestCase):
    """Failures surface as an exit status and error.json"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.out = Path(self.tmp.name) / 'out'

    def test_missing_gps_fails_in_ingest(self):
        cfg = replace(PipelineConfig(), gps_path=str(Path(self.tmp.name) / 'absent.csv'), output_dir=str(self.out))
        status = run_pipeline(cfg)
        self.assertNotEqual(status, 0)
        error = json.loads((self.out / 'error.json').read_text())
        self.assertEqual(error['stage'], 'ingest')
        self.assertEqual(error['exit_code'], status)

    def test_unset_gps_is_a_config_error(self):
        cfg = replace(PipelineConfig(), output_dir=str(self.out))
        self.assertEqual(run_pipeline(cfg), 2)

    def test_event_outside_observation(self):
        _, paths = write_scenario(Path(self.tmp.name) / 'scenario', seed=3)
        cfg = replace(
            PipelineConfig(),
            gps_path=str(paths['gps.csv']),
            lgu_path=str(paths['lgu.csv']),
            intensity_path=str(paths['intensity.csv']),
            output_dir=str(self.out),
            event_time=0,
        )
        with self.assertRaises(StageError) as ctx:
            PipelineService(cfg).ingest()
        self.assertEqual(ctx.exception.stage, 'ingest')
        self.assertEqual(ctx.exception.exit_code, 2)

    def test_unreadable_gps(self):
        gps = Path(self.tmp.name) / 'gps.csv'
        gps.write_text('who,when\n1,2\n')
        lgu = Path(self.tmp.name) / 'lgu.csv'
        lgu.write_text('lgu_id,name,centroid_lat,centroid_lon\n43100,a,32.8,130.7\n')
        si = Path(self.tmp.name) / 'si.csv'
        si.write_text('lgu_id,si\n43100,6.0\n')
        cfg = replace(PipelineConfig(), gps_path=str(gps), lgu_path=str(lgu), intensity_path=str(si), output_dir=str(self.out))
        self.assertEqual(run_pipeline(cfg), 3)
        self.assertEqual(json.loads((self.out / 'error.json').read_text())['error'], 'FormatError')

    def test_broken_gps_rows_write_error_json(self):
        gps = Path(self.tmp.name) / 'gps.csv'
        gps.write_bytes(b'user_id,t,lat,lon\nu1,1000,32.8,130.7\nu1,1100,32.8,130.7,9\n\xff\xfe,1200,32.8,130.7\n')
        lgu = Path(self.tmp.name) / 'lgu.csv'
        lgu.write_text('lgu_id,name,centroid_lat,centroid_lon\n43100,a,32.8,130.7\n')
        si = Path(self.tmp.name) / 'si.csv'
        si.write_text('lgu_id,si\n43100,6.0\n')
        cfg = replace(PipelineConfig(), gps_path=str(gps), lgu_path=str(lgu), intensity_path=str(si), output_dir=str(self.out))
        self.assertEqual(run_pipeline(cfg), 3)
        error = json.loads((self.out / 'error.json').read_text())
        self.assertEqual(error['stage'], 'ingest')
        self.assertEqual(error['error'], 'DataQualityError')


class DistanceFitRangeTest(SimpleTestCase):
    """Evacuee distance fits start at the evacuation radius"""

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)

    def records(self, r_m):
        rng = np.random.default_rng(11)
        records = {}
        for lgu_id in ('A', 'B'):
            far = sample_truncated_pareto(rng, 1.25, r_m, 1e6, 3000)
            for k, d in enumerate(far):
                uid = f'{lgu_id}{k:05d}'
                records[uid] = EvacRecord(uid, lgu_id, True, float(d), None, 1, 7, r_m)
            for k in range(500):
                uid = f'{lgu_id}h{k:04d}'
                records[uid] = EvacRecord(uid, lgu_id, False, 50.0, None, None, 7, r_m)
        return records

    def test_fit_uses_radius_as_lower_edge(self):
        cfg = replace(PipelineConfig(), r_m=500.0, output_dir=str(Path(self.tmp.name) / 'out'))
        inputs = Inputs({}, [], {'A': 5.0, 'B': 6.5}, 0, 0)
        service = PipelineService(cfg)
        with patch.object(PipelineService, 'ingest', return_value=inputs), \
                patch.object(PipelineService, 'evac', return_value=self.records(500.0)):
            result = service.distfit()
        self.assertEqual(result.fits['all'].d_min, 500.0)
        self.assertAlmostEqual(result.fits['all'].gamma, 1.25, delta=0.05)
        self.assertAlmostEqual(result.pdfs['all'].bin_edges[0], 500.0)
        self.assertAlmostEqual(result.pdfs_all['all'].bin_edges[0], 200.0)
