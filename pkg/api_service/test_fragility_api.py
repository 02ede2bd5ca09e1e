from django.test import TestCase, Client
from django.urls import reverse
from unittest.mock import patch

from analytics_core.fragility import KUMAMOTO_PARAMS, frag_eval
from evacanalytics.exceptions import InputError


class FragilityCurveAPITest(TestCase):
    """Test the fragility curve endpoint"""

    def setUp(self):
        self.client = Client()

    def test_default_curve(self):
        response = self.client.get(reverse('fragility_curve'))

        self.assertEqual(response.status_code, 200)
        data = response.json()
        self.assertEqual(data['params'], KUMAMOTO_PARAMS.as_dict())
        self.assertEqual(data['count'], 61)
        self.assertEqual(data['points'][0]['z'], 4.0)
        self.assertEqual(data['points'][-1]['z'], 7.0)
        self.assertAlmostEqual(data['points'][-1]['p'], frag_eval(7.0, KUMAMOTO_PARAMS))

    def test_custom_params_and_range(self):
        response = self.client.get('/api/fragility/curve/', {
            'mu': '1.8', 'sigma': '0.1', 'a': '0.5', 'z_min': '5', 'z_max': '6', 'step': '0.5',
        })

        self.assertEqual(response.status_code, 200)
        data = response.json()
        self.assertEqual([pt['z'] for pt in data['points']], [5.0, 5.5, 6.0])
        self.assertEqual(data['params']['a'], 0.5)
        self.assertTrue(all(0.0 <= pt['p'] <= 0.5 for pt in data['points']))

    def test_partial_params_rejected(self):
        response = self.client.get('/api/fragility/curve/', {'mu': '1.8'})

        self.assertEqual(response.status_code, 400)
        self.assertEqual(response.json()['error'], 'Invalid parameter')

    def test_invalid_values(self):
        for query in ({'step': '0.001'}, {'z_min': 'abc'}, {'z_min': '6', 'z_max': '5'},
                      {'mu': '1.7', 'sigma': '-1', 'a': '0.5'}):
            with self.subTest(query=query):
                response = self.client.get('/api/fragility/curve/', query)
                self.assertEqual(response.status_code, 400)
                self.assertIn('message', response.json())

    def test_post_not_allowed(self):
        response = self.client.post('/api/fragility/curve/')
        self.assertEqual(response.status_code, 405)


class FragilityPredictAPITest(TestCase):
    """Test the evacuee prediction endpoint"""

    def setUp(self):
        self.client = Client()
        self.url = reverse('fragility_predict')

    def post(self, body):
        return self.client.post(self.url, body, content_type='application/json')

    def test_predict_with_published_curve(self):
        response = self.post({'lgus': [
            {'lgu_id': '43100', 'si': 6.5, 'population': 10000},
            {'lgu_id': '43200', 'si': 5.0, 'population': 2000},
        ]})

        self.assertEqual(response.status_code, 200)
        data = response.json()
        self.assertEqual([row['lguId'] for row in data['perLgu']], ['43100', '43200'])
        expected = 10000 * frag_eval(6.5, KUMAMOTO_PARAMS)
        self.assertAlmostEqual(data['perLgu'][0]['predictedEvacuees'], expected)
        self.assertAlmostEqual(data['totalPredicted'], sum(r['predictedEvacuees'] for r in data['perLgu']))
        self.assertEqual(data['totalPopulation'], 12000.0)

    def test_intensity_rounded_to_one_decimal(self):
        response = self.post({'lgus': [{'lgu_id': 7, 'si': 6.04, 'population': 100}]})

        self.assertEqual(response.status_code, 200)
        self.assertEqual(response.json()['perLgu'][0], {
            'lguId': '7', 'si': 6.0, 'population': 100.0,
            'predictedEvacuees': 100 * frag_eval(6.0, KUMAMOTO_PARAMS),
        })

    def test_explicit_params(self):
        response = self.post({
            'lgus': [{'lgu_id': 'A', 'si': 7.0, 'population': 1000}],
            'params': {'mu': 1.0, 'sigma': 0.1, 'a': 0.5},
        })

        self.assertEqual(response.status_code, 200)
        self.assertAlmostEqual(response.json()['totalPredicted'], 500.0)

    def test_bad_bodies(self):
        for body in (
            {},
            {'lgus': []},
            {'lgus': [{'lgu_id': 'A', 'si': 6.0}]},
            {'lgus': [{'lgu_id': 'A', 'si': 6.0, 'population': 1}, {'lgu_id': 'A', 'si': 5.0, 'population': 1}]},
        ):
            with self.subTest(body=body):
                response = self.post(body)
                self.assertEqual(response.status_code, 400)
                self.assertEqual(response.json()['error'], 'Invalid body')

    def test_out_of_range_values(self):
        for item in ({'lgu_id': 'A', 'si': 7.5, 'population': 1},
                     {'lgu_id': 'A', 'si': 0, 'population': 1},
                     {'lgu_id': 'A', 'si': 6.0, 'population': -10}):
            with self.subTest(item=item):
                response = self.post({'lgus': [item]})
                self.assertEqual(response.status_code, 400)
                self.assertEqual(response.json()['error'], 'Invalid parameter')

    @patch('api_service.fragility_views.predict_evacuees')
    def test_domain_errors_become_bad_request(self, mock_predict):
        mock_predict.side_effect = InputError('population of A must be >= 0')

        response = self.post({'lgus': [{'lgu_id': 'A', 'si': 6.0, 'population': 1}]})

        self.assertEqual(response.status_code, 400)
        self.assertIn('population of A', response.json()['message'])
        mock_predict.assert_called_once()
