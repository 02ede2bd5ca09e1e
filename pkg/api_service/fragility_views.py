import logging

from rest_framework import status
from rest_framework.decorators import api_view
from rest_framework.response import Response

from analytics_core.fragility import KUMAMOTO_PARAMS, FragilityParams, curve_points, predict_evacuees
from evacanalytics.exceptions import EvacAnalyticsError
from mobility.evac import round_si

logger = logging.getLogger('api_service')

PARAM_NAMES = ('mu', 'sigma', 'a')


def _bad_request(error, message):
    return Response({'error': error, 'message': message}, status=status.HTTP_400_BAD_REQUEST)


def _params_from(source):
    """Curve parameters from a mapping; all three or none (the published curve)."""
    given = {k: source.get(k) for k in PARAM_NAMES if source.get(k) not in (None, '')}
    if not given:
        return KUMAMOTO_PARAMS
    if len(given) != len(PARAM_NAMES):
        raise ValueError('give all of mu, sigma and a, or none of them')
    return FragilityParams(*(float(given[k]) for k in PARAM_NAMES))


@api_view(['GET'])
def get_curve(request):
    """
    GET /api/fragility/curve/ - Evacuation probability sampled over intensity
    Query params:
        - mu, sigma, a (float): curve parameters (default: the published Kumamoto fit)
        - z_min, z_max (float): intensity range (default: 4.0 to 7.0)
        - step (float): sampling step (default: 0.05, min 0.01)
    """
    try:
        params = _params_from(request.GET)
        z_min = float(request.GET.get('z_min', 4.0))
        z_max = float(request.GET.get('z_max', 7.0))
        step = float(request.GET.get('step', 0.05))
        if step < 0.01:
            return _bad_request('Invalid step', 'step must be >= 0.01')
        points = curve_points(params, z_min, z_max, step)
    except (ValueError, EvacAnalyticsError) as e:
        logger.warning('Rejected curve request: %s', e)
        return _bad_request('Invalid parameter', str(e))

    return Response({
        'params': params.as_dict(),
        'points': [{'z': z, 'p': p} for z, p in points],
        'count': len(points),
    }, status=status.HTTP_200_OK)


@api_view(['POST'])
def predict(request):
    """
    POST /api/fragility/predict/ - Expected evacuees per LGU
    Body:
        - lgus: list of {lgu_id, si, population}
        - params (optional): {mu, sigma, a}
    """
    lgus = request.data.get('lgus')
    if not isinstance(lgus, list) or not lgus:
        return _bad_request('Invalid body', "'lgus' must be a non-empty list")

    try:
        params = _params_from(request.data.get('params') or {})
        intensity, population = {}, {}
        for item in lgus:
            lgu_id = str(item['lgu_id'])
            if lgu_id in intensity:
                return _bad_request('Invalid body', f'duplicate lgu_id {lgu_id}')
            si = round_si(float(item['si']))
            if not 0 < si <= 7.0:
                raise ValueError(f'intensity {si} of {lgu_id} outside (0, 7]')
            intensity[lgu_id] = si
            population[lgu_id] = float(item['population'])
        prediction = predict_evacuees(intensity, population, params)
    except (KeyError, TypeError) as e:
        return _bad_request('Invalid body', f'each LGU needs lgu_id, si and population ({e})')
    except (ValueError, EvacAnalyticsError) as e:
        logger.warning('Rejected prediction request: %s', e)
        return _bad_request('Invalid parameter', str(e))

    return Response({
        'params': params.as_dict(),
        'perLgu': [
            {
                'lguId': lgu_id,
                'si': intensity[lgu_id],
                'population': population[lgu_id],
                'predictedEvacuees': n,
            }
            for lgu_id, n in prediction.per_lgu.items()
        ],
        'totalPredicted': prediction.total,
        'totalPopulation': prediction.total_population,
    }, status=status.HTTP_200_OK)
