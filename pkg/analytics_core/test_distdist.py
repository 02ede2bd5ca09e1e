import numpy as np
from django.test import SimpleTestCase

from analytics_core.distdist import collapse_check, distance_pdf, fit_power_law, log_bin_edges
from evacanalytics.exceptions import (
    ConfigError,
    EmptyDistributionError,
    InsufficientSamplesError,
    NothingToCompareError,
)
from synth.generator import sample_truncated_pareto

D_RANGE = (200.0, 1_000_000.0)


class DistancePdfTest(SimpleTestCase):
    """Test log-binned distance densities"""

    def test_edges_are_geometric(self):
        edges = log_bin_edges(D_RANGE, 5)
        self.assertEqual(len(edges), 19)
        self.assertAlmostEqual(edges[-1], 1e6)
        ratios = edges[1:] / edges[:-1]
        np.testing.assert_allclose(ratios, ratios[0])

    def test_single_bin_mass(self):
        edges = log_bin_edges(D_RANGE, 5)
        d = np.full(40, np.sqrt(edges[3] * edges[4]))
        pdf = distance_pdf(d, 5, D_RANGE)
        self.assertAlmostEqual(pdf.densities[3], 1.0 / (edges[4] - edges[3]))
        self.assertEqual(np.count_nonzero(pdf.densities), 1)

    def test_normalised(self):
        rng = np.random.default_rng(1)
        pdf = distance_pdf(sample_truncated_pareto(rng, 1.5, 200.0, 1e6, 5000), 5, D_RANGE)
        self.assertAlmostEqual(float((pdf.densities * pdf.widths).sum()), 1.0, places=9)

    def test_log_uniform_density_falls_as_inverse_distance(self):
        rng = np.random.default_rng(2)
        d = np.exp(rng.uniform(np.log(200.0), np.log(1e6), 200_000))
        pdf = distance_pdf(d, 5, D_RANGE)
        scaled = pdf.densities * pdf.centers
        np.testing.assert_allclose(scaled / scaled.mean(), 1.0, atol=0.05)

    def test_out_of_range_samples_dropped(self):
        pdf = distance_pdf([10.0, 500.0, 2e6], 5, D_RANGE)
        self.assertEqual(pdf.n_samples, 1)
        with self.assertRaises(EmptyDistributionError):
            distance_pdf([10.0, 50.0], 5, D_RANGE)

    def test_bad_range(self):
        with self.assertRaises(ConfigError):
            log_bin_edges((1000.0, 200.0), 5)


class PowerLawFitTest(SimpleTestCase):
    """Test truncated power-law exponent estimation"""

    def test_recovers_exponent(self):
        rng = np.random.default_rng(3)
        fit = fit_power_law(sample_truncated_pareto(rng, 1.25, 200.0, 1e6, 100_000), 200.0, 1e6)
        self.assertAlmostEqual(fit.gamma, 1.25, delta=0.05)
        self.assertEqual(fit.n, 100_000)
        self.assertEqual(fit.fit_range, (200.0, 1e6))
        self.assertLessEqual(abs(fit.gamma + fit.loglog_slope), 0.1)
        self.assertGreater(fit.r2_loglog, 0.95)

    def test_loglog_slope_agrees_with_mle(self):
        rng = np.random.default_rng(6)
        for n in (10_000, 100_000):
            with self.subTest(n=n):
                fit = fit_power_law(sample_truncated_pareto(rng, 1.25, 200.0, 1e6, n), 200.0, 1e6)
                self.assertLessEqual(abs(fit.gamma + fit.loglog_slope), 0.1)

    def test_exponent_one_and_steep(self):
        rng = np.random.default_rng(4)
        for gamma in (1.0, 2.2):
            fit = fit_power_law(sample_truncated_pareto(rng, gamma, 200.0, 1e6, 50_000), 200.0, 1e6)
            self.assertAlmostEqual(fit.gamma, gamma, delta=0.05)

    def test_alpha_normalises_density(self):
        rng = np.random.default_rng(5)
        fit = fit_power_law(sample_truncated_pareto(rng, 1.4, 200.0, 1e6, 20_000), 200.0, 1e6)
        e = 1.0 - fit.gamma
        mass = fit.alpha * (1e6 ** e - 200.0 ** e) / e
        self.assertAlmostEqual(mass, 1.0, places=9)

    def test_too_few_samples(self):
        with self.assertRaises(InsufficientSamplesError):
            fit_power_law([300.0] * 10, 200.0, 1e6)

    def test_bad_range(self):
        with self.assertRaises(ConfigError):
            fit_power_law([300.0] * 500, 1e6, 200.0)


class CollapseTest(SimpleTestCase):
    """Test shape agreement across intensity bins"""

    def test_identical_pdfs(self):
        rng = np.random.default_rng(6)
        pdf = distance_pdf(sample_truncated_pareto(rng, 1.25, 200.0, 1e6, 10_000), 5, D_RANGE)
        self.assertEqual(collapse_check({5.0: pdf, 5.5: pdf}).max_divergence, 0.0)

    def test_shared_law_collapses(self):
        rng = np.random.default_rng(7)
        samples = {b: sample_truncated_pareto(rng, 1.25, 200.0, 1e6, 20_000) for b in (5.0, 5.5, 6.0, 6.5)}
        pdfs = {b: distance_pdf(d, 5, D_RANGE) for b, d in samples.items()}
        gammas = {b: fit_power_law(d, 200.0, 1e6).gamma for b, d in samples.items()}
        shared = collapse_check(pdfs, gammas)
        self.assertLessEqual(shared.gamma_spread, 0.1)

        steep = dict(pdfs)
        steep[6.5] = distance_pdf(sample_truncated_pareto(rng, 1.8, 200.0, 1e6, 20_000), 5, D_RANGE)
        self.assertGreater(collapse_check(steep).max_divergence, shared.max_divergence)

    def test_single_bin(self):
        rng = np.random.default_rng(8)
        pdf = distance_pdf(sample_truncated_pareto(rng, 1.25, 200.0, 1e6, 1000), 5, D_RANGE)
        with self.assertRaises(NothingToCompareError):
            collapse_check({5.0: pdf})
