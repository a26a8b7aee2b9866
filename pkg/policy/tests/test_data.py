import math
import tempfile
from pathlib import Path

import numpy as np
import numpy.testing as npt
from django.test import SimpleTestCase, override_settings

from policy.exceptions import ConfigurationError, DatasetError, InfeasibleBudgetError
from policy.models import ReferenceKind
from policy.utils.data import Dataset, DatasetSchema, ProblemConfig, load_dataset, validate_conditions
from policy.utils.nuisance import NuisanceBundle

from .factories import FunctionFit


def write(directory, name, text):
    path = Path(directory) / name
    path.write_text(text)
    return path


class LoadDatasetTests(SimpleTestCase):

    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.addCleanup(self.tmp.cleanup)
        self.schema = DatasetSchema(treatment="t", cost="c", outcome="y", covariates=("w1",), decision=("w1",))

    def test_four_row_file(self):
        path = write(self.tmp.name, "four.csv", "w1,t,c,y\n0.1,1,0.5,1\n-0.2,0,0,0\n0.3,1,1,0\n0.9,0,0.25,1\n")
        ds = load_dataset(path, self.schema)
        self.assertEqual(ds.n, 4)
        self.assertEqual(ds.v_index, (0,))
        npt.assert_array_equal(ds.t, [1, 0, 1, 0])
        npt.assert_array_equal(ds.w[:, 0], [0.1, -0.2, 0.3, 0.9])

    def test_column_order_is_free_and_tabs_are_detected(self):
        path = write(self.tmp.name, "tabs.tsv", "y\tc\tw1\tt\n1\t0.5\t0.1\t1\n0\t0\t-0.2\t0\n")
        ds = load_dataset(path, self.schema)
        npt.assert_array_equal(ds.y, [1, 0])
        npt.assert_array_equal(ds.c, [0.5, 0])

    def test_non_binary_treatment_names_the_row(self):
        path = write(self.tmp.name, "bad.csv", "w1,t,c,y\n0.1,1,0.5,1\n0.2,0,0.5,1\n0.3,2,0.5,1\n")
        with self.assertRaises(DatasetError) as ctx:
            load_dataset(path, self.schema)
        self.assertIn("treatment not in {0,1} at row 3", "; ".join(ctx.exception.messages))

    def test_negative_cost(self):
        path = write(self.tmp.name, "neg.csv", "w1,t,c,y\n0.1,1,-0.5,1\n")
        with self.assertRaises(DatasetError) as ctx:
            load_dataset(path, self.schema)
        self.assertIn("negative cost at row 1", ctx.exception.messages[0])

    def test_non_numeric_cell(self):
        path = write(self.tmp.name, "text.csv", "w1,t,c,y\n0.1,1,0.5,1\nabc,0,0.5,1\n")
        with self.assertRaises(DatasetError) as ctx:
            load_dataset(path, self.schema)
        message = ctx.exception.messages[0]
        self.assertIn("w1", message)
        self.assertIn("row 2", message)

    def test_missing_column(self):
        path = write(self.tmp.name, "short.csv", "w1,t,y\n0.1,1,1\n")
        with self.assertRaises(DatasetError) as ctx:
            load_dataset(path, self.schema)
        self.assertIn("missing column(s) c", ctx.exception.messages[0])

    def test_missing_file(self):
        with self.assertRaises(DatasetError):
            load_dataset(Path(self.tmp.name) / "nope.csv", self.schema)

    def test_decision_covering_every_covariate(self):
        path = write(self.tmp.name, "two.csv", "w1,w2,t,c,y\n0.1,5,1,0.5,1\n0.2,6,0,0.5,0\n")
        schema = DatasetSchema.from_dict({"treatment": "t", "cost": "c", "outcome": "y", "covariates": ["w1", "w2"]})
        ds = load_dataset(path, schema)
        self.assertEqual(ds.v_index, (0, 1))
        self.assertTrue(ds.v_is_w)

    def test_save_and_reload_is_bit_identical(self):
        rng = np.random.default_rng(7)
        n = 50
        ds = Dataset(
            w=rng.normal(size=(n, 2)), t=rng.integers(0, 2, n), c=rng.exponential(size=n),
            y=rng.normal(size=n), v_index=(1,),
        )
        path = Path(self.tmp.name) / "roundtrip.csv"
        schema = ds.save(path)
        again = load_dataset(path, schema)
        for name in ("w", "t", "c", "y"):
            npt.assert_array_equal(getattr(again, name), getattr(ds, name))
        self.assertEqual(again.v_index, ds.v_index)


class DatasetTests(SimpleTestCase):

    def test_arrays_are_read_only_copies(self):
        w = np.array([[0.1], [0.2]])
        ds = Dataset(w=w, t=[0, 1], c=[0.0, 1.0], y=[0.0, 1.0], v_index=(0,))
        w[0, 0] = 99.0
        self.assertEqual(ds.w[0, 0], 0.1)
        with self.assertRaises(ValueError):
            ds.c[0] = 3.0

    def test_invalid_v_index(self):
        with self.assertRaises(DatasetError):
            Dataset(w=[[0.1], [0.2]], t=[0, 1], c=[0, 1], y=[0, 1], v_index=(1,))

    def test_non_finite_value(self):
        with self.assertRaises(DatasetError) as ctx:
            Dataset(w=[[0.1], [np.nan]], t=[0, 1], c=[0, 1], y=[0, 1], v_index=(0,))
        self.assertIn("row 2", ctx.exception.messages[0])

    def test_schema_rejects_unknown_decision_column(self):
        with self.assertRaises(ConfigurationError):
            DatasetSchema(treatment="t", cost="c", outcome="y", covariates=("w1",), decision=("w9",))


class ProblemConfigTests(SimpleTestCase):

    def test_defaults_come_from_settings(self):
        with override_settings(POLICY={"EPS_T": 0.05, "EPS_C": 0.01, "FOLDS": 3, "DEFAULT_SEED": 11}):
            cfg = ProblemConfig.from_dict({"kappa": 0.5})
        self.assertEqual((cfg.eps_t, cfg.eps_c, cfg.folds, cfg.seed), (0.05, 0.01, 3, 11))

    def test_infinite_budget(self):
        cfg = ProblemConfig.from_dict({"kappa": "inf"})
        self.assertTrue(math.isinf(cfg.kappa))
        self.assertTrue(cfg.unconstrained)
        self.assertEqual(cfg.references, (ReferenceKind.FR, ReferenceKind.RD, ReferenceKind.TP))

    def test_known_cost_bound_makes_budget_slack(self):
        cfg = ProblemConfig(kappa=2.0, cost_bound=1.5)
        self.assertTrue(cfg.unconstrained)
        self.assertTrue(math.isinf(cfg.effective_kappa))
        self.assertFalse(ProblemConfig(kappa=1.0, cost_bound=1.5).unconstrained)

    def test_invalid_values_are_collected(self):
        with self.assertRaises(ConfigurationError) as ctx:
            ProblemConfig(kappa=-1.0, alpha=1.5, folds=0)
        self.assertEqual(len(ctx.exception.messages), 3)

    def test_unknown_reference(self):
        with self.assertRaises(ConfigurationError):
            ProblemConfig.from_dict({"references": ["XX"]})


class ValidateConditionsTests(SimpleTestCase):
    """mu^T(w) = w, mu^C(t, w) = 0.3 + 0.2 t and zero cost residuals, so phi_n = 0.3."""

    def setUp(self):
        t = np.array([1.0, 0.0, 1.0, 0.0])
        self.ds = Dataset(w=[[0.2], [0.4], [0.6], [0.8]], t=t, c=0.3 + 0.2 * t, y=[1, 0, 1, 0], v_index=(0,))

    def bundle(self, propensity=lambda w: w[:, 0]):
        return NuisanceBundle(
            mu_y=FunctionFit(lambda x: 0.4 + 0.1 * x[:, 0]),
            mu_c=FunctionFit(lambda x: 0.3 + 0.2 * x[:, 0]),
            mu_t=FunctionFit(propensity),
            delta_y_fit=None, delta_c_fit=None, v_index=(0,),
        )

    def test_clean_report(self):
        report = validate_conditions(self.ds, ProblemConfig(kappa=0.68), self.bundle())
        self.assertTrue(report.clean)
        self.assertAlmostEqual(report.phi_n, 0.3, places=12)
        self.assertAlmostEqual(report.alpha_phi, 0.3, places=12)
        self.assertEqual(report.propensity_truncated, 0)

    def test_infeasible_budget(self):
        with self.assertRaises(InfeasibleBudgetError) as ctx:
            validate_conditions(self.ds, ProblemConfig(kappa=0.25), self.bundle())
        self.assertIn("infeasible budget", str(ctx.exception))
        self.assertFalse(ctx.exception.report.feasible)

    def test_forced_phi(self):
        with self.assertRaises(InfeasibleBudgetError):
            validate_conditions(self.ds, ProblemConfig(kappa=0.68), self.bundle(), phi_n=0.7)

    def test_counts_one_truncated_propensity(self):
        bundle = self.bundle(lambda w: np.where(w[:, 0] < 0.3, 0.001, 0.5))
        with self.assertLogs("policy.utils.data", level="WARNING"):
            report = validate_conditions(self.ds, ProblemConfig(kappa=0.68), bundle)
        self.assertEqual(report.propensity_truncated, 1)
        self.assertEqual(report.propensity_truncated_fraction, 0.25)

    def test_repeated_calls_agree(self):
        cfg = ProblemConfig(kappa=0.68)
        first = validate_conditions(self.ds, cfg, self.bundle()).to_dict()
        second = validate_conditions(self.ds, cfg, self.bundle()).to_dict()
        self.assertEqual(first, second)
