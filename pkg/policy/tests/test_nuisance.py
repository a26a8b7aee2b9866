import numpy as np
import numpy.testing as npt
from django.test import SimpleTestCase
from scipy.special import expit

from policy.exceptions import LearnerError
from policy.models import Basis, DgpKind, LearnerKind, NuisanceTarget
from policy.utils.data import Dataset, ProblemConfig
from policy.utils.dgp import DgpSpec, generate
from policy.utils.learners import LearnerSpec
from policy.utils.nuisance import CrossFitPlan, SampleNuisances, cross_fit_xi, fit_bundle

PARAMETRIC_ORACLE = DgpSpec(kind=DgpKind.PARAMETRIC, oracle_nuisances=True)


def linear(basis=Basis.MAIN):
    return LearnerSpec(kind=LearnerKind.LINEAR, basis=basis)


class FitBundleTests(SimpleTestCase):

    def setUp(self):
        self.cfg = ProblemConfig(kappa=0.35)
        self.ds = generate(PARAMETRIC_ORACLE, 500, np.random.default_rng(1))

    def test_oracle_bundle_is_the_analytic_truth(self):
        bundle = fit_bundle(self.ds, PARAMETRIC_ORACLE.default_learners(), self.cfg)
        w = self.ds.w[:, 0]
        npt.assert_array_equal(bundle.propensity_raw(self.ds.w), expit(w))
        npt.assert_allclose(bundle.mu_y_at(1.0, self.ds.w), expit(0.7 - 0.3 * w), rtol=0, atol=1e-15)
        npt.assert_allclose(bundle.mu_c_at(0.0, self.ds.w), expit(-1.0 + w), rtol=0, atol=1e-15)

    def test_identity_decision_covariates_reuse_the_contrasts(self):
        bundle = fit_bundle(self.ds, DgpSpec().default_learners(), self.cfg)
        self.assertTrue(bundle.identity_v)
        npt.assert_array_equal(bundle.delta_c_raw(self.ds.v), bundle.contrast_c_raw(self.ds.w))
        npt.assert_array_equal(bundle.delta_y(self.ds.v), bundle.contrast_y(self.ds.w))

    def test_guards_apply_at_evaluation(self):
        bundle = fit_bundle(self.ds, PARAMETRIC_ORACLE.default_learners(), ProblemConfig(kappa=0.35, eps_t=0.3, eps_c=0.5))
        propensity = bundle.propensity(self.ds.w)
        self.assertGreaterEqual(propensity.min(), 0.3)
        self.assertLessEqual(propensity.max(), 0.7)
        self.assertGreaterEqual(bundle.delta_c(self.ds.v).min(), 0.5)
        npt.assert_allclose(bundle.xi(self.ds.v), bundle.delta_y(self.ds.v) / bundle.delta_c(self.ds.v))

    def test_logistic_propensity_converges_to_truth(self):
        ds = generate(DgpSpec(), 100_000, np.random.default_rng(11))
        bundle = fit_bundle(ds, DgpSpec().default_learners(), self.cfg)
        grid = np.linspace(-0.99, 0.99, 100).reshape(-1, 1)
        gap = np.max(np.abs(bundle.propensity_raw(grid) - expit(grid[:, 0])))
        self.assertLessEqual(gap, 0.02)

    def test_decision_subset_regresses_pseudo_outcomes(self):
        rng = np.random.default_rng(4)
        n = 300
        w = rng.normal(size=(n, 2))
        t = rng.integers(0, 2, n)
        y = 0.5 * t * (1 + w[:, 0]) + w[:, 1] + rng.normal(scale=0.1, size=n)
        ds = Dataset(w=w, t=t, c=1.0 + 0.5 * t, y=y, v_index=(0,))
        specs = {NuisanceTarget.MU_Y: linear(Basis.PAIRWISE), NuisanceTarget.MU_C: linear(), NuisanceTarget.MU_T: linear()}
        bundle = fit_bundle(ds, specs, self.cfg)
        self.assertFalse(bundle.identity_v)
        npt.assert_allclose(bundle.delta_c(ds.v), 0.5, atol=1e-8)
        npt.assert_allclose(bundle.delta_y(np.array([[0.0], [1.0]])), [0.5, 1.0], atol=0.05)

    def test_oracle_contrasts_need_identity_decision_covariates(self):
        ds = generate(DgpSpec(kind=DgpKind.MAIN, oracle_nuisances=True), 50, np.random.default_rng(0))
        ds = Dataset(w=ds.w, t=ds.t, c=ds.c, y=ds.y, v_index=(0,))
        specs = DgpSpec(kind=DgpKind.MAIN, oracle_nuisances=True).default_learners()
        specs[NuisanceTarget.DELTA_Y] = LearnerSpec(kind=LearnerKind.ORACLE, dgp=DgpKind.MAIN, target=NuisanceTarget.MU_Y)
        with self.assertRaises(LearnerError):
            fit_bundle(ds, specs, self.cfg)


class CrossFitPlanTests(SimpleTestCase):

    def test_ten_folds_of_one_hundred(self):
        plan = CrossFitPlan.split(1000, 10, seed=3)
        npt.assert_array_equal(plan.sizes(), [100] * 10)
        self.assertEqual(sorted(np.concatenate([plan.test_rows(k) for k in range(10)]).tolist()), list(range(1000)))

    def test_sizes_differ_by_at_most_one(self):
        sizes = CrossFitPlan.split(1003, 7, seed=3).sizes()
        self.assertLessEqual(sizes.max() - sizes.min(), 1)

    def test_seeded(self):
        npt.assert_array_equal(CrossFitPlan.split(50, 5, 9).folds, CrossFitPlan.split(50, 5, 9).folds)

    def test_single_fold(self):
        plan = CrossFitPlan.split(10, 1, seed=0)
        self.assertEqual(plan.n_folds, 1)

    def test_more_folds_than_rows(self):
        with self.assertRaises(LearnerError):
            CrossFitPlan.split(3, 5, seed=0)


class CrossFitXiTests(SimpleTestCase):

    def setUp(self):
        self.cfg = ProblemConfig(kappa=0.35)
        rng = np.random.default_rng(8)
        n = 40
        w = rng.normal(size=(n, 2))
        t = rng.integers(0, 2, n)
        self.ds = Dataset(
            w=w, t=t, c=1.0 + 0.4 * t + 0.1 * rng.normal(size=n), y=0.3 * t + w[:, 1] + rng.normal(size=n),
            v_index=(0,),
        )
        self.specs = {
            NuisanceTarget.MU_Y: linear(), NuisanceTarget.MU_C: linear(), NuisanceTarget.MU_T: linear(),
            NuisanceTarget.DELTA_Y: linear(Basis.INTERCEPT), NuisanceTarget.DELTA_C: linear(Basis.INTERCEPT),
        }

    def test_two_folds_use_the_other_half(self):
        plan = CrossFitPlan.split(self.ds.n, 2, seed=1)
        xi = cross_fit_xi(self.ds, self.specs, plan, self.cfg)
        for fold in range(2):
            train = plan.train_rows(fold)
            design = np.column_stack([np.ones(train.size), self.ds.t[train], self.ds.w[train]])
            coef_y = np.linalg.lstsq(design, self.ds.y[train], rcond=None)[0]
            coef_c = np.linalg.lstsq(design, self.ds.c[train], rcond=None)[0]
            expected = coef_y[1] / max(coef_c[1], self.cfg.eps_c)
            npt.assert_allclose(xi[plan.test_rows(fold)], expected, rtol=1e-8)

    def test_held_out_rows_never_enter_their_own_fit(self):
        plan = CrossFitPlan.split(self.ds.n, 4, seed=2)
        xi = cross_fit_xi(self.ds, self.specs, plan, self.cfg)
        rows = plan.test_rows(0)
        order = np.arange(self.ds.n)
        order[rows] = rows[::-1]
        shuffled = self.ds.subset(order)
        xi_shuffled = cross_fit_xi(shuffled, self.specs, plan, self.cfg)
        npt.assert_array_equal(xi_shuffled[rows], xi[order[rows]])

    def test_oracle_cross_fit_equals_full_sample(self):
        ds = generate(PARAMETRIC_ORACLE, 200, np.random.default_rng(5))
        specs = PARAMETRIC_ORACLE.default_learners()
        bundle = fit_bundle(ds, specs, self.cfg)
        xi = cross_fit_xi(ds, specs, CrossFitPlan.split(ds.n, 5, seed=0), self.cfg)
        npt.assert_allclose(xi, bundle.xi(ds.v), rtol=1e-14)

    def test_single_fold_is_full_sample(self):
        bundle = fit_bundle(self.ds, self.specs, self.cfg)
        xi = cross_fit_xi(self.ds, self.specs, CrossFitPlan.split(self.ds.n, 1, seed=0), self.cfg, bundle=bundle)
        npt.assert_array_equal(xi, bundle.xi(self.ds.v))

    def test_fold_too_small_names_the_fold(self):
        specs = {**self.specs, NuisanceTarget.MU_Y: linear(Basis.PAIRWISE)}
        ds = self.ds.subset(np.arange(6))
        with self.assertRaises(LearnerError) as ctx:
            cross_fit_xi(ds, specs, CrossFitPlan.split(6, 3, seed=0), self.cfg)
        self.assertIn("fold 1 of 3", str(ctx.exception))


class SampleNuisancesTests(SimpleTestCase):

    def test_evaluate_on_oracle_bundle(self):
        ds = generate(PARAMETRIC_ORACLE, 100, np.random.default_rng(9))
        bundle = fit_bundle(ds, PARAMETRIC_ORACLE.default_learners(), ProblemConfig(kappa=0.35))
        sample = SampleNuisances.evaluate(ds, bundle)
        npt.assert_array_equal(sample.mu_t, bundle.propensity(ds.w))
        npt.assert_array_equal(sample.xi, bundle.xi(ds.v))
        expected = np.where(ds.t == 1, 1.0 / sample.mu_t, -1.0 / (1.0 - sample.mu_t))
        npt.assert_allclose(sample.inverse_weight, expected)
