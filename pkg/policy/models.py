"""Domain enumerations shared by the engine modules and the commands.

The project keeps no database tables; these are plain ``TextChoices`` so that
config files, JSON outputs and command flags all use the same spellings.
"""
from django.db import models


class ReferenceKind(models.TextChoices):
    FR = "FR", "Fixed rule"
    RD = "RD", "Random at budget-saturating probability"
    TP = "TP", "Observed propensity"


class DgpKind(models.TextChoices):
    MAIN = "main", "Three covariates, binary cost and outcome"
    PARAMETRIC = "parametric", "One covariate, logistic model"


class LearnerKind(models.TextChoices):
    LINEAR = "linear", "Linear least squares"
    LOGISTIC = "logistic", "Logistic regression (IRLS)"
    ORACLE = "oracle", "Closed-form truth of a simulation DGP"


class NuisanceTarget(models.TextChoices):
    MU_Y = "mu_y", "E[Y | T, W]"
    MU_C = "mu_c", "E[C | T, W]"
    MU_T = "mu_t", "P(T = 1 | W)"
    DELTA_Y = "delta_y", "E[Delta^Y(W) | V]"
    DELTA_C = "delta_c", "E[Delta^C(W) | V]"


class Basis(models.TextChoices):
    INTERCEPT = "intercept", "Intercept only"
    MAIN = "main", "Intercept and main effects"
    PAIRWISE = "pairwise", "Main effects and pairwise products"
