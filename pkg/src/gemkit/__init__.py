"""General Effect Modelling: GLM effect decomposition of wide multi-factor data
followed by multivariate (PCA, PLS-DA, elastic net) and univariate analysis."""

from .design import GEM, DesignMatrix, GemDecomposition, ModelFormula, encode_design, er_values, fit_glm
from .enet import ElasticNetDA, cv_path, fit_enet, lambda_path, tune_min_support
from .pca import PCA, fit_pca, grouping_separation
from .pls import PLSDA, ClassResponse, cross_validate, fit_pls, jackknife_test, predict
from .synth import SynthSpec, evaluate_recovery, generate, oracle_ols
from .tabular import (DesignTable, FeatureMatrix, InputError, load_design_table,
                      load_feature_matrix, merge_cohorts, standardize, write_feature_matrix)
from .univariate import adjust_bh, adjust_bonferroni, anova_per_feature, rotation_test

__version__ = "0.1.0"
