"""Batching-based uncertainty quantification for dependent simulation output."""

__version__ = "0.1.0"

from .batching import (BatchLayout, LayoutError, SampleSeries, as_series, batch_slice,
                       layout_from_policy, plan_layout)
from .functionals import (MEAN, Functional, FunctionalError, custom, evaluate, marginal_quantiles,
                          parse_functional, quantile, quantile_linear)
from .assess import (DegenerateLayoutError, ErrorEnsemble, Method, build_ensemble, error_cdf,
                     estimate_bias, estimate_error_quantiles, estimate_stddev, estimate_variance)
from .limits import (TableCache, critical_value, critical_values, sample_B_tilde, sample_chi2_ob1,
                     sample_chi2_ob2, sample_T, sample_wiener)
from .confidence import (ConfidenceRegion, DegenerateDesignError, MonteCarloTable, build_region,
                         studentizing_matrix)
from .testbeds import InventoryConfig, gen_gamma_iid, quantile_clt_variance, simulate_inventory
