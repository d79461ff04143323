"""Restricted mean time in favor for progressive multi-state outcomes.

Doubly robust estimation of win-time treatment effects under right
censoring, for individually randomized and cluster-randomized trials, with
group/cluster jackknife inference and a simulation harness.
"""

from .data import (CRT, IRT, Dataset, DesignConfig, MultiStateRecord,
                   load_long_csv, load_wide_csv, to_long_rows,
                   winsorize_states)
from .errors import (ConvergenceError, EstimationError, FormatError,
                     NumericalError, ParseError, ReplicationError, RmtifError,
                     SchemaError, ValidationError)
from .estimator import (StageSurvivalSet, build_time_grid,
                        estimate_stage_survival_crt,
                        estimate_stage_survival_irt, isotonic_projection,
                        km_plug_in_stage_survival)
from .functional import (RmtifEstimate, bouquet_export, bouquet_rows,
                         pairwise_delta_oracle, pairwise_xi_oracle, rmtif,
                         xi_stage)
from .jackknife import (EstimatorSpec, JackknifePlan, JackknifeResult,
                        estimate_rmtif, jackknife, jackknife_cov,
                        jackknife_replicates)
from .survival import (CensoringModel, CoxFit, MartingaleJumps, StepCumHaz,
                       StepSurvCurve, censoring_martingale_jumps,
                       censoring_model_fit, cox_fit, km_fit, predict_survival)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
