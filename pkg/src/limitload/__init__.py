"""Certified lower and upper bounds for critical load multipliers.

The package computes two-sided bounds for the critical multiplier of
block-constrained saddle problems: a regularized continuation producing
guaranteed lower bounds, a bisection estimate of the critical value itself,
and a computable upper-bound certificate.  Front-ends assemble instances for
plane-strain limit analysis and a bonded-interface (delamination) model, and
a brute-force oracle validates tiny instances independently.
"""

from .blocks import (AdmissibleBlock, BALL, DEVIATORIC_BALL, FREE, INTERVAL,
                     ZERO, ball_block, deviatoric_ball_block, free_block,
                     interval_block, zero_block)
from .certificates import (MajorantCertificate, compute_majorant,
                           coercivity_minorant, estimate_C_star_discrete,
                           estimate_norm_L_dual, estimate_norm_a, eval_J_A,
                           eval_piC_norm, rho_A)
from .dual import (BisectResult, BoundsReport, NullSpaceInfo, bisect_zeta,
                   detect_null_blocks, eval_Phi_lambda, eval_support_J,
                   minimize_Phi)
from .errors import ConvergenceError, InfSupDegenerateError, ProblemFormatError
from .fem import (DELAMINATION, FemModel, Mesh2D, VON_MISES,
                  assemble_delamination, assemble_model, assemble_von_mises,
                  delamination_closed_form, dual_delamination_check,
                  generate_rect_mesh, load_mesh, load_model, save_mesh)
from .oracle import (NoGapReport, brute_lambda, brute_phi_primal, brute_zeta,
                     verify_no_gap)
from .problem import (DiscreteSaddleProblem, load_problem, problem_from_dict,
                      save_problem)
from .regularize import (AlphaSchedule, RegPathRecord, best_lower_bound,
                         default_schedule, eval_J_alpha, grad_J_alpha,
                         project_Pi_alpha, run_alpha_continuation, solve_psi)

__version__ = "0.1.0"
