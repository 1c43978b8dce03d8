"""Pilot-aided channel estimation and nearest-neighbor decoding for bandlimited MIMO fading."""

from .codec import (Codebook, DecodeResult, NearestNeighborDecoder, channel_apply,
                    generate_codebook, nn_decode, simulate_block_errors, transmit_frame)
from .estimator import (EstimationProfile, InterpolatorWeights, PilotInterpolator, PilotSchedule,
                        analytic_profile, build_schedule, empirical_error_stats, estimate_path,
                        limit_profile, solve_weights)
from .fading import FadingPath, autocovariance, synthesize
from .gmi import (GmiEstimate, PreLogFit, digamma_closed_form, f_snr, gmi_lb_asymptotic,
                  gmi_lb_finite_T, gmi_lb_general_input, prelog_fit, theta_choice)
from .mac import (MacConfig, PreLogRegion, scheme_verdict, jt_region, mac_gmi_sum,
                  mac_gmi_user1, mac_gmi_user2, mac_schedule, tdma_region)
from .spectrum import (PsdModel, aliased_error_lower_bound, error_variance_general,
                       error_variance_no_alias, eval_psd, undersampled_spectrum)

__version__ = "0.1.0"
