"""Multimodal remote sensing image registration.

Structural feature volumes from first/second-order steerable Gaussian
channels, correlated with an FFT/integral-image fast normalized
cross-correlation, orchestrated by a coarse-to-fine pipeline (block-uniform
corner detection, search prediction from geo-referencing or a rational
camera model, robust outlier rejection, bilinear rectification).
"""

from .descriptor import (ChannelStack, FeatureVolume, SfocParams, build_sfoc,
                         dilated_smooth, first_order_channels, load_volume,
                         normalize_group, raw_intensity_volume, save_volume,
                         second_order_channels)
from .detect import InterestPoint, block_fast, fast_corners
from .filters import (Kernel, SteerableBasisG1, SteerableBasisG2, convolve2d,
                      dilated_gaussian, g1_basis, g2_basis, gaussian_kernel,
                      steer_g1, steer_g2)
from .geometry import (AffineBias, AffineTransform, EstimationError,
                       Poly2Transform, ProjectiveTransform, RansacConfig,
                       RfmRectifier, RpcModel, affine_bias_fit, estimate_affine,
                       estimate_poly2, estimate_projective, load_rpc,
                       local_affine_from_rfm, ransac, rfm_forward, rfm_inverse,
                       save_rpc, warp_resample)
from .harness import (BenchReport, SweepRow, SynthPair, SynthSpec,
                      add_gaussian_noise, add_speckle, bench_ncc, make_texture,
                      noise_sweep, save_sweep, synth_pair, tone_map)
from .pipeline import (ControlPoint, MatchConfig, MatchFailure,
                       RegistrationMetrics, RegistrationResult,
                       checkerboard_overlay, compute_metrics, detect_cps,
                       harmonize_resolution, load_cps, load_manual_cps, match_ip,
                       predict_search_window, rectify, refine_and_reject,
                       register_images, save_cps, truth_from_manual_cps)
from .raster import (GeoRef, Patch, Raster, RasterError, bilinear_sample,
                     extract_patch, extract_window, load_raster, load_world_file,
                     save_raster, save_world_file)
from .similarity import (ComplexityReport, CorrelationSurface,
                         DegenerateTemplateError, SumTable, TemplateStats,
                         build_sum_tables, complexity_estimate, cross_corr_fft,
                         fast_ncc, ncc_naive, peak_locate, region_sum,
                         surface_to_unit_range)

__version__ = "0.1.0"
