"""Boundary-element solver and resonance analyzer for small high-contrast
acoustic bubbles: capacitance and Minnaert frequency of a closed surface,
the frequency-dependent interaction operator with its small-scale
expansions, full finite-contrast scattered fields, closed-form asymptotic
amplitudes, and the point-interaction resolvent limit."""

from .boundary_calculus import (ExpansionResidual, NumericalGuardError,
                                SchurBlocks, SpectralData, capacitance,
                                dirichlet_to_neumann, expansion_residual,
                                k2_resonance_frequency, minnaert_frequency,
                                projectors, s0_inner, s0_norm,
                                s0_operator_norm, schur_blocks, spectral_data)
from .layer_ops import (DENSITY, TRACE, BoundaryDensity, BoundaryOperator,
                        SpaceTagError, assemble_double_layer,
                        assemble_series_term_K, assemble_series_term_S,
                        assemble_single_layer, eval_single_layer_potential,
                        load_operator, save_operator)
from .mesh import (MeshError, SurfaceMesh, affine_transform, build_mesh,
                   geometric_moments, load_mesh, make_ellipsoid,
                   make_icosphere, save_off, scale_about, surface_centroid)
from .mie import (MieSolution, load_fixture, mie_eval, mie_monopole_amplitude,
                  mie_partial_wave_matrix, mie_solve, save_fixture)
from .scattering import (FieldResult, FitError, PeakFit, PlaneWave,
                         PointSource, ScatteringProblem, SweepResult,
                         SweepRow, asymptotic_nonresonant, asymptotic_resonant,
                         asymptotic_uniform, far_field_points, fit_monopole,
                         frequency_sweep, green_function, interaction_operator,
                         lorentzian_halfwidth, monopole_amplitude,
                         point_perturbation_kernel, radiation_defect,
                         resolvent_correction_kernel, resonance_peak,
                         scattered_field_dilated, scattered_field_direct,
                         transmission_residual)

__version__ = "0.1.0"
