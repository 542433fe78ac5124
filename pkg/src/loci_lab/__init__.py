"""loci-lab: conjugate and cut loci of Hamilton-Jacobi characteristics.

Numerics for Dirichlet-type Hamilton-Jacobi problems and Riemannian
distance functions: characteristic flows, linearized (Jacobi) propagation
of Lagrangian frames, conjugate-time detection through frame singularity,
cut times by loss of action minimality over a characteristic family,
closed-form round-sphere oracles, and empirical regularity/convexity
analysis.  Hot kernels run in a compiled core when available
(``loci_lab._engine.BACKEND``), with a pure-Python fallback.
"""

from ._engine import BACKEND
from .linearized import (FrameTrajectory, KExtraction, LagrangianFrame,
                         extract_K, isotropy_residual, linearized_flow,
                         propagate_tangents, symplectic_form,
                         vertical_arrival_frame, vertical_frame)
from .loci import (ConjugateResult, CutResult, LociRecord, LociTable,
                   ValueField, build_value_field, classify_cut_point,
                   conjugate_time, cut_time, scan_loci)
from .models import (HamiltonianModel, PhasePoint, Trajectory, action,
                     catalog, coeff_matrices, conformal_model, flow,
                     legendre, polynomial_model, validate_model)
from .regularity import (ConvexityCertificate, NonfocalBoundary,
                         hessian_bound_estimate, lipschitz_estimate,
                         nonfocal_domain, semiconcavity_estimate,
                         uniform_convexity)
from .sources import (SourceSample, SourceSpec, boundary_covector,
                      circle_source, exp_map, hyperplane_source,
                      initial_lagrangian, point_source, source_mesh)
from .sphere import (PerturbationSpec, chart_maps, closed_form_K,
                     closed_form_U, closed_form_gap, geodesic_closed_form,
                     parallel_frame, perturbed_model, project, round_model,
                     unproject)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
