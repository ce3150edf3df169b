//! Certified expansion of control invariant sets for planar control-affine systems.
//!
//! The set boundary is a closed centripetal Catmull-Rom curve. Each segment carries a
//! Lipschitz certificate that some admissible input points the flow inward everywhere
//! along it; a barrier-filtered QP moves the control points outward while keeping every
//! certificate valid. A signed distance filter and a grid viability kernel support
//! runtime use and validation.

pub mod curve;
pub mod dynamics;
pub mod error;
pub mod expansion;
pub mod feasibility;
pub mod geom;
pub mod io;
pub mod kernel;
pub mod ode;
pub mod qp;
pub mod safety_filter;
pub mod scalar;

pub use curve::{BoundaryState, Segment, Spacing};
pub use dynamics::{StateBox, SystemModel};
pub use error::{Error, Result};
pub use expansion::{expand, expand_from, verify, ExpansionConfig, ExpansionResult, ExpansionStatus, InitialSet, VerificationReport};
pub use feasibility::{b_star, certify_segment, grad_margin, solve_box_lp, CertifyOptions, LipschitzMode, SegmentCertificate};
pub use geom::Vec2;
pub use kernel::{analytic_di_kernel, viability_kernel, KernelGrid};
pub use qp::{solve_qp, QpProblem, QpSolution, QpStatus};
pub use safety_filter::{filter_control, signed_distance, FilterConfig, SafetyFilter};
pub use scalar::Real;

/// Double precision aliases.
pub type Point = Vec2<f64>;
pub type Boundary = BoundaryState<f64>;
pub type System = SystemModel<f64>;
pub type Box2 = StateBox<f64>;
pub type Config = ExpansionConfig<f64>;
pub type Certificate = SegmentCertificate<f64>;
pub type Report = VerificationReport<f64>;
pub type Kernel = KernelGrid<f64>;
pub type Filter = SafetyFilter<f64>;
pub type Qp = QpProblem<f64>;
