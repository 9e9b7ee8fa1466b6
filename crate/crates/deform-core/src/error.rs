use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("metric not positive definite at y = ({0:.4}, {1:.4}, {2:.4})")]
    MetricNotPositiveDefinite(f64, f64, f64),

    #[error("metric bound violated: sampled {quantity} = {value:.6e} exceeds M0 = {m0:.6e}")]
    MetricBound { quantity: &'static str, value: f64, m0: f64 },

    #[error("path leaves the working region |y| <= {0}")]
    OutsideWorkingRegion(f64),

    #[error("surface not admitted: {0}")]
    NotAdmitted(String),

    #[error("immersion degenerate (Jacobian rank < 2) at node {0}")]
    DegenerateImmersion(usize),

    #[error("surface is not conjugate isothermal: {0}")]
    NotConjugateIsothermal(String),

    #[error("degenerate boundary field: |lambda~| = 0 at node {0}")]
    DegenerateBoundaryField(usize),

    #[error("boundary phase under-resolved: increase N_theta (max step {0:.3} rad)")]
    UnderResolvedPhase(f64),

    #[error("indeterminate kernel dimension: {0}")]
    IndeterminateKernel(String),

    #[error("c-elimination ill-conditioned: min |pivot| = {0:.3e} relative")]
    EliminationIllConditioned(f64),

    #[error("evolution step {step}: {reason}")]
    Evolution { step: usize, reason: String },

    #[error("seam mismatch: max node distance {0:.3e}")]
    SeamMismatch(f64),

    #[error("linear algebra backend failure: {0}")]
    Backend(String),
}
