//! Comparison controllers and the nets they rely on.

pub mod cert_equiv;
pub mod cusumano_poolla;
pub mod nets;
pub mod stabilizable;

pub use cert_equiv::{cert_equiv_gain_bound, cert_equiv_step, CertEquivController, CertEquivState};
pub use cusumano_poolla::{
    cp_gain_bound_log, cp_net_eps, cusumano_poolla_step, CandidateOrder, CpConfig, CpState, CpSwitch, CusumanoPoolla,
};
pub use nets::{controller_grid_net, sphere_net, ControllerGrid, SphereNet};
pub use stabilizable::{
    assemble_instance, make_strongly_stabilizable_instance, verify_strong_stabilizability, StabilizabilityCertificate,
    StabilizabilityCheck,
};
