pub mod approx_ba;
pub mod authsim;
pub mod binary_ba;
pub mod checks;
pub mod exact_mv;
pub mod geo;
pub mod ledger;
pub mod model;
pub mod netsim;
