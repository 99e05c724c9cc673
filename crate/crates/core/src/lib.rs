//! SDN control and management for WLANs attached to a 5G core: a RAN
//! controller, a WLAN aggregation entity (WAE) data plane, minimal AMF/UPF
//! stubs, and the deterministic discrete-event simulator that wires them
//! together.

pub mod apps;
pub mod cmi;
pub mod controller;
pub mod dataplane;
pub mod fivegc;
pub mod flow;
pub mod model;
pub mod packet;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod slice;
