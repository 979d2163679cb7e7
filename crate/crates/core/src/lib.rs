pub mod attestation;
pub mod bench;
pub mod channel;
pub mod control;
pub mod crypto;
pub mod dataplane;
pub mod enclave;
pub mod endpoints;
pub mod harness;
pub mod net;
pub mod sim;
pub mod wire;
