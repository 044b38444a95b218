pub mod crypto;
pub mod keytree;
pub mod merkle;
pub mod par;
pub mod protocols;
pub mod simnet;
pub mod vfd;
pub mod arbiter;
