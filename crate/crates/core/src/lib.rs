pub mod adversary;
pub mod credentials;
pub mod crypto;
pub mod harness;
pub mod lbs;
pub mod netsim;
pub mod node;
pub mod types;

pub use types::{NodeIndex, PoiType, Point, SimTime, Window};
