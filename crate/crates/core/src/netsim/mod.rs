//! Deterministic discrete-event machinery: the event queue, node placement,
//! the broadcast radio, and the query workload.

mod placement;
mod queue;
mod radio;
mod request;
mod workload;

pub use placement::{Area, Mobility, Placement};
pub use queue::{EventQueue, ScheduleError};
pub use radio::{RadioModel, Topology};
pub use request::{RequestModel, RequestModelError, TargetReading};
pub use workload::{generate_workload, Arrival, PoiWeight, WorkloadError};
