//! Honest-but-curious location service: a ground-truth POI database, a
//! server that answers faithfully, and a log of everything it could learn.

mod db;
mod server;

pub use db::{
    decode_pois, encode_pois, within_radius, Poi, PoiDatabase, PoiDbError, POI_DB_HEADER,
};
pub use server::{
    curiosity_report, AccessMode, Credential, CuriosityReport, LbsError, LbsRequest, LbsResponse,
    LbsServer, LogEntry, PresentedCredential, ResponseMode, ServerLog,
};
