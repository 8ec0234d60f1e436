#[path = "suites/credentials.rs"]
mod credentials;

#[test]
fn ticket_windows_never_overlap() {
    credentials::ticket_windows_never_overlap(10_000);
}

#[test]
fn ledgers_share_no_identifying_bytes() {
    credentials::ledgers_share_no_identifying_bytes();
}

#[test]
fn resolution_round_trips_without_false_identifications() {
    credentials::resolution_round_trips_without_false_identifications();
}
