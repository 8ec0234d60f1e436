//! Observer views on an honest run.

use p2plbs_core::harness::{privacy_report, Simulation};

use super::scenarios;

pub fn observer_views() -> String {
    let cfg = scenarios::load("honest");
    let tau_us = (cfg.policy.pseudonym_lifetime_s * 1e6) as u64;
    let mut sim = Simulation::new(cfg).unwrap();
    sim.run();
    let r = privacy_report(sim.log().as_str());
    let e = &r.eavesdropper;
    assert!(e.messages > 100, "{e:?}");
    assert!(r.rotation_unlinkable(), "{:?}", e.spanning_rotation);
    assert!(e.max_linkable_span_us < tau_us, "{e:?}");
    for view in ["ltca", "pca"] {
        let a = r.authority(view).unwrap();
        assert_eq!(a.mapped, 0, "{view} maps pseudonyms");
    }
    let c = r.authority("ltca+pca").unwrap();
    assert!(c.pseudonyms_seen > 0);
    assert_eq!(
        (c.mapped, c.correct),
        (c.pseudonyms_seen, c.pseudonyms_seen)
    );
    format!(
        "{} messages in {} linkable sets, longest {:.0} s; ltca 0/{n}, pca 0/{n}, coalition {}/{n} mapped",
        e.messages,
        e.linkable_sets,
        e.max_linkable_span_us as f64 / 1e6,
        c.correct,
        n = c.pseudonyms_seen
    )
}
