use softblob_web::{assignment_summary, blob_assignment, contact_graph, focal_curve, focal_grid, tau_schedule};

#[test]
fn assignment_rows_are_distributions_that_sharpen_as_tau_falls() {
    let hot = blob_assignment(10, 4, 5.0, 3, true).unwrap();
    let cold = blob_assignment(10, 4, 0.1, 3, true).unwrap();
    for row in hot.chunks(4).chain(cold.chunks(4)) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
    let (h, c) = (assignment_summary(&hot, 4), assignment_summary(&cold, 4));
    assert!(c[0] > h[0] && c[1] < h[1]);
    assert!(c[0] > 0.9);
    assert!(h[1] <= 4f64.ln() + 1e-12);
    assert_eq!(blob_assignment(10, 4, 1.0, 3, true).unwrap(), blob_assignment(10, 4, 1.0, 3, true).unwrap());
    assert!(blob_assignment(3, 2, 0.0, 1, false).is_err());
}

#[test]
fn schedule_runs_from_start_to_end() {
    let s = tau_schedule(5, 2.0, 0.5);
    assert_eq!(s.len(), 5);
    assert_eq!((s[0], s[4]), (2.0, 0.5));
    assert!(s.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn contacts_grow_with_epsilon() {
    let parse = |s: String| serde_json::from_str::<serde_json::Value>(&s).unwrap();
    let small = parse(contact_graph("helix", 20, 4.0, 3, 1).unwrap());
    let large = parse(contact_graph("helix", 20, 10.0, 3, 1).unwrap());
    let count = |v: &serde_json::Value| v["pairs"].as_array().unwrap().len();
    assert!(count(&small) < count(&large));
    // consecutive helix Cα atoms sit 3.8 Å apart; i, i+3 and i+4 are the first long-range contacts
    assert_eq!(count(&small), 19);
    assert_eq!(small["long_range"], 0);
    assert!(large["long_range"].as_u64().unwrap() > 0);
    let hairpin = parse(contact_graph("hairpin", 16, 5.0, 4, 1).unwrap());
    assert!(hairpin["long_range"].as_u64().unwrap() > 0);
    let motif = parse(contact_graph("clique", 24, 8.0, 20, 4).unwrap());
    // bridge residues are dropped when no placement fits
    assert!((22..=24).contains(&motif["coords"].as_array().unwrap().len()));
    assert!(contact_graph("blob", 10, 8.0, 3, 1).is_err());
}

#[test]
fn focal_curve_matches_closed_form() {
    let grid = focal_grid(9);
    let ce = focal_curve(0.0, 0.0, 2, 9).unwrap();
    let focal = focal_curve(2.0, 0.0, 2, 9).unwrap();
    for ((p, a), b) in grid.iter().zip(&ce).zip(&focal) {
        assert!((a + p.ln()).abs() < 1e-12);
        assert!((b + (1.0 - p).powi(2) * p.ln()).abs() < 1e-12);
    }
    assert!(ce.windows(2).all(|w| w[1] < w[0]));
    assert!(focal_curve(1.0, 0.0, 1, 5).is_err());
}
