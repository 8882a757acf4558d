use needlevib::phantom::{synth_sequence, EntrySide, PhantomSpec};
use needlevib::sequence::UsSequence;

fn temporal_std(seq: &UsSequence, x: usize, y: usize) -> f64 {
    let s = seq.pixel_signal(x, y).unwrap().samples;
    let m = s.iter().sum::<f64>() / s.len() as f64;
    (s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / s.len() as f64).sqrt()
}

#[test]
fn segment_pixels_move_more_than_far_background() {
    let spec = PhantomSpec { vib_amplitude: 0.8, ..PhantomSpec::bin_aligned(21) };
    let (seq, _) = synth_sequence(&spec).unwrap();
    let g = spec.geometry().unwrap();
    let (mut on, mut far) = (Vec::new(), Vec::new());
    for y in 0..spec.height {
        for x in 0..spec.width {
            let d = g.segment_distance(x as f64, y as f64);
            if d <= 0.5 {
                on.push(temporal_std(&seq, x, y));
            } else if d > 5.0 * spec.motion_sigma {
                far.push(temporal_std(&seq, x, y));
            }
        }
    }
    let mean_on = on.iter().sum::<f64>() / on.len() as f64;
    far.sort_by(|a, b| a.total_cmp(b));
    let median_far = far[far.len() / 2];
    assert!(mean_on > 3.0 * median_far, "on {mean_on} far {median_far}");
}

#[test]
fn same_seed_same_bytes() {
    let spec = PhantomSpec::paper(7);
    let (a, ga) = synth_sequence(&spec).unwrap();
    let (b, gb) = synth_sequence(&spec).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_eq!(ga, gb);
    let (c, _) = synth_sequence(&PhantomSpec::paper(8)).unwrap();
    assert_ne!(a.to_bytes(), c.to_bytes());
}

#[test]
fn paper_preset_dimensions() {
    let (seq, gt) = synth_sequence(&PhantomSpec::paper(0)).unwrap();
    assert_eq!((seq.height(), seq.width(), seq.frame_count()), (328, 335, 30));
    assert_eq!(seq.fps(), 30.0);
    assert!((0.0..180.0).contains(&gt.theta));
    assert!(gt.tip_x >= 0.0 && gt.tip_x <= 334.0 && gt.tip_y >= 0.0 && gt.tip_y <= 327.0);
}

#[test]
fn every_entry_side_produces_a_valid_phantom() {
    let cases = [
        (EntrySide::Left, (0.0, 100.0), 20.0),
        (EntrySide::Right, (334.0, 100.0), 160.0),
        (EntrySide::Top, (150.0, 0.0), 70.0),
        (EntrySide::Bottom, (150.0, 327.0), 110.0),
    ];
    for (side, entry, angle) in cases {
        let spec = PhantomSpec {
            entry_side: side,
            needle_entry: entry,
            needle_angle: angle,
            needle_length: 120.0,
            frame_count: 12,
            ..PhantomSpec::paper(1)
        };
        let (_, gt) = synth_sequence(&spec).unwrap_or_else(|e| panic!("{side:?}: {e}"));
        let (sin, cos) = gt.theta.to_radians().sin_cos();
        let rho = gt.tip_x * cos + gt.tip_y * sin;
        assert!((rho - gt.rho).abs() < 1e-9);
    }
}

#[test]
fn nyquist_violation_rejected() {
    let spec = PhantomSpec { vib_freq: 20.0, ..PhantomSpec::paper(0) };
    assert!(synth_sequence(&spec).is_err());
}

#[test]
fn ground_truth_json_keys() {
    let gt = PhantomSpec::paper(0).ground_truth().unwrap();
    let v: serde_json::Value = serde_json::to_value(gt).unwrap();
    for key in ["theta_deg", "rho_px", "tip_x_px", "tip_y_px", "pixel_spacing_mm"] {
        assert!(v.get(key).is_some(), "missing {key}");
    }
}
