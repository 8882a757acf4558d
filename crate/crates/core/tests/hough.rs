use ndarray::Array2;
use proptest::prelude::*;

use needlevib::hough::{
    argmax_cell, hough_transform, inverse_hough_accumulate, render_shaft_gt, render_tip_gt,
    shaft_from_hough, tip_from_hough, HoughGrid,
};

#[test]
fn diagonal_line_mask_peaks_at_its_cell() {
    let grid = HoughGrid::with_defaults(100, 100).unwrap();
    let (s, c) = 45f64.to_radians().sin_cos();
    let mut mask = Array2::zeros((100, 100));
    // 80 samples along x*cos + y*sin = 40, one per pixel step.
    for k in -40..40 {
        let (x, y) = (40.0 * c - k as f64 * s, 40.0 * s + k as f64 * c);
        let (xi, yi) = (x.round(), y.round());
        if (0.0..100.0).contains(&xi) && (0.0..100.0).contains(&yi) {
            mask[[yi as usize, xi as usize]] = 1.0;
        }
    }
    let ht = hough_transform(&mask, &grid).unwrap();
    let (i, j, _) = argmax_cell(&ht).unwrap();
    let (theta, rho) = grid.line_from_cell(i, j).unwrap();
    assert!((theta - 45.0).abs() <= grid.theta_step(), "theta {theta}");
    assert!((rho - 40.0).abs() <= grid.rho_step(), "rho {rho}");

    // brute force over all cells agrees with the argmax helper
    let best = ht.iter().cloned().fold(f64::MIN, f64::max);
    assert_eq!(ht[[i, j]], best);
}

#[test]
fn crossing_lines_peak_at_intersection() {
    let grid = HoughGrid::with_defaults(60, 60).unwrap();
    // vertical x = 20 and horizontal y = 35
    let a = grid.cell_from_line(0.0, 20.0).unwrap();
    let b = grid.cell_from_line(90.0, 35.0).unwrap();
    let acc = inverse_hough_accumulate(&[(a.0, a.1, 1.0), (b.0, b.1, 1.0)], &grid).unwrap();
    let peak = acc.iter().cloned().fold(f64::MIN, f64::max);
    let maxima: Vec<_> = acc.indexed_iter().filter(|(_, &v)| v == peak).map(|(p, _)| p).collect();
    assert_eq!(maxima, vec![(35, 20)]);
}

#[test]
fn delta_image_round_trips_through_its_sinusoid() {
    let grid = HoughGrid::with_defaults(50, 70).unwrap();
    for &(x, y) in &[(0usize, 0usize), (69, 49), (33, 12), (5, 44)] {
        let mut img = Array2::zeros((50, 70));
        img[[y, x]] = 1.0;
        let ht = hough_transform(&img, &grid).unwrap();
        let cells: Vec<_> = ht
            .indexed_iter()
            .filter(|(_, &v)| v > 0.0)
            .map(|((i, j), &v)| (i, j, v))
            .collect();
        assert_eq!(cells.len(), grid.theta_bins());
        let acc = inverse_hough_accumulate(&cells, &grid).unwrap();
        let (py, px, _) = argmax_cell(&acc).unwrap();
        assert!((px as f64 - x as f64).abs() <= 1.0 && (py as f64 - y as f64).abs() <= 1.0);
    }
}

#[test]
fn tip_render_recovers_reference_point() {
    let grid = HoughGrid::with_defaults(328, 335).unwrap();
    let ch = render_tip_gt(&grid, 120.0, 80.0, 2.0).unwrap();
    let (x, y) = tip_from_hough(&ch, &grid, 1.0).unwrap();
    assert!((x - 120.0).hypot(y - 80.0) <= 1.5);
    assert!(render_tip_gt(&grid, -1.0, 5.0, 2.0).is_err());
    assert!(render_tip_gt(&grid, 5.0, 400.0, 2.0).is_err());
}

#[test]
fn narrow_shaft_blur_concentrates_mass() {
    let grid = HoughGrid::with_defaults(64, 64).unwrap();
    let ch = render_shaft_gt(&grid, 30.0, 10.0, 0.25).unwrap();
    let mut v: Vec<f64> = ch.iter().cloned().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    assert_eq!(v[0], 1.0);
    assert!(v[1] < 1e-3);
}

fn feature_strategy() -> impl Strategy<Value = Array2<f64>> {
    (16usize..40, 16usize..40).prop_flat_map(|(h, w)| {
        prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], h * w)
            .prop_map(move |v| Array2::from_shape_vec((h, w), v).unwrap())
    })
}

proptest! {
    #[test]
    fn votes_are_conserved_per_theta(feature in feature_strategy()) {
        let (h, w) = feature.dim();
        let grid = HoughGrid::with_defaults(h, w).unwrap();
        let ht = hough_transform(&feature, &grid).unwrap();
        let total = feature.sum();
        for row in ht.rows() {
            prop_assert!((row.sum() - total).abs() <= 1e-6 * total.max(1.0));
        }
        prop_assert!(ht.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn shaft_render_argmax_is_identity(i in 0usize..180, j in 0usize..200) {
        let grid = HoughGrid::with_defaults(70, 70).unwrap();
        let j = j % grid.rho_bins();
        let (theta, rho) = grid.line_from_cell(i, j).unwrap();
        let ch = render_shaft_gt(&grid, theta, rho, 2.0).unwrap();
        prop_assert_eq!(shaft_from_hough(&ch, &grid).unwrap(), (theta, rho));
    }

    #[test]
    fn monotone_transform_keeps_shaft(feature in feature_strategy()) {
        let (h, w) = feature.dim();
        let grid = HoughGrid::with_defaults(h, w).unwrap();
        let ht = hough_transform(&feature, &grid).unwrap();
        prop_assume!(ht.iter().any(|&v| v > 0.0));
        let a = shaft_from_hough(&ht, &grid).unwrap();
        let b = shaft_from_hough(&ht.mapv(|v| (3.0 * v).sqrt() + 1.0), &grid).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn inverse_accumulation_is_linear(i in 0usize..180, j in 0usize..120, w in 0.1f64..5.0) {
        let grid = HoughGrid::with_defaults(40, 40).unwrap();
        let j = j % grid.rho_bins();
        let one = inverse_hough_accumulate(&[(i, j, 1.0)], &grid).unwrap();
        let scaled = inverse_hough_accumulate(&[(i, j, w)], &grid).unwrap();
        for (a, b) in one.iter().zip(scaled.iter()) {
            prop_assert!((a * w - b).abs() <= 1e-12);
        }
    }
}
