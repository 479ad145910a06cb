mod common;

use common::rng;
use rand::Rng;
use unetdr::loss::{bce_loss, combined_loss, dice_loss};
use unetdr::metrics::{evaluate_metrics, Scores};
use unetdr::Tensor;

fn t(v: &[f64]) -> Tensor {
    Tensor::new(vec![v.len()], v.to_vec()).unwrap()
}

#[test]
fn dice_fixture_is_four_fifteenths() {
    // foreground: I = 1, S = 2 + 1 -> 1/3; background: I = 2, S = 2 + 3 -> 2/5
    let expected = 1.0 - (1.0 / 3.0 + 2.0 / 5.0);
    let got = dice_loss(&t(&[1.0, 1.0, 0.0, 0.0]), &t(&[1.0, 0.0, 0.0, 0.0])).unwrap();
    assert!((got - 4.0 / 15.0).abs() < 1e-9);
    assert!((got - expected).abs() < 1e-12);
}

#[test]
fn bce_fixtures() {
    let got = bce_loss(&t(&[1.0, 0.0]), &t(&[0.9, 0.2])).unwrap();
    assert!((got - 0.16425).abs() < 1e-5, "{got}");
    let half = bce_loss(&t(&[1.0, 0.0, 1.0]), &t(&[0.5; 3])).unwrap();
    assert!((half - std::f64::consts::LN_2).abs() < 1e-12);
    let exact = bce_loss(&t(&[1.0, 0.0]), &t(&[1.0, 0.0])).unwrap();
    assert!(exact < 1e-6);
}

#[test]
fn combined_fixtures() {
    let y = t(&[1.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    assert!(combined_loss(&y, &y).unwrap().total < 1e-5);

    let (y, p) = (t(&[1.0, 1.0, 0.0, 0.0]), t(&[1.0, 0.0, 0.0, 0.0]));
    let v = combined_loss(&y, &p).unwrap();
    // bce of this pair: one confident miss clamped at 1e-7, three hits
    let clamp = 1e-7f64;
    let bce = (-(1.0 - clamp).ln() * 3.0 - clamp.ln()) / 4.0;
    assert!((v.total - (4.0 / 15.0 + bce)).abs() < 1e-9);
    assert!((v.dice_term + v.bce_term - v.total).abs() < 1e-15);

    let ones = t(&[1.0; 4]);
    let zeros = t(&[0.0; 4]);
    assert!((dice_loss(&ones, &zeros).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn jaccard_dice_identity_on_random_pairs() {
    let mut r = rng(2024);
    for _ in 0..100 {
        let n = r.random_range(1..400);
        let fy = r.random_range(0.0..1.0);
        let fp = r.random_range(0.0..1.0);
        let y: Vec<f64> = (0..n).map(|_| f64::from(r.random_bool(fy) as u8)).collect();
        let p: Vec<f64> = (0..n).map(|_| f64::from(r.random_bool(fp) as u8)).collect();
        let s = evaluate_metrics(&y, &p, 0.5).unwrap();
        assert!((s.ji - s.dc / (2.0 - s.dc)).abs() < 1e-12, "{s:?}");
    }
}

#[test]
fn voxel_enumeration_fixture() {
    // 27 voxels, |y| = 4, |p| = 4, overlap 2: 2 false positives, 2 false
    // negatives, so 23 voxels agree
    let mut y = vec![0.0; 27];
    let mut p = vec![0.0; 27];
    for i in [0, 5, 13, 26] {
        y[i] = 1.0;
    }
    for i in [5, 13, 20, 21] {
        p[i] = 0.9;
    }
    let s = evaluate_metrics(&y, &p, 0.5).unwrap();
    assert_eq!(
        s,
        Scores {
            dc: 0.5,
            ji: 1.0 / 3.0,
            ac: 23.0 / 27.0
        }
    );
}

#[test]
fn perfect_and_empty_predictions() {
    let y = [1.0, 0.0, 1.0];
    let perfect = Scores { dc: 1.0, ji: 1.0, ac: 1.0 };
    assert_eq!(evaluate_metrics(&y, &y, 0.5).unwrap(), perfect);
    assert_eq!(evaluate_metrics(&[0.0; 5], &[0.1; 5], 0.5).unwrap(), perfect);
}
