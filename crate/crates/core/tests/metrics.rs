use ndt_imaging::grid::{ImageGrid, RasterGrid};
use ndt_imaging::metrics::*;
use ndt_imaging::model::GroundTruthMask;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture(values: Vec<f64>, mask: Vec<u8>, nx: usize) -> (ImageGrid, GroundTruthMask) {
    let grid = RasterGrid::new(nx, values.len() / nx, 1.0, 0.0, 0.0).unwrap();
    (
        ImageGrid::from_values(grid, values).unwrap(),
        GroundTruthMask { grid, mask },
    )
}

/// P(score+ > score-) + P(=)/2 over all pairs.
fn mann_whitney(values: &[f64], mask: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (a, &ma) in values.iter().zip(mask) {
        if ma != 1 {
            continue;
        }
        for (b, &mb) in values.iter().zip(mask) {
            if mb != 0 {
                continue;
            }
            pairs += 1.0;
            if a > b {
                wins += 1.0;
            } else if a == b {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Confusion counts by direct enumeration.
fn brute_counts(values: &[f64], mask: &[u8], tau: f64) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (v, m) in values.iter().zip(mask) {
        match (*v >= tau, *m == 1) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            (false, false) => c.3 += 1,
        }
    }
    c
}

fn random_fixture(rng: &mut ChaCha8Rng, n: usize, levels: u32) -> (Vec<f64>, Vec<u8>) {
    loop {
        let values: Vec<f64> = (0..n)
            .map(|_| rng.gen_range(0..levels) as f64 / levels as f64)
            .collect();
        let mask: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.3) as u8).collect();
        if mask.contains(&0) && mask.contains(&1) {
            return (values, mask);
        }
    }
}

#[test]
fn auroc_matches_pairwise_oracle_on_random_fixtures() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for k in 0..50 {
        let n = rng.gen_range(4..=200);
        // few levels on odd fixtures so ties are exercised
        let levels = if k % 2 == 0 { 1_000_000 } else { 7 };
        let (values, mask) = random_fixture(&mut rng, n, levels);
        let oracle = mann_whitney(&values, &mask);
        let (img, gt) = fixture(values, mask, n);
        let a = auroc(&roc_curve(&img, &gt, &Exclusion::none()).unwrap());
        assert!((a - oracle).abs() < 1e-12, "fixture {k}: {a} vs {oracle}");
    }
}

#[test]
fn random_scores_give_auroc_one_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 10_000;
    let values: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
    let mask: Vec<u8> = (0..n).map(|k| (k % 2) as u8).collect();
    let (img, gt) = fixture(values, mask, 100);
    let a = auroc(&roc_curve(&img, &gt, &Exclusion::none()).unwrap());
    assert!((a - 0.5).abs() < 0.02, "{a}");
}

const HAND: [f64; 6] = [0.9, 0.8, 0.7, 0.6, 0.55, 0.4];
const HAND_MASK: [u8; 6] = [1, 1, 0, 1, 0, 0];

#[test]
fn curves_match_exhaustive_enumeration() {
    let (img, gt) = fixture(HAND.to_vec(), HAND_MASK.to_vec(), 3);
    let roc = roc_curve(&img, &gt, &Exclusion::none()).unwrap();
    let prc = prc_curve(&img, &gt, &Exclusion::none()).unwrap();
    assert_eq!(roc.len(), 7);
    assert_eq!(roc[0].threshold, f64::INFINITY);
    for (k, tau) in std::iter::once(f64::INFINITY).chain(HAND).enumerate() {
        let (tp, fp, fn_, tn) = brute_counts(&HAND, &HAND_MASK, tau);
        assert_eq!(roc[k].threshold, tau);
        assert_eq!(roc[k].x, fp as f64 / (fp + tn) as f64);
        assert_eq!(roc[k].y, tp as f64 / (tp + fn_) as f64);
        let precision = if tp + fp == 0 {
            1.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        assert_eq!(prc[k].x, tp as f64 / (tp + fn_) as f64);
        assert_eq!(prc[k].y, precision);
    }
}

#[test]
fn thresholds_match_exhaustive_enumeration() {
    let (img, gt) = fixture(HAND.to_vec(), HAND_MASK.to_vec(), 3);
    let roc = roc_curve(&img, &gt, &Exclusion::none()).unwrap();
    let prc = prc_curve(&img, &gt, &Exclusion::none()).unwrap();
    let (mut best_roc, mut best_prc, mut best_f1) = ((f64::MAX, 0.0), (f64::MAX, 0.0), (-1.0, 0.0));
    for tau in HAND {
        let (tp, fp, fn_, tn) = brute_counts(&HAND, &HAND_MASK, tau);
        let tpr = tp as f64 / (tp + fn_) as f64;
        let fpr = fp as f64 / (fp + tn) as f64;
        let prec = tp as f64 / (tp + fp) as f64;
        let d_roc = fpr.hypot(1.0 - tpr);
        let d_prc = (1.0 - tpr).hypot(1.0 - prec);
        let f = tp as f64 / (tp as f64 + 0.5 * (fp + fn_) as f64);
        // descending sweep: strict improvement keeps the larger threshold on ties
        if d_roc < best_roc.0 {
            best_roc = (d_roc, tau);
        }
        if d_prc < best_prc.0 {
            best_prc = (d_prc, tau);
        }
        if f > best_f1.0 {
            best_f1 = (f, tau);
        }
    }
    assert_eq!(tau_roc(&roc), best_roc.1);
    assert_eq!(tau_prc(&prc), best_prc.1);
    assert_eq!(
        tau_f1(&img, &gt, &Exclusion::none()).unwrap(),
        (best_f1.1, best_f1.0)
    );
    assert_eq!(best_f1, (3.0 / 3.5, 0.6));
}

#[test]
fn perfect_and_inverted_images() {
    let mask = vec![0, 1, 1, 0, 0, 1, 0, 0];
    let exact: Vec<f64> = mask.iter().map(|&m| m as f64).collect();
    let (img, gt) = fixture(exact.clone(), mask.clone(), 4);
    let r = evaluate(&img, &gt, &Exclusion::none()).unwrap();
    assert_eq!((r.auroc, r.auprc, r.f1_max), (1.0, 1.0, 1.0));
    assert!(r.roc.iter().any(|p| p.x == 0.0 && p.y == 1.0));
    assert!(r.prc.iter().any(|p| p.x == 1.0 && p.y == 1.0));
    assert_eq!(r.tau_roc, 1.0);
    let inverted: Vec<f64> = exact.iter().map(|v| 1.0 - v).collect();
    let (img, gt) = fixture(inverted, mask, 4);
    assert_eq!(evaluate(&img, &gt, &Exclusion::none()).unwrap().auroc, 0.0);
}

#[test]
fn constant_image_ties_resolve_to_single_candidate() {
    let (img, gt) = fixture(vec![0.3; 6], HAND_MASK.to_vec(), 3);
    let roc = roc_curve(&img, &gt, &Exclusion::none()).unwrap();
    assert_eq!(roc.len(), 2);
    assert_eq!(tau_roc(&roc), 0.3);
    assert_eq!(tau_f1(&img, &gt, &Exclusion::none()).unwrap().0, 0.3);
}

#[test]
fn comparison_table_layouts() {
    let row = |s: &str, m: &str, v: [f64; 3]| ReportRow {
        scenario: s.into(),
        method: m.into(),
        metrics: COMPARED_METRICS
            .iter()
            .zip(v)
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
    };
    let single = comparison_table(&[row("hole1", "tfm", [0.4, 0.8, 0.3])]).unwrap();
    assert_eq!(
        single.lines().next().unwrap(),
        "metric,method,hole1,hole1_best"
    );
    assert_eq!(single.lines().count(), 4);

    let t = comparison_table(&[
        row("hole1", "tfm", [0.4, 0.80, 0.3]),
        row("hole1", "rtm", [0.5, 0.85, 0.2]),
        row("hole1", "fwi", [0.7, 0.82, 0.6]),
    ])
    .unwrap();
    let flagged: Vec<&str> = t.lines().filter(|l| l.ends_with('*')).collect();
    assert_eq!(
        flagged,
        [
            "f1_max,fwi,0.7000,*",
            "auroc,rtm,0.8500,*",
            "auprc,fwi,0.6000,*"
        ]
    );

    let t = comparison_table(&[row("a", "tfm", [0.1; 3]), row("b", "fwi", [0.2; 3])]).unwrap();
    assert!(t.contains("f1_max,tfm,0.1000,*,,"));
    assert!(t.contains("f1_max,fwi,,,0.2000,*"));
    assert!(comparison_table(&[]).is_err());
}

fn labelled() -> impl Strategy<Value = (Vec<f64>, Vec<u8>)> {
    (4usize..60)
        .prop_flat_map(|n| {
            (
                prop::collection::vec(0u32..20, n),
                prop::collection::vec(0u8..2, n),
            )
        })
        .prop_filter("both classes", |(_, m)| m.contains(&0) && m.contains(&1))
        .prop_map(|(v, m)| (v.into_iter().map(|x| x as f64 / 19.0).collect(), m))
}

proptest! {
    #[test]
    fn raising_tau_never_adds_positives((values, mask) in labelled(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let (lo, hi) = (a.min(b), a.max(b));
        let n = values.len();
        let (img, gt) = fixture(values, mask, n);
        let c_lo = confusion(&img, &gt, lo, &Exclusion::none()).unwrap();
        let c_hi = confusion(&img, &gt, hi, &Exclusion::none()).unwrap();
        prop_assert!(c_hi.tp <= c_lo.tp && c_hi.fp <= c_lo.fp);
    }

    #[test]
    fn auroc_is_rank_invariant((values, mask) in labelled(), scale in 0.1f64..10.0, shift in -5.0f64..5.0) {
        let n = values.len();
        let warped: Vec<f64> = values.iter().map(|v| (scale * v).exp() + shift).collect();
        let (a, ga) = fixture(values, mask.clone(), n);
        let (b, gb) = fixture(warped, mask, n);
        let ra = auroc(&roc_curve(&a, &ga, &Exclusion::none()).unwrap());
        let rb = auroc(&roc_curve(&b, &gb, &Exclusion::none()).unwrap());
        prop_assert!((ra - rb).abs() < 1e-12);
    }

    #[test]
    fn roc_is_monotone((values, mask) in labelled()) {
        let n = values.len();
        let (img, gt) = fixture(values, mask, n);
        let roc = roc_curve(&img, &gt, &Exclusion::none()).unwrap();
        prop_assert!(roc.windows(2).all(|w| w[1].x >= w[0].x && w[1].y >= w[0].y));
        prop_assert_eq!((roc[0].x, roc[0].y), (0.0, 0.0));
        let last = roc[roc.len() - 1];
        prop_assert_eq!((last.x, last.y), (1.0, 1.0));
    }

    #[test]
    fn f1_max_dominates_curve_thresholds((values, mask) in labelled()) {
        let n = values.len();
        let (img, gt) = fixture(values, mask, n);
        let r = evaluate(&img, &gt, &Exclusion::none()).unwrap();
        prop_assert!(r.f1_max >= r.f1_at_tau_roc && r.f1_max >= r.f1_at_tau_prc);
        for m in [r.auroc, r.auprc, r.f1_max] {
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }

    #[test]
    fn exclusion_drops_exactly_its_band(nx in 1usize..8, ny in 2usize..12, frac in 0.0f64..0.99) {
        let n = nx * ny;
        let values: Vec<f64> = (0..n).map(|k| k as f64).collect();
        let mut mask = vec![0u8; n];
        mask[0] = 1;
        let (img, gt) = fixture(values, mask, nx);
        let ex = Exclusion::bottom(frac).unwrap();
        let all = confusion(&img, &gt, 0.0, &Exclusion::none()).unwrap().total();
        let kept = confusion(&img, &gt, 0.0, &ex).unwrap().total();
        prop_assert_eq!(all - kept, ex.excluded_pixels(nx, ny));
    }
}
