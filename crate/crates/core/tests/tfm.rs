use std::f64::consts::PI;

use ndt_imaging::acquisition::{FmcDataset, SourceTimeFunction};
use ndt_imaging::grid::RasterGrid;
use ndt_imaging::model::ArraySpec;
use ndt_imaging::tfm::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const C: f64 = 6315.8;

/// Hilbert transform by the direct O(n^2) DFT.
fn hilbert_dft(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let spec: Vec<(f64, f64)> = (0..n)
        .map(|k| {
            x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, v)| {
                let a = -2.0 * PI * (k * t) as f64 / n as f64;
                (re + v * a.cos(), im + v * a.sin())
            })
        })
        .collect();
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            for (k, (re, im)) in spec.iter().enumerate() {
                // -i sgn(f) applied to the spectrum
                let s = if k == 0 || 2 * k == n {
                    0.0
                } else if 2 * k < n {
                    1.0
                } else {
                    -1.0
                };
                let (hr, hi) = (s * im, -s * re);
                let a = 2.0 * PI * (k * t) as f64 / n as f64;
                acc += hr * a.cos() - hi * a.sin();
            }
            acc / n as f64
        })
        .collect()
}

#[test]
fn analytic_signal_matches_direct_transform() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in [31, 64] {
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let z = analytic_signal(&x);
        let h = hilbert_dft(&x);
        for ((zk, xk), hk) in z.iter().zip(&x).zip(&h) {
            assert!((zk.re - xk).abs() <= 1e-12 * xk.abs().max(1.0));
            assert!((zk.im - hk).abs() < 1e-10, "{} vs {hk}", zk.im);
        }
    }
}

/// Analytic FMC of a point reflector: every trace is the pulse delayed by the
/// two-way path.
fn point_fmc(array: ArraySpec, target: (f64, f64), n_t: usize, dt: f64) -> (FmcDataset, f64) {
    let pulse = SourceTimeFunction::default_pulse(dt);
    let delay = pulse.duration() / 2.0;
    let mut fmc = FmcDataset::zeros(array, n_t, dt);
    let el = array.positions();
    for i in 0..array.n_elements {
        for j in 0..array.n_elements {
            let t = travel_time(el[i], target, el[j], C);
            for (k, v) in fmc.trace_mut(i, j).iter_mut().enumerate() {
                *v = pulse.value_at(k as f64 * dt - t);
            }
        }
    }
    (fmc, delay)
}

fn array16() -> ArraySpec {
    ArraySpec::centered(16, 0.75e-3, 30e-3)
}

#[test]
fn point_reflector_is_focused() {
    let target = (16.3e-3, 9.2e-3);
    let (fmc, delay) = point_fmc(array16(), target, 900, 1e-8);
    let grid = RasterGrid::covering(5e-3, 25e-3, 1e-3, 15e-3, 0.1e-3).unwrap();
    let mut cfg = TfmConfig::new(grid, C).unwrap();
    cfg.delay = delay;
    let img = tfm_image(&fmc, &cfg).unwrap();
    let (i, j) = img.argmax();
    let (x, y) = grid.center(i, j);
    let lambda = C / 2.282e6;
    assert!(
        (x - target.0).hypot(y - target.1) < lambda / 2.0,
        "argmax at ({x}, {y})"
    );
    let (pi, pj) = grid.pixel_of(target.0, target.1);
    let peak = img.get(pi, pj);
    for jj in 0..grid.ny {
        for ii in 0..grid.nx {
            let (px, py) = grid.center(ii, jj);
            if (px - target.0).hypot(py - target.1) > 2.0 * lambda {
                assert!(img.get(ii, jj) <= peak);
            }
        }
    }
    assert!(img.values.iter().all(|v| *v >= 0.0));
}

#[test]
fn single_element_maps_echo_to_depth() {
    let array = ArraySpec::centered(1, 1e-3, 20e-3);
    let depth = 7e-3;
    let (fmc, delay) = point_fmc(array, (10e-3, depth), 600, 1e-8);
    let grid = RasterGrid::covering(9.95e-3, 10.05e-3, 1e-3, 12e-3, 0.05e-3).unwrap();
    let mut cfg = TfmConfig::new(grid, C).unwrap();
    cfg.delay = delay;
    let img = tfm_image(&fmc, &cfg).unwrap();
    let (_, j) = img.argmax();
    // envelope peak sits at the pulse centre: t_peak = delay + 2 depth / c
    let t_peak = (0..fmc.n_t)
        .max_by(|&a, &b| {
            let z = analytic_signal(fmc.trace(0, 0));
            z[a].norm().total_cmp(&z[b].norm())
        })
        .unwrap() as f64
        * fmc.dt;
    let expected = C * (t_peak - delay) / 2.0;
    assert!((grid.center(0, j).1 - expected).abs() <= 0.1e-3);
    assert!((expected - depth).abs() <= C * fmc.dt);
}

#[test]
fn zero_data_and_empty_grid() {
    let fmc = FmcDataset::zeros(array16(), 50, 1e-8);
    let grid = RasterGrid::new(4, 3, 1e-3, 0.0, 0.0).unwrap();
    let img = tfm_image(&fmc, &TfmConfig::new(grid, C).unwrap()).unwrap();
    assert!(img.values.iter().all(|&v| v == 0.0));
    assert!(TfmConfig::new(grid, 0.0).is_err());
}

#[test]
fn nearest_and_linear_agree_on_smooth_data() {
    let (fmc, delay) = point_fmc(array16(), (15e-3, 6e-3), 600, 5e-9);
    let grid = RasterGrid::covering(10e-3, 20e-3, 3e-3, 9e-3, 0.2e-3).unwrap();
    let mut cfg = TfmConfig::new(grid, C).unwrap();
    cfg.delay = delay;
    let lin = tfm_image(&fmc, &cfg).unwrap();
    cfg.interpolation = Interpolation::Nearest;
    let near = tfm_image(&fmc, &cfg).unwrap();
    let ((a, b), (c, d)) = (lin.argmax(), near.argmax());
    assert!(a.abs_diff(c) <= 1 && b.abs_diff(d) <= 1);
    let diff: f64 = lin
        .values
        .iter()
        .zip(&near.values)
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    let norm: f64 = lin.values.iter().map(|x| x * x).sum();
    assert!(
        diff.sqrt() < 0.05 * norm.sqrt(),
        "{}",
        diff.sqrt() / norm.sqrt()
    );
}

fn random_fmc(seed: u64, n: usize, n_t: usize) -> FmcDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fmc = FmcDataset::zeros(ArraySpec::centered(n, 1e-3, 12e-3), n_t, 2e-8);
    fmc.data
        .iter_mut()
        .for_each(|v| *v = rng.gen_range(-1.0..1.0));
    fmc
}

fn small_cfg() -> TfmConfig {
    TfmConfig::new(
        RasterGrid::covering(2e-3, 10e-3, 1e-3, 6e-3, 0.5e-3).unwrap(),
        C,
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn image_scales_linearly(seed in any::<u64>(), alpha in 0.01f64..100.0) {
        let fmc = random_fmc(seed, 4, 64);
        let cfg = small_cfg();
        let a = tfm_image(&fmc, &cfg).unwrap();
        let b = tfm_image(&fmc.scaled(alpha), &cfg).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((alpha * x - y).abs() <= 1e-9 * (alpha * x).abs().max(1e-12));
        }
    }

    #[test]
    fn transposed_dataset_gives_same_image(seed in any::<u64>()) {
        let fmc = random_fmc(seed, 4, 64);
        let mut t = fmc.clone();
        for i in 0..fmc.n {
            for j in 0..fmc.n {
                t.trace_mut(j, i).copy_from_slice(fmc.trace(i, j));
            }
        }
        let cfg = small_cfg();
        let a = tfm_image(&fmc, &cfg).unwrap();
        let b = tfm_image(&t, &cfg).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}
