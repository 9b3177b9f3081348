//! Oracle and distributional checks for the kernel module.

use conformal_core::kernels::{
    bandwidth_for_target_neff, estimate_effective_sample_size, KernelFamily, KernelSpec,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gaussian_cloud(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
        .collect()
}

/// Direct double-loop computation of n·mean(mᵢ²)/mean(K²) with no shared
/// intermediate code.
fn neff_double_loop(spec: &KernelSpec, rows: &[Vec<f64>]) -> f64 {
    let n = rows.len();
    let mut num = 0.0;
    for i in 0..n {
        let mut m_i = 0.0;
        for j in 0..n {
            if i != j {
                m_i += spec.eval(&rows[i], &rows[j]).unwrap();
            }
        }
        m_i /= (n - 1) as f64;
        num += m_i * m_i;
    }
    num /= n as f64;
    let mut den = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let k = spec.eval(&rows[i], &rows[j]).unwrap();
                den += k * k;
            }
        }
    }
    den /= (n * (n - 1)) as f64;
    n as f64 * num / den
}

#[test]
fn effective_sample_size_matches_double_loop_oracle() {
    let rows = gaussian_cloud(50, 3, 42);
    for h in [0.2, 0.7, 1.5, 4.0] {
        let spec = KernelSpec::gaussian(h).unwrap();
        let got = estimate_effective_sample_size(&spec, &rows).unwrap();
        let want = neff_double_loop(&spec, &rows);
        assert!(
            (got - want).abs() < 1e-10,
            "h={h}: got {got}, oracle {want}"
        );
    }
}

#[test]
fn effective_sample_size_is_monotone_in_bandwidth() {
    let rows = gaussian_cloud(60, 4, 7);
    for family in [KernelFamily::Gaussian, KernelFamily::Boxcar] {
        let mut prev = f64::NEG_INFINITY;
        for k in 0..50 {
            let h = 0.01 * (1.3f64).powi(k);
            let spec = KernelSpec::new(family, h).unwrap();
            let est = estimate_effective_sample_size(&spec, &rows).unwrap();
            assert!(
                est >= prev - 1e-9,
                "{family:?}: n_eff({h}) = {est} < previous {prev}"
            );
            prev = est;
        }
    }
}

#[test]
fn bandwidth_matching_hits_target_forty() {
    // Standard-normal covariates in dimension 10, the harness configuration.
    let rows = gaussian_cloud(500, 10, 11);
    let h = bandwidth_for_target_neff(KernelFamily::Gaussian, 40.0, &rows).unwrap();
    let spec = KernelSpec::gaussian(h).unwrap();
    let est = estimate_effective_sample_size(&spec, &rows).unwrap();
    assert!(
        (39.5..=40.5).contains(&est),
        "n_eff at matched bandwidth: {est}"
    );
}

#[test]
fn bandwidth_matching_saturates_at_full_sample() {
    let rows = gaussian_cloud(40, 2, 3);
    let h = bandwidth_for_target_neff(KernelFamily::Gaussian, 40.0, &rows).unwrap();
    let spec = KernelSpec::gaussian(h).unwrap();
    let est = estimate_effective_sample_size(&spec, &rows).unwrap();
    assert!(est >= 39.5, "n_eff at matched bandwidth: {est}");
}

#[test]
fn bandwidth_matching_is_scale_equivariant() {
    let rows = gaussian_cloud(80, 3, 19);
    let doubled: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| r.iter().map(|v| 2.0 * v).collect())
        .collect();
    let h1 = bandwidth_for_target_neff(KernelFamily::Gaussian, 25.0, &rows).unwrap();
    let h2 = bandwidth_for_target_neff(KernelFamily::Gaussian, 25.0, &doubled).unwrap();
    assert!(
        (h2 / h1 - 2.0).abs() < 1e-6,
        "doubling covariates: h1={h1}, h2={h2}"
    );
}

#[test]
fn gaussian_sampler_mean_obeys_law_of_large_numbers() {
    let spec = KernelSpec::gaussian(0.6).unwrap();
    let x = vec![1.5, -0.4];
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let reps = 100_000usize;
    let mut mean = vec![0.0f64; x.len()];
    for _ in 0..reps {
        let draw = spec.sample_auxiliary(&x, &mut rng);
        for (m, v) in mean.iter_mut().zip(&draw) {
            *m += v;
        }
    }
    let tol = 4.0 * 0.6 / (reps as f64).sqrt();
    for (m, xi) in mean.iter().zip(&x) {
        assert!(
            (m / reps as f64 - xi).abs() < tol,
            "sampler mean drifted from the center"
        );
    }
}

#[test]
fn gaussian_sampler_passes_kolmogorov_smirnov() {
    let h = 0.9;
    let spec = KernelSpec::gaussian(h).unwrap();
    let x = vec![0.7];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 10_000usize;
    let mut std_draws: Vec<f64> = (0..n)
        .map(|_| (spec.sample_auxiliary(&x, &mut rng)[0] - x[0]) / h)
        .collect();
    std_draws.sort_unstable_by(f64::total_cmp);
    let mut ks: f64 = 0.0;
    for (i, z) in std_draws.iter().enumerate() {
        let cdf = conformal_core::sim::standard_normal_cdf(*z);
        let lo = i as f64 / n as f64;
        let hi = (i + 1) as f64 / n as f64;
        ks = ks.max((cdf - lo).abs()).max((cdf - hi).abs());
    }
    assert!(ks < 0.02, "KS distance {ks}");
}
