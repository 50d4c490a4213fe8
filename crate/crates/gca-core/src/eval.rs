//! Evaluation: mean absolute Pearson correlation between true latents and
//! encoder outputs, with components matched by an optimal assignment.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub mcc: f64,
    /// assignment[i] = column of H matched to column i of S
    pub assignment: Vec<usize>,
    pub per_component_abs_corr: Vec<f64>,
    pub n_test: usize,
}

fn column_stats(m: &Matrix, which: &'static str) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n, d) = (m.rows(), m.cols());
    let mut means = vec![0.0; d];
    for i in 0..n {
        for (mu, &v) in means.iter_mut().zip(m.row(i)) {
            *mu += v;
        }
    }
    for mu in &mut means {
        *mu /= n as f64;
    }
    // A constant column has zero variance; detect it by min == max rather
    // than by the accumulated sum, which can carry rounding dust.
    for j in 0..d {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for i in 0..n {
            lo = lo.min(m[(i, j)]);
            hi = hi.max(m[(i, j)]);
        }
        if lo == hi {
            return Err(Error::ZeroVariance { which, column: j });
        }
    }
    let mut sds = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            let c = m[(i, j)] - means[j];
            sds[j] += c * c;
        }
    }
    for sd in &mut sds {
        *sd = sd.sqrt();
    }
    Ok((means, sds))
}

/// Entry (i, j) is the Pearson correlation between column i of `s` and
/// column j of `h`.
pub fn correlation_matrix(s: &Matrix, h: &Matrix) -> Result<Matrix> {
    if s.rows() != h.rows() || s.rows() < 3 {
        return Err(Error::ShapeMismatch {
            context: "correlation_matrix".into(),
            expected: format!("matching row counts >= 3, S has {}", s.rows()),
            got: format!("{}", h.rows()),
        });
    }
    let n = s.rows();
    let (s_mean, s_sd) = column_stats(s, "true-latent")?;
    let (h_mean, h_sd) = column_stats(h, "estimate")?;
    let mut corr = Matrix::zeros(s.cols(), h.cols());
    for t in 0..n {
        let sr = s.row(t);
        let hr = h.row(t);
        for i in 0..s.cols() {
            let cs = sr[i] - s_mean[i];
            for j in 0..h.cols() {
                corr[(i, j)] += cs * (hr[j] - h_mean[j]);
            }
        }
    }
    for i in 0..s.cols() {
        for j in 0..h.cols() {
            corr[(i, j)] /= s_sd[i] * h_sd[j];
        }
    }
    Ok(corr)
}

/// Minimum-cost assignment on a square cost matrix (Hungarian method,
/// shortest augmenting paths with potentials). Returns the column assigned
/// to each row.
pub fn min_cost_assignment(cost: &Matrix) -> Vec<usize> {
    assert_eq!(cost.rows(), cost.cols(), "assignment needs a square matrix");
    let n = cost.rows();
    let inf = f64::INFINITY;
    // 1-based arrays per the classic formulation.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j] = row matched to column j
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1, j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// MCC between true latents `s` and estimates `h`: maximize the summed
/// absolute correlation over component matchings, then average.
pub fn mean_abs_corr(s: &Matrix, h: &Matrix) -> Result<EvalReport> {
    if s.cols() != h.cols() {
        return Err(Error::ShapeMismatch {
            context: "mean_abs_corr".into(),
            expected: format!("{} components", s.cols()),
            got: format!("{}", h.cols()),
        });
    }
    let corr = correlation_matrix(s, h)?;
    let abs = corr.map(f64::abs);
    // Maximizing total |corr| = minimizing its negation.
    let cost = abs.scale(-1.0);
    let assignment = min_cost_assignment(&cost);
    let per_component: Vec<f64> = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| abs[(i, j)])
        .collect();
    let mcc = per_component.iter().sum::<f64>() / per_component.len() as f64;
    Ok(EvalReport {
        mcc,
        assignment,
        per_component_abs_corr: per_component,
        n_test: s.rows(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;
    use rand::Rng;

    fn random_matrix(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = stream_rng(seed, "eval-test");
        Matrix::from_vec(n, d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    fn gaussian_matrix(n: usize, d: usize, seed: u64) -> Matrix {
        let mut rng = stream_rng(seed, "eval-gauss");
        let mut m = Matrix::zeros(n, d);
        for v in m.data_mut() {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen();
            *v = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
        m
    }

    #[test]
    fn self_correlation_is_identity_diagonal() {
        let s = random_matrix(200, 3, 1);
        let c = correlation_matrix(&s, &s).unwrap();
        for i in 0..3 {
            assert!((c[(i, i)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn affine_map_flips_sign_but_not_magnitude() {
        let s = random_matrix(100, 2, 2);
        let h = s.map(|v| -2.0 * v + 7.0);
        let c = correlation_matrix(&s, &h).unwrap();
        for i in 0..2 {
            assert!((c[(i, i)] + 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn independent_columns_have_near_zero_correlation() {
        let s = gaussian_matrix(100_000, 2, 3);
        let h = gaussian_matrix(100_000, 2, 4);
        let c = correlation_matrix(&s, &h).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert!(c[(i, j)].abs() < 0.02, "corr[{i}][{j}] = {}", c[(i, j)]);
            }
        }
    }

    #[test]
    fn zero_variance_column_is_named() {
        let s = random_matrix(50, 2, 5);
        let mut h = random_matrix(50, 2, 6);
        for i in 0..50 {
            h[(i, 1)] = 4.2;
        }
        match correlation_matrix(&s, &h).unwrap_err() {
            Error::ZeroVariance { column, .. } => assert_eq!(column, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn permuted_scaled_columns_give_perfect_mcc() {
        let s = random_matrix(500, 4, 7);
        // H: columns of S permuted by (2, 0, 3, 1) and rescaled.
        let perm = [2usize, 0, 3, 1];
        let scales = [3.0, -0.5, 10.0, -7.0];
        let mut h = Matrix::zeros(500, 4);
        for i in 0..500 {
            for (jh, (&js, &c)) in perm.iter().zip(&scales).enumerate() {
                h[(i, jh)] = c * s[(i, js)] + jh as f64;
            }
        }
        let report = mean_abs_corr(&s, &h).unwrap();
        assert!((report.mcc - 1.0).abs() < 1e-12, "mcc = {}", report.mcc);
        // Column js of S lives in column jh of H.
        for (jh, &js) in perm.iter().enumerate() {
            assert_eq!(report.assignment[js], jh);
        }
    }

    #[test]
    fn independent_estimates_give_low_mcc() {
        let s = gaussian_matrix(10_000, 3, 11);
        let h = gaussian_matrix(10_000, 3, 12);
        let report = mean_abs_corr(&s, &h).unwrap();
        assert!(report.mcc < 0.05, "mcc = {}", report.mcc);
    }

    #[test]
    fn assignment_beats_the_swap_on_known_matrix() {
        // |corr| = [[0.9, 0.1], [0.8, 0.2]]: identity matching scores
        // (0.9 + 0.2)/2 = 0.55, the swap only (0.1 + 0.8)/2 = 0.45.
        let cost = Matrix::from_vec(2, 2, vec![-0.9, -0.1, -0.8, -0.2]).unwrap();
        let assignment = min_cost_assignment(&cost);
        assert_eq!(assignment, vec![0, 1]);
        let mcc: f64 = (0.9 + 0.2) / 2.0;
        assert!((mcc - 0.55).abs() < 1e-15);
    }

    fn brute_force_best(abs: &Matrix) -> f64 {
        fn permutations(d: usize) -> Vec<Vec<usize>> {
            if d == 1 {
                return vec![vec![0]];
            }
            let mut out = Vec::new();
            for p in permutations(d - 1) {
                for pos in 0..d {
                    let mut q: Vec<usize> = p.iter().map(|&v| v + usize::from(v >= pos)).collect();
                    q.insert(0, pos);
                    out.push(q);
                }
            }
            out
        }
        let d = abs.rows();
        permutations(d)
            .into_iter()
            .map(|p| p.iter().enumerate().map(|(i, &j)| abs[(i, j)]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn hungarian_matches_brute_force_up_to_d6() {
        for d in 2..=6 {
            for seed in 0..20 {
                let mut rng = stream_rng(1000 + seed, "hungarian");
                let abs = Matrix::from_vec(
                    d,
                    d,
                    (0..d * d).map(|_| rng.gen_range(0.0..1.0)).collect(),
                )
                .unwrap();
                let assignment = min_cost_assignment(&abs.scale(-1.0));
                let total: f64 = assignment
                    .iter()
                    .enumerate()
                    .map(|(i, &j)| abs[(i, j)])
                    .sum();
                let best = brute_force_best(&abs);
                assert!(
                    (total - best).abs() < 1e-9,
                    "d={d} seed={seed}: {total} vs brute force {best}"
                );
            }
        }
    }

    #[test]
    fn mcc_invariant_under_column_permutation_and_affine() {
        let s = random_matrix(300, 5, 21);
        let h = random_matrix(300, 5, 22);
        let base = mean_abs_corr(&s, &h).unwrap();
        // Permute H's columns and apply per-column affine maps.
        let perm = [4usize, 2, 0, 1, 3];
        let mut h2 = Matrix::zeros(300, 5);
        for i in 0..300 {
            for (jnew, &jold) in perm.iter().enumerate() {
                h2[(i, jnew)] = -1.7 * h[(i, jold)] + 0.3 * jnew as f64;
            }
        }
        let moved = mean_abs_corr(&s, &h2).unwrap();
        assert!((base.mcc - moved.mcc).abs() < 1e-12);
        assert!(moved.mcc >= 0.0 && moved.mcc <= 1.0);
        let mut sorted = moved.assignment.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..5).collect::<Vec<_>>());
    }
}
