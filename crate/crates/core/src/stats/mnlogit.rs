use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};

use super::{ols::check_rank, DesignMatrix, RegressionFit, Response, StatsError};

/// Coefficient norm beyond which the fit is declared separated.
pub const DIVERGENCE_NORM: f64 = 1e4;
/// Every observation fitted with own-class probability above `1 − this`
/// means the classes are completely separated.
pub const SEPARATION_PROB_TOL: f64 = 1e-6;
const MAX_HALVINGS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MnlogitOptions {
    pub max_iter: usize,
    /// Stop once the log-likelihood gain of an iteration falls below this.
    pub tol: f64,
    /// z-score every non-constant column before fitting; coefficients are
    /// then reported in standardized units.
    pub standardize: bool,
}

impl Default for MnlogitOptions {
    fn default() -> Self {
        MnlogitOptions { max_iter: 100, tol: 1e-10, standardize: true }
    }
}

fn zscore(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut z = x.clone();
    for mut col in z.column_iter_mut() {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        if var > 0.0 {
            let sd = var.sqrt();
            col.apply(|v| *v = (*v - mean) / sd);
        }
    }
    z
}

struct Problem<'a> {
    x: &'a DMatrix<f64>,
    y: Vec<usize>,
    /// Non-reference classes.
    j: usize,
}

impl Problem<'_> {
    /// Class probabilities (n × (J+1), reference first) and log-likelihood.
    fn evaluate(&self, theta: &DVector<f64>) -> (DMatrix<f64>, f64) {
        let (n, p) = self.x.shape();
        let coef = DMatrix::from_column_slice(p, self.j, theta.as_slice());
        let eta = self.x * coef;
        let mut probs = DMatrix::zeros(n, self.j + 1);
        let mut llf = 0.0;
        for i in 0..n {
            let m = eta.row(i).iter().copied().fold(0.0f64, f64::max);
            let mut denom = (-m).exp();
            for c in 0..self.j {
                denom += (eta[(i, c)] - m).exp();
            }
            let log_denom = m + denom.ln();
            probs[(i, 0)] = (-log_denom).exp();
            for c in 0..self.j {
                probs[(i, c + 1)] = (eta[(i, c)] - log_denom).exp();
            }
            let own = if self.y[i] == 0 { 0.0 } else { eta[(i, self.y[i] - 1)] };
            llf += own - log_denom;
        }
        (probs, llf)
    }

    fn gradient_and_information(&self, probs: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let (n, p) = self.x.shape();
        let dim = p * self.j;
        let mut g = DVector::zeros(dim);
        let mut info = DMatrix::zeros(dim, dim);
        for i in 0..n {
            let xi = self.x.row(i).transpose();
            let outer = &xi * xi.transpose();
            for a in 0..self.j {
                let pa = probs[(i, a + 1)];
                let target = if self.y[i] == a + 1 { 1.0 } else { 0.0 };
                g.rows_mut(a * p, p).axpy(target - pa, &xi, 1.0);
                for b in a..self.j {
                    let w = if a == b { pa * (1.0 - pa) } else { -pa * probs[(i, b + 1)] };
                    let mut block = info.view_mut((a * p, b * p), (p, p));
                    block += &outer * w;
                }
            }
        }
        for a in 0..self.j {
            for b in a + 1..self.j {
                let block = info.view((a * p, b * p), (p, p)).transpose();
                info.view_mut((b * p, a * p), (p, p)).copy_from(&block);
            }
        }
        (g, info)
    }
}

fn newton_direction(info: &DMatrix<f64>, g: &DVector<f64>) -> DVector<f64> {
    let dim = info.nrows();
    let scale = info.diagonal().abs().max().max(1.0);
    let mut ridge = 0.0;
    loop {
        let m = info + DMatrix::identity(dim, dim) * ridge;
        if let Some(ch) = m.cholesky() {
            return ch.solve(g);
        }
        ridge = if ridge == 0.0 { 1e-10 * scale } else { ridge * 10.0 };
    }
}

/// Multinomial logit by damped Newton. The reference class is the first
/// label in sorted order; each iteration's step is halved until the
/// log-likelihood does not decrease.
pub fn mnlogit_fit(dm: &DesignMatrix, opts: MnlogitOptions) -> Result<RegressionFit, StatsError> {
    let Response::Classes(labels) = &dm.y else {
        return Err(StatsError::WrongResponse("categorical"));
    };
    let classes: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if classes.len() < 2 {
        return Err(StatsError::SingleClass);
    }
    let (n, p) = dm.x.shape();
    if n <= p {
        return Err(StatsError::TooFewObservations { n, p });
    }
    if dm.x.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let x = if opts.standardize { zscore(&dm.x) } else { dm.x.clone() };
    check_rank(&x)?;
    let y = labels.iter().map(|l| classes.binary_search(l).expect("label is a class")).collect();
    let prob = Problem { x: &x, y, j: classes.len() - 1 };

    let mut theta = DVector::zeros(p * prob.j);
    let (mut probs, mut llf) = prob.evaluate(&theta);
    let mut trace = vec![llf];
    let mut converged = false;
    let mut grad_norm = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let (g, info) = prob.gradient_and_information(&probs);
        grad_norm = g.norm();
        let dir = newton_direction(&info, &g);
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let cand = &theta + &dir * step;
            let (cp, cl) = prob.evaluate(&cand);
            if cl >= llf {
                accepted = Some((cand, cp, cl));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, cp, cl)) = accepted else {
            // no ascent along the Newton direction: at the optimum to machine precision
            converged = true;
            break;
        };
        let gain = cl - llf;
        theta = cand;
        probs = cp;
        llf = cl;
        trace.push(llf);
        if theta.norm() > DIVERGENCE_NORM {
            return Err(StatsError::PerfectSeparation);
        }
        if gain < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(StatsError::NonConvergence { iterations: opts.max_iter, grad_norm });
    }
    let worst_fit = (0..n).map(|i| 1.0 - probs[(i, prob.y[i])]).fold(0.0, f64::max);
    if worst_fit < SEPARATION_PROB_TOL {
        return Err(StatsError::PerfectSeparation);
    }
    let (_, info) = prob.gradient_and_information(&probs);
    let standard_errors = info.clone().cholesky().map(|ch| ch.inverse().diagonal().iter().map(|v| v.sqrt()).collect());
    let names = classes[1..].iter().flat_map(|c| dm.names.iter().map(move |nm| format!("{c}:{nm}"))).collect();
    Ok(RegressionFit {
        beta_hat: theta.iter().copied().collect(),
        names,
        cov_hc3: None,
        standard_errors,
        standardized_beta: None,
        llf: Some(llf),
        llf_trace: trace,
        classes,
        n,
        p,
    })
}

#[cfg(test)]
mod tests {
    use super::super::{dist, lr_test, DesignBuilder};
    use super::*;
    use proptest::prelude::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| StandardNormal.sample(rng)).collect()
    }

    #[test]
    fn intercept_only_closed_form() {
        let y: Vec<&str> = (0..100).map(|i| if i < 30 { "a" } else { "b" }).collect();
        let fit = mnlogit_fit(&DesignBuilder::new(100).classes(&y).unwrap(), MnlogitOptions::default()).unwrap();
        assert_eq!(fit.classes, vec!["a", "b"]);
        assert!((fit.beta_hat[0] - (70.0f64 / 30.0).ln()).abs() < 1e-6);
        let expected = 30.0 * 0.3f64.ln() + 70.0 * 0.7f64.ln();
        assert!((fit.llf.unwrap() - expected).abs() < 1e-9);
    }

    #[test]
    fn three_class_intercepts_are_log_odds() {
        let y: Vec<&str> = (0..60).map(|i| ["x", "y", "z"][(i % 6).min(2)]).collect();
        // counts: x=10, y=10, z=40
        let fit = mnlogit_fit(&DesignBuilder::new(60).classes(&y).unwrap(), MnlogitOptions::default()).unwrap();
        assert!(fit.beta_hat[0].abs() < 1e-8);
        assert!((fit.beta_hat[1] - 4f64.ln()).abs() < 1e-8);
    }

    /// Finite-difference gradient of the log-likelihood vanishes at the fit.
    #[test]
    fn stationary_point_by_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 300;
        let a = noise(&mut rng, n);
        let b = noise(&mut rng, n);
        let y: Vec<String> = (0..n)
            .map(|i| {
                let s = [0.0, 1.2 * a[i], -0.8 * a[i] + b[i]];
                let u: f64 = rng.random();
                let w: Vec<f64> = s.iter().map(|v| v.exp()).collect();
                let t: f64 = w.iter().sum();
                let c = if u < w[0] / t { 0 } else if u < (w[0] + w[1]) / t { 1 } else { 2 };
                format!("c{c}")
            })
            .collect();
        let dm = DesignBuilder::new(n).numeric("a", &a).unwrap().numeric("b", &b).unwrap().classes(&y).unwrap();
        let opts = MnlogitOptions { standardize: false, ..Default::default() };
        let fit = mnlogit_fit(&dm, opts).unwrap();
        let ys: Vec<usize> = y.iter().map(|l| fit.classes.binary_search(l).unwrap()).collect();
        let llf = |theta: &[f64]| -> f64 {
            let mut total = 0.0;
            for i in 0..n {
                let xi = [1.0, a[i], b[i]];
                let mut eta = vec![0.0];
                for c in 0..2 {
                    eta.push((0..3).map(|k| xi[k] * theta[c * 3 + k]).sum());
                }
                let lse = eta.iter().map(|e| e.exp()).sum::<f64>().ln();
                total += eta[ys[i]] - lse;
            }
            total
        };
        assert!((llf(&fit.beta_hat) - fit.llf.unwrap()).abs() < 1e-9);
        for k in 0..6 {
            let h = 1e-5;
            let mut up = fit.beta_hat.clone();
            let mut dn = fit.beta_hat.clone();
            up[k] += h;
            dn[k] -= h;
            let d = (llf(&up) - llf(&dn)) / (2.0 * h);
            assert!(d.abs() < 1e-4, "coordinate {k}: {d}");
        }
    }

    #[test]
    fn independent_features_rarely_significant() {
        let mut accepted = 0;
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let n = 240;
            let f1 = noise(&mut rng, n);
            let f2 = noise(&mut rng, n);
            let y: Vec<String> = (0..n).map(|_| format!("k{}", rng.random_range(0..3))).collect();
            let full = DesignBuilder::new(n).numeric("f1", &f1).unwrap().numeric("f2", &f2).unwrap().classes(&y).unwrap();
            let reduced = full.without(&["f1", "f2"]);
            let opts = MnlogitOptions::default();
            let t = lr_test("f", &mnlogit_fit(&full, opts).unwrap(), &mnlogit_fit(&reduced, opts).unwrap(), 4).unwrap();
            // 95th percentile of χ²₄
            if t.lr_stat < 9.487_729_036_781_154 {
                accepted += 1;
            }
            assert!((t.p_value >= 0.05) == (t.lr_stat < 9.487_729_036_781_154) || (t.p_value - 0.05).abs() < 1e-9);
        }
        assert!(accepted >= 45, "accepted {accepted}/50");
    }

    #[test]
    fn informative_predictor_is_detected_and_lr_is_additive() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let n = 400;
        let s = noise(&mut rng, n);
        let junk = noise(&mut rng, n);
        let y: Vec<&str> = (0..n).map(|i| if s[i] + 0.5 * noise(&mut rng, 1)[0] > 0.0 { "hi" } else { "lo" }).collect();
        let full = DesignBuilder::new(n).numeric("s", &s).unwrap().numeric("junk", &junk).unwrap().classes(&y).unwrap();
        let mid = full.without(&["junk"]);
        let base = full.without(&["s", "junk"]);
        let opts = MnlogitOptions::default();
        let (ff, fm, fb) = (mnlogit_fit(&full, opts).unwrap(), mnlogit_fit(&mid, opts).unwrap(), mnlogit_fit(&base, opts).unwrap());
        let drop_s = lr_test("s", &fm, &fb, 1).unwrap();
        assert!(drop_s.p_value < 0.01);
        let chain = lr_test("junk", &ff, &fm, 1).unwrap().lr_stat + drop_s.lr_stat;
        assert!((chain - lr_test("both", &ff, &fb, 2).unwrap().lr_stat).abs() < 1e-6);
        assert!((dist::chi2_sf(drop_s.lr_stat, 1) - drop_s.p_value).abs() < 1e-15);
    }

    #[test]
    fn separation_is_reported() {
        let v: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let y: Vec<&str> = (0..40).map(|i| if i < 20 { "a" } else { "b" }).collect();
        let dm = DesignBuilder::new(40).numeric("v", &v).unwrap().classes(&y).unwrap();
        assert_eq!(mnlogit_fit(&dm, MnlogitOptions::default()), Err(StatsError::PerfectSeparation));
    }

    #[test]
    fn input_errors() {
        let dm = DesignBuilder::new(3).classes(&["a", "a", "a"]).unwrap();
        assert_eq!(mnlogit_fit(&dm, MnlogitOptions::default()), Err(StatsError::SingleClass));
        let dm = DesignBuilder::new(3).continuous(&[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(mnlogit_fit(&dm, MnlogitOptions::default()), Err(StatsError::WrongResponse(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn likelihood_bounded_and_monotone(seed in any::<u64>(), k in 2usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 120;
            let f = noise(&mut rng, n);
            let g: Vec<f64> = noise(&mut rng, n).iter().map(|v: &f64| v * 1e6).collect();
            let y: Vec<String> = (0..n).map(|i| format!("c{}", (i % k + if f[i] > 1.0 { 1 } else { 0 }) % k)).collect();
            let dm = DesignBuilder::new(n).numeric("f", &f).unwrap().numeric("g", &g).unwrap().classes(&y).unwrap();
            let fit = mnlogit_fit(&dm, MnlogitOptions::default()).unwrap();
            prop_assert!(fit.llf.unwrap() <= 0.0);
            for w in fit.llf_trace.windows(2) {
                prop_assert!(w[1] >= w[0]);
            }
            prop_assert_eq!(fit.beta_hat.len(), 3 * (k - 1));
        }
    }
}
