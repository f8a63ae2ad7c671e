//! Optimal matching layer: bilinear affinities, dustbin augmentation,
//! log-domain Sinkhorn, mutual-max match extraction and the negative
//! log-likelihood matching loss.
//!
//! Rows always index features of image A and columns features of image B.
//! The last row and column of every assignment matrix are dustbins.

use thiserror::Error;

use crate::autodiff::{AutodiffError, Axis, NodeId, Tape, Tensor};

/// Logits are clamped to this magnitude before exponentiation.
pub const LOGIT_CLAMP: f64 = 30.0;
/// Floor applied to probabilities before taking logs in the loss.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("marginal sums differ: sum(a) = {a}, sum(b) = {b}")]
    MarginalSumMismatch { a: f64, b: f64 },
    #[error("invalid marginals: {0}")]
    InvalidMarginals(String),
    #[error("index ({row}, {col}) outside assignment core {rows}x{cols}")]
    IndexOutOfRange { row: usize, col: usize, rows: usize, cols: usize },
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Positive affinities `S_ij = exp(h_iᵀ E h_j / δ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    scores: Tensor,
}

impl AffinityMatrix {
    pub fn scores(&self) -> &Tensor {
        &self.scores
    }
}

fn check_bilinear(ha: &Tensor, hb: &Tensor, metric: &Tensor, temperature: f64) -> Result<(), MatchError> {
    if !(temperature > 0.0) {
        return Err(MatchError::NonPositiveTemperature(temperature));
    }
    let d = metric.rows();
    if metric.cols() != d || ha.cols() != d || hb.cols() != d {
        return Err(MatchError::DimensionMismatch(format!(
            "descriptors {:?} / {:?} against metric {:?}",
            ha.shape(),
            hb.shape(),
            metric.shape()
        )));
    }
    Ok(())
}

/// Unclamped logits `h_iᵀ E h_j / δ`, an M×N matrix.
pub fn affinity_logits(ha: &Tensor, hb: &Tensor, metric: &Tensor, temperature: f64) -> Result<Tensor, MatchError> {
    check_bilinear(ha, hb, metric, temperature)?;
    Ok(ha.matmul(metric).matmul(&hb.transpose()).map(|x| x / temperature))
}

pub fn affinity(ha: &Tensor, hb: &Tensor, metric: &Tensor, temperature: f64) -> Result<AffinityMatrix, MatchError> {
    let logits = affinity_logits(ha, hb, metric, temperature)?;
    Ok(AffinityMatrix { scores: logits.map(|x| x.clamp(-LOGIT_CLAMP, LOGIT_CLAMP).exp()) })
}

/// Log-score matrix of `S` with a dustbin row and column filled with `z`.
pub fn augment_dustbin(s: &AffinityMatrix, z: f64) -> Tensor {
    augment_logits(&s.scores.map(f64::ln), z)
}

/// Dustbin augmentation applied directly to logits.
pub fn augment_logits(logits: &Tensor, z: f64) -> Tensor {
    let (m, n) = (logits.rows(), logits.cols());
    let mut out = Tensor::filled(m + 1, n + 1, z);
    for i in 0..m {
        for j in 0..n {
            out.set(i, j, logits.get(i, j));
        }
    }
    out
}

/// Unit mass per real feature; each dustbin can absorb every feature of
/// the other image.
pub fn default_marginals(m: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut a = vec![1.0; m];
    a.push(n as f64);
    let mut b = vec![1.0; n];
    b.push(m as f64);
    (a, b)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { max_iters: 100, tol: 1e-6 }
    }
}

/// Transport plan with dustbins, plus convergence metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix {
    pub p: Tensor,
    pub iterations: usize,
    /// Largest absolute row-marginal violation after the final iteration.
    pub violation: f64,
    pub converged: bool,
}

impl AssignmentMatrix {
    pub fn core_rows(&self) -> usize {
        self.p.rows() - 1
    }

    pub fn core_cols(&self) -> usize {
        self.p.cols() - 1
    }
}

fn check_marginals(rows: usize, cols: usize, a: &[f64], b: &[f64], tol: f64) -> Result<(), MatchError> {
    if a.len() != rows || b.len() != cols {
        return Err(MatchError::DimensionMismatch(format!(
            "marginals of length {}/{} for a {rows}x{cols} matrix",
            a.len(),
            b.len()
        )));
    }
    if !(tol > 0.0) {
        return Err(MatchError::InvalidMarginals(format!("tolerance must be positive, got {tol}")));
    }
    if a.iter().chain(b).any(|x| !x.is_finite() || *x < 0.0) {
        return Err(MatchError::InvalidMarginals("entries must be finite and non-negative".into()));
    }
    let (sa, sb) = (a.iter().sum::<f64>(), b.iter().sum::<f64>());
    if (sa - sb).abs() > 1e-9 {
        return Err(MatchError::MarginalSumMismatch { a: sa, b: sb });
    }
    Ok(())
}

/// Plan for instances with an empty side, where everything must go to a
/// dustbin and no iteration is needed.
fn forced_plan(rows: usize, cols: usize, a: &[f64], b: &[f64]) -> Option<Tensor> {
    if rows == 1 {
        return Some(Tensor::matrix(1, cols, b.to_vec()));
    }
    if cols == 1 {
        return Some(Tensor::matrix(rows, 1, a.to_vec()));
    }
    None
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn row_violation(logp: &Tensor, a: &[f64]) -> f64 {
    (0..logp.rows())
        .map(|i| (logp.row_slice(i).iter().map(|x| x.exp()).sum::<f64>() - a[i]).abs())
        .fold(0.0, f64::max)
}

fn checked_logs(a: &[f64]) -> Result<Vec<f64>, MatchError> {
    if a.iter().any(|&x| x <= 0.0) {
        return Err(MatchError::InvalidMarginals("marginals must be positive".into()));
    }
    Ok(a.iter().map(|x| x.ln()).collect())
}

/// Log-domain Sinkhorn: alternately renormalizes rows against `log a` and
/// columns against `log b` until the row marginals are within `tol` or
/// `max_iters` full iterations have run. Non-convergence is reported in
/// the result, not as an error.
pub fn sinkhorn(log_scores: &Tensor, a: &[f64], b: &[f64], cfg: &SinkhornConfig) -> Result<AssignmentMatrix, MatchError> {
    let (rows, cols) = (log_scores.rows(), log_scores.cols());
    check_marginals(rows, cols, a, b, cfg.tol)?;
    if let Some(p) = forced_plan(rows, cols, a, b) {
        return Ok(AssignmentMatrix { p, iterations: 0, violation: 0.0, converged: true });
    }
    let (log_a, log_b) = (checked_logs(a)?, checked_logs(b)?);
    let mut z = log_scores.clone();
    let mut iterations = 0;
    let mut violation = row_violation(&z, a);
    while iterations < cfg.max_iters {
        for i in 0..rows {
            let lse = log_sum_exp(z.row_slice(i).iter().copied());
            let row = &mut z.data_mut()[i * cols..(i + 1) * cols];
            row.iter_mut().for_each(|x| *x = *x - lse + log_a[i]);
        }
        let mut lse_cols = vec![0.0; cols];
        for (j, l) in lse_cols.iter_mut().enumerate() {
            *l = log_sum_exp((0..rows).map(|i| z.get(i, j)));
        }
        for i in 0..rows {
            let row = &mut z.data_mut()[i * cols..(i + 1) * cols];
            for (j, x) in row.iter_mut().enumerate() {
                *x = *x - lse_cols[j] + log_b[j];
            }
        }
        iterations += 1;
        violation = row_violation(&z, a);
        if violation < cfg.tol {
            break;
        }
    }
    Ok(AssignmentMatrix { p: z.map(f64::exp), iterations, violation, converged: violation < cfg.tol })
}

/// Result of Sinkhorn recorded on a tape.
#[derive(Debug, Clone, Copy)]
pub struct TapeSinkhorn {
    /// Log of the transport plan.
    pub log_p: NodeId,
    pub iterations: usize,
    pub violation: f64,
}

/// Same iteration as [`sinkhorn`], unrolled onto `tape` so the plan can be
/// differentiated with respect to the log-scores.
pub fn sinkhorn_on_tape(tape: &mut Tape, log_scores: NodeId, a: &[f64], b: &[f64], cfg: &SinkhornConfig) -> Result<TapeSinkhorn, MatchError> {
    let (rows, cols) = {
        let v = tape.value(log_scores);
        (v.rows(), v.cols())
    };
    check_marginals(rows, cols, a, b, cfg.tol)?;
    if let Some(p) = forced_plan(rows, cols, a, b) {
        // Zero entries only occur in empty dustbins, which the loss never reads.
        let log_p = tape.constant(p.map(|x| if x > 0.0 { x.ln() } else { PROB_FLOOR.ln() }));
        return Ok(TapeSinkhorn { log_p, iterations: 0, violation: 0.0 });
    }
    let (log_a, log_b) = (checked_logs(a)?, checked_logs(b)?);
    let mut z = log_scores;
    let mut iterations = 0;
    let mut violation = row_violation(tape.value(z), a);
    while iterations < cfg.max_iters {
        z = tape.log_normalize(z, Axis::Rows, &log_a)?;
        z = tape.log_normalize(z, Axis::Cols, &log_b)?;
        iterations += 1;
        violation = row_violation(tape.value(z), a);
        if violation < cfg.tol {
            break;
        }
    }
    Ok(TapeSinkhorn { log_p: z, iterations, violation })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub i: usize,
    pub j: usize,
    pub score: f64,
}

/// One-to-one matches plus the features left unmatched on either side.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MatchSet {
    pub pairs: Vec<Match>,
    pub unmatched_a: Vec<usize>,
    pub unmatched_b: Vec<usize>,
}

impl MatchSet {
    /// `partner_of_a[i]` is the image-B feature matched to `i`, if any.
    pub fn partner_of_a(&self, m: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; m];
        for p in &self.pairs {
            out[p.i] = Some(p.j);
        }
        out
    }
}

/// Accepts `(i, j)` when `P_ij` is the strict maximum of row `i` and of
/// column `j` over the non-dustbin block and `P_ij >= score_threshold`.
pub fn extract_matches(p: &Tensor, score_threshold: f64) -> MatchSet {
    let (m, n) = (p.rows().saturating_sub(1), p.cols().saturating_sub(1));
    let strict_argmax = |vals: &mut dyn Iterator<Item = (usize, f64)>| -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        let mut tied = false;
        for (k, x) in vals {
            match best {
                None => best = Some((k, x)),
                Some((_, b)) if x > b => {
                    best = Some((k, x));
                    tied = false;
                }
                Some((_, b)) if x == b => tied = true,
                _ => {}
            }
        }
        if tied { None } else { best.map(|(k, _)| k) }
    };
    let col_best: Vec<Option<usize>> = (0..n).map(|j| strict_argmax(&mut (0..m).map(|i| (i, p.get(i, j))))).collect();
    let mut pairs = Vec::new();
    let mut matched_b = vec![false; n];
    let mut unmatched_a = Vec::new();
    for i in 0..m {
        let accepted = strict_argmax(&mut (0..n).map(|j| (j, p.get(i, j))))
            .filter(|&j| col_best[j] == Some(i) && p.get(i, j) >= score_threshold);
        match accepted {
            Some(j) => {
                matched_b[j] = true;
                pairs.push(Match { i, j, score: p.get(i, j) });
            }
            None => unmatched_a.push(i),
        }
    }
    let unmatched_b = (0..n).filter(|&j| !matched_b[j]).collect();
    MatchSet { pairs, unmatched_a, unmatched_b }
}

/// Ground-truth correspondences between two feature sets: matched index
/// pairs and the features of each side that have no partner.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Correspondences {
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_a: Vec<usize>,
    pub unmatched_b: Vec<usize>,
}

impl Correspondences {
    /// Entries of the augmented plan read by the loss.
    fn loss_entries(&self, m: usize, n: usize) -> Result<Vec<(usize, usize)>, MatchError> {
        let oob = |row, col| MatchError::IndexOutOfRange { row, col, rows: m, cols: n };
        let mut out = Vec::with_capacity(self.pairs.len() + self.unmatched_a.len() + self.unmatched_b.len());
        for &(i, j) in &self.pairs {
            if i >= m || j >= n {
                return Err(oob(i, j));
            }
            out.push((i, j));
        }
        for &i in &self.unmatched_a {
            if i >= m {
                return Err(oob(i, n));
            }
            out.push((i, n));
        }
        for &j in &self.unmatched_b {
            if j >= n {
                return Err(oob(m, j));
            }
            out.push((m, j));
        }
        Ok(out)
    }

    pub fn term_count(&self) -> usize {
        self.pairs.len() + self.unmatched_a.len() + self.unmatched_b.len()
    }
}

/// `−Σ log P_ij` over ground-truth pairs and dustbin entries of the
/// unmatched features, with probabilities floored at [`PROB_FLOOR`].
pub fn nll_loss(p: &Tensor, gt: &Correspondences) -> Result<f64, MatchError> {
    let entries = gt.loss_entries(p.rows() - 1, p.cols() - 1)?;
    Ok(-entries.iter().map(|&(i, j)| p.get(i, j).max(PROB_FLOOR).ln()).sum::<f64>())
}

/// [`nll_loss`] on a tape, reading the log-plan directly.
pub fn nll_loss_on_tape(tape: &mut Tape, log_p: NodeId, gt: &Correspondences) -> Result<NodeId, MatchError> {
    let (rows, cols) = {
        let v = tape.value(log_p);
        (v.rows(), v.cols())
    };
    let entries = gt.loss_entries(rows - 1, cols - 1)?;
    let picked = tape.gather(log_p, &entries)?;
    let floored = tape.clamp(picked, PROB_FLOOR.ln(), f64::INFINITY);
    let total = tape.sum(floored);
    Ok(tape.scale(total, -1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-scale..scale)).collect())
    }

    #[test]
    fn affinity_examples() {
        let e1 = Tensor::row(vec![1.0, 0.0, 0.0]);
        let s = affinity(&e1, &e1, &Tensor::identity(3), 1.0).unwrap();
        assert!((s.scores().item() - 1f64.exp()).abs() < 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (ha, hb) = (random(&mut rng, 4, 3, 1.0), random(&mut rng, 2, 3, 1.0));
        let s = affinity(&ha, &hb, &Tensor::zeros(3, 3), 0.1).unwrap();
        assert!(s.scores().data().iter().all(|&x| x == 1.0));
        assert_eq!(affinity(&ha, &hb, &Tensor::identity(3), 0.0), Err(MatchError::NonPositiveTemperature(0.0)));
        assert!(matches!(affinity(&ha, &hb, &Tensor::identity(2), 1.0), Err(MatchError::DimensionMismatch(_))));
    }

    #[test]
    fn affinity_matches_scalar_computation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (ha, hb, e) = (random(&mut rng, 4, 5, 1.0), random(&mut rng, 3, 5, 1.0), random(&mut rng, 5, 5, 1.0));
        let s = affinity(&ha, &hb, &e, 0.7).unwrap();
        for i in 0..4 {
            for j in 0..3 {
                let mut acc = 0.0;
                for k in 0..5 {
                    for l in 0..5 {
                        acc += ha.get(i, k) * e.get(k, l) * hb.get(j, l);
                    }
                }
                let expected = (acc / 0.7).clamp(-30.0, 30.0).exp();
                assert!((s.scores().get(i, j) - expected).abs() < 1e-12 * expected.max(1.0));
            }
        }
    }

    #[test]
    fn affinity_clamps_overflow() {
        let h = Tensor::row(vec![1.0]);
        let s = affinity(&h, &h, &Tensor::identity(1), 1e-6).unwrap();
        assert_eq!(s.scores().item(), 30f64.exp());
    }

    #[test]
    fn dustbin_augmentation() {
        let s = AffinityMatrix { scores: Tensor::scalar(std::f64::consts::E) };
        let aug = augment_dustbin(&s, 0.0);
        assert_eq!(aug.data(), &[1.0, 0.0, 0.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let (m, n) = (rng.random_range(0..9), rng.random_range(0..9));
            let aug = augment_logits(&random(&mut rng, m, n, 1.0), 0.5);
            assert_eq!(aug.shape(), &[m + 1, n + 1]);
            assert_eq!(aug.get(m, n), 0.5);
        }
    }

    #[test]
    fn forbidden_dustbin_carries_no_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 4;
        let logits = random(&mut rng, n, n, 1.0);
        let eps = 1e-9;
        let mut a = vec![1.0; n];
        a.push(eps);
        let aug = augment_logits(&logits, -1e9);
        let plan = sinkhorn(&aug, &a, &a, &SinkhornConfig { max_iters: 500, tol: 1e-9 }).unwrap();
        let dustbin: f64 = (0..n).map(|k| plan.p.get(k, n) + plan.p.get(n, k)).sum();
        assert!(dustbin < 1e-8, "dustbin mass {dustbin}");
    }

    #[test]
    fn marginals() {
        assert_eq!(default_marginals(0, 0), (vec![0.0], vec![0.0]));
        assert_eq!(default_marginals(2, 3), (vec![1.0, 1.0, 3.0], vec![1.0, 1.0, 1.0, 2.0]));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let (m, n) = (rng.random_range(0..300), rng.random_range(0..300));
            let (a, b) = default_marginals(m, n);
            assert_eq!(a.iter().sum::<f64>(), b.iter().sum::<f64>());
        }
    }

    #[test]
    fn sinkhorn_forced_single_assignment() {
        let eps = 1e-12;
        let aug = augment_logits(&Tensor::scalar(0.0), 0.0);
        let plan = sinkhorn(&aug, &[1.0, eps], &[1.0, eps], &SinkhornConfig { max_iters: 1000, tol: 1e-10 }).unwrap();
        assert!((plan.p.get(0, 0) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sinkhorn_uniform_is_uniform() {
        let z = Tensor::zeros(4, 4);
        let a = vec![0.25; 4];
        let plan = sinkhorn(&z, &a, &a, &SinkhornConfig::default()).unwrap();
        assert!(plan.p.data().iter().all(|x| (x - 1.0 / 16.0).abs() < 1e-15));
        assert!(plan.converged);
    }

    #[test]
    fn sinkhorn_rejects_unbalanced_marginals() {
        let z = Tensor::zeros(2, 2);
        assert!(matches!(
            sinkhorn(&z, &[1.0, 1.0], &[1.0, 2.0], &SinkhornConfig::default()),
            Err(MatchError::MarginalSumMismatch { .. })
        ));
    }

    #[test]
    fn sinkhorn_reports_non_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = augment_logits(&random(&mut rng, 6, 6, 200.0), 0.0);
        let (a, b) = default_marginals(6, 6);
        let plan = sinkhorn(&z, &a, &b, &SinkhornConfig { max_iters: 1, tol: 1e-12 }).unwrap();
        assert_eq!(plan.iterations, 1);
        assert!(!plan.converged);
    }

    #[test]
    fn sinkhorn_empty_sides() {
        for (m, n) in [(0, 0), (0, 3), (4, 0)] {
            let (a, b) = default_marginals(m, n);
            let z = augment_logits(&Tensor::zeros(m, n), 1.0);
            let plan = sinkhorn(&z, &a, &b, &SinkhornConfig::default()).unwrap();
            assert_eq!(plan.p.shape(), &[m + 1, n + 1]);
            let ms = extract_matches(&plan.p, 0.2);
            assert!(ms.pairs.is_empty());
            assert_eq!(ms.unmatched_a.len(), m);
            assert_eq!(ms.unmatched_b.len(), n);
        }
    }

    #[test]
    fn sinkhorn_converges_and_is_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = SinkhornConfig::default();
        for _ in 0..20 {
            let (m, n) = (rng.random_range(1..20), rng.random_range(1..20));
            let z = augment_logits(&random(&mut rng, m, n, 3.0), rng.random_range(-1.0..2.0));
            let (a, b) = default_marginals(m, n);
            let plan = sinkhorn(&z, &a, &b, &cfg).unwrap();
            assert!(plan.converged);
            for i in 0..=m {
                let s: f64 = plan.p.row_slice(i).iter().sum();
                assert!((s - a[i]).abs() < cfg.tol);
            }
            for j in 0..=n {
                let s: f64 = (0..=m).map(|i| plan.p.get(i, j)).sum();
                assert!((s - b[j]).abs() < cfg.tol);
            }
            let shifted = sinkhorn(&z.map(|x| x + 4.25), &a, &b, &cfg).unwrap();
            assert!(plan.p.max_abs_diff(&shifted.p) <= 2.0 * cfg.tol);
        }
    }

    #[test]
    fn sinkhorn_permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (m, n) = (5, 6);
        let logits = random(&mut rng, m, n, 2.0);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let mut permuted = Tensor::zeros(m, n);
        for i in 0..m {
            for (j, &pj) in perm.iter().enumerate() {
                permuted.set(i, j, logits.get(i, pj));
            }
        }
        let (a, b) = default_marginals(m, n);
        let cfg = SinkhornConfig::default();
        let p = sinkhorn(&augment_logits(&logits, 1.0), &a, &b, &cfg).unwrap().p;
        let q = sinkhorn(&augment_logits(&permuted, 1.0), &a, &b, &cfg).unwrap().p;
        for i in 0..=m {
            for (j, &pj) in perm.iter().enumerate() {
                assert!((q.get(i, j) - p.get(i, pj)).abs() < 1e-12);
            }
            assert!((q.get(i, n) - p.get(i, n)).abs() < 1e-12);
        }
    }

    #[test]
    fn tape_sinkhorn_matches_plain() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let z = augment_logits(&random(&mut rng, 7, 5, 3.0), 0.3);
        let (a, b) = default_marginals(7, 5);
        let cfg = SinkhornConfig::default();
        let plain = sinkhorn(&z, &a, &b, &cfg).unwrap();
        let mut tape = Tape::new();
        let zid = tape.param(z);
        let res = sinkhorn_on_tape(&mut tape, zid, &a, &b, &cfg).unwrap();
        assert_eq!(res.iterations, plain.iterations);
        assert!(tape.value(res.log_p).map(f64::exp).max_abs_diff(&plain.p) < 1e-12);
    }

    #[test]
    fn extraction_examples() {
        let mut p = Tensor::zeros(4, 4);
        for k in 0..3 {
            p.set(k, k, 0.9);
        }
        let ms = extract_matches(&p, 0.2);
        assert_eq!(ms.pairs.iter().map(|m| (m.i, m.j)).collect::<Vec<_>>(), vec![(0, 0), (1, 1), (2, 2)]);

        let mut p = Tensor::zeros(3, 4);
        for j in 0..3 {
            p.set(2, j, 1.0);
        }
        p.set(0, 3, 1.0);
        p.set(1, 3, 1.0);
        let ms = extract_matches(&p, 0.2);
        assert!(ms.pairs.is_empty());
        assert_eq!((ms.unmatched_a.len(), ms.unmatched_b.len()), (2, 3));
    }

    #[test]
    fn extraction_matches_double_argmax_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..300 {
            let (m, n) = (rng.random_range(0..8), rng.random_range(0..8));
            let p = Tensor::matrix(m + 1, n + 1, (0..(m + 1) * (n + 1)).map(|_| (rng.random_range(0..10) as f64) / 10.0).collect());
            let ms = extract_matches(&p, 0.2);
            let mut expected = vec![];
            for i in 0..m {
                for j in 0..n {
                    let v = p.get(i, j);
                    let row_ok = (0..n).all(|k| k == j || p.get(i, k) < v);
                    let col_ok = (0..m).all(|k| k == i || p.get(k, j) < v);
                    if row_ok && col_ok && v >= 0.2 {
                        expected.push((i, j));
                    }
                }
            }
            assert_eq!(ms.pairs.iter().map(|m| (m.i, m.j)).collect::<Vec<_>>(), expected);
            assert_eq!(ms.pairs.len() + ms.unmatched_a.len(), m);
            assert_eq!(ms.pairs.len() + ms.unmatched_b.len(), n);
        }
    }

    #[test]
    fn loss_examples() {
        let p = Tensor::filled(3, 3, 1.0);
        let gt = Correspondences { pairs: vec![(0, 1)], unmatched_a: vec![1], unmatched_b: vec![0] };
        assert_eq!(nll_loss(&p, &gt).unwrap(), 0.0);

        let mut p = Tensor::filled(2, 2, 0.5);
        p.set(0, 0, (-1f64).exp());
        let gt = Correspondences { pairs: vec![(0, 0)], ..Default::default() };
        assert!((nll_loss(&p, &gt).unwrap() - 1.0).abs() < 1e-15);

        let bad = Correspondences { pairs: vec![(1, 0)], ..Default::default() };
        assert!(matches!(nll_loss(&p, &bad), Err(MatchError::IndexOutOfRange { .. })));
    }

    #[test]
    fn loss_matches_independent_sum_and_tape() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = Tensor::matrix(5, 4, (0..20).map(|_| rng.random_range(0.01..1.0)).collect());
        let gt = Correspondences { pairs: vec![(0, 2), (3, 0)], unmatched_a: vec![1, 2], unmatched_b: vec![1] };
        let mut expected = 0.0;
        expected -= p.get(0, 2).ln() + p.get(3, 0).ln();
        expected -= p.get(1, 3).ln() + p.get(2, 3).ln();
        expected -= p.get(4, 1).ln();
        assert!((nll_loss(&p, &gt).unwrap() - expected).abs() < 1e-12);
        let mut tape = Tape::new();
        let lp = tape.constant(p.map(f64::ln));
        let l = nll_loss_on_tape(&mut tape, lp, &gt).unwrap();
        assert!((tape.value(l).item() - expected).abs() < 1e-12);
    }

    #[test]
    fn loss_gradient_through_sinkhorn_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let gt = Correspondences { pairs: vec![(0, 1), (2, 0)], unmatched_a: vec![1], unmatched_b: vec![2] };
        let (a, b) = default_marginals(3, 3);
        let cfg = SinkhornConfig { max_iters: 30, tol: 1e-300 };
        for _ in 0..5 {
            let z = augment_logits(&random(&mut rng, 3, 3, 2.0), 0.5);
            let loss_of = |zv: &Tensor| {
                let mut t = Tape::new();
                let id = t.constant(zv.clone());
                let s = sinkhorn_on_tape(&mut t, id, &a, &b, &cfg).unwrap();
                let l = nll_loss_on_tape(&mut t, s.log_p, &gt).unwrap();
                t.value(l).item()
            };
            let mut t = Tape::new();
            let id = t.param(z.clone());
            let s = sinkhorn_on_tape(&mut t, id, &a, &b, &cfg).unwrap();
            let l = nll_loss_on_tape(&mut t, s.log_p, &gt).unwrap();
            let g = t.backward(l).unwrap().get(id);
            for e in 0..z.len() {
                let h = 1e-5;
                let mut zp = z.clone();
                zp.data_mut()[e] += h;
                let mut zm = z.clone();
                zm.data_mut()[e] -= h;
                let num = (loss_of(&zp) - loss_of(&zm)) / (2.0 * h);
                let an = g.data()[e];
                let rel = (num - an).abs() / num.abs().max(an.abs()).max(1e-3);
                assert!(rel < 1e-3, "entry {e}: numeric {num} analytic {an}");
            }
        }
    }

    /// Best and runner-up objective `sum (s_ij - z)` over partial
    /// one-to-one assignments, by exhaustive search.
    fn brute_force(s: &[Vec<f64>], z: f64) -> (Vec<(usize, usize)>, f64, f64) {
        fn go(s: &[Vec<f64>], z: f64, i: usize, used: &mut [bool], cur: f64, pick: &mut Vec<(usize, usize)>, out: &mut Vec<(f64, Vec<(usize, usize)>)>) {
            if i == s.len() {
                out.push((cur, pick.clone()));
                return;
            }
            go(s, z, i + 1, used, cur, pick, out);
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    pick.push((i, j));
                    go(s, z, i + 1, used, cur + s[i][j] - z, pick, out);
                    pick.pop();
                    used[j] = false;
                }
            }
        }
        let mut all = vec![];
        go(s, z, 0, &mut vec![false; s[0].len()], 0.0, &mut vec![], &mut all);
        all.sort_by(|a, b| b.0.total_cmp(&a.0));
        let second = all.get(1).map_or(f64::NEG_INFINITY, |x| x.0);
        (all[0].1.clone(), all[0].0, second)
    }

    #[test]
    fn small_temperature_recovers_optimal_assignment() {
        let delta = 0.01;
        let cfg = SinkhornConfig { max_iters: 10_000, tol: 1e-9 };
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut compared = 0;
        while compared < 100 {
            let (m, n) = (rng.random_range(1..=5), rng.random_range(1..=5));
            let z = rng.random_range(-0.5..0.5);
            let s: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
            let (want, best, second) = brute_force(&s, z);
            // Near-ties are decided by the entropy term, not the scores.
            if best - second < 10.0 * delta {
                continue;
            }
            compared += 1;
            let mut logits = Tensor::filled(m + 1, n + 1, z / delta);
            for i in 0..m {
                for j in 0..n {
                    logits.set(i, j, s[i][j] / delta);
                }
            }
            let (a, b) = default_marginals(m, n);
            let plan = sinkhorn(&logits, &a, &b, &cfg).unwrap();
            let got: Vec<_> = extract_matches(&plan.p, 0.2).pairs.iter().map(|p| (p.i, p.j)).collect();
            assert_eq!(got, want, "scores {s:?} dustbin {z}");
        }
    }
}
