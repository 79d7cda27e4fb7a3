//! Adaptive random-walk Metropolis with block updates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{Init, McmcError, SamplerConfig, ScalingMove, Target};

const INIT_ATTEMPTS: usize = 100;

/// Column-major access to an `iters x dim` matrix of constrained draws.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawMatrix {
    data: Vec<f64>,
    dim: usize,
}

impl DrawMatrix {
    fn with_capacity(rows: usize, dim: usize) -> Self {
        Self { data: Vec::with_capacity(rows * dim), dim }
    }

    pub(crate) fn from_raw(data: Vec<f64>, dim: usize) -> Self {
        debug_assert_eq!(data.len() % dim, 0);
        Self { data, dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Copy of one parameter's trace.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows()).map(|i| self.data[i * self.dim + j]).collect()
    }

    fn push_row(&mut self, row: &[f64]) {
        debug_assert_eq!(row.len(), self.dim);
        self.data.extend_from_slice(row);
    }
}

/// Post-warmup output of one chain.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    /// Constrained-scale draws, one row per retained iteration.
    pub draws: DrawMatrix,
    /// Post-warmup acceptance rate pooled over blocks.
    pub accept_rate: f64,
    /// Adapted per-block proposal scales, frozen at the end of warmup.
    pub scales: Vec<f64>,
}

/// Run `config.chains` independent chains against the target.
///
/// Chains execute in parallel; each derives its generator from
/// `seed XOR chain_index`, so results are bit-reproducible for a given
/// `(seed, config)` regardless of thread scheduling.
pub fn run_chains<T: Target + ?Sized>(
    target: &T,
    config: &SamplerConfig,
) -> Result<Vec<ChainOutput>, McmcError> {
    config.validate()?;
    let blocks = target.blocks();
    assert!(!blocks.is_empty(), "target must expose at least one update block");
    debug_assert!(blocks.iter().flatten().all(|&i| i < target.dim()));
    let affected: Vec<Vec<usize>> = (0..blocks.len()).map(|b| target.affected_terms(b)).collect();

    (0..config.chains)
        .into_par_iter()
        .map(|chain| run_single_chain(target, config, &blocks, &affected, chain))
        .collect()
}

fn run_single_chain<T: Target + ?Sized>(
    target: &T,
    config: &SamplerConfig,
    blocks: &[Vec<usize>],
    affected: &[Vec<usize>],
    chain: usize,
) -> Result<ChainOutput, McmcError> {
    let dim = target.dim();
    let n_terms = target.num_terms();
    let moves: Vec<ScalingMove> = target.scaling_moves();
    let mut move_scales = vec![0.5f64; moves.len()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ chain as u64);

    // initialization: retry with fresh draws (or growing jitter around the
    // provided point) until every term is finite
    let mut x = vec![0.0; dim];
    let mut terms = vec![0.0; n_terms];
    let mut ok = false;
    for attempt in 0..INIT_ATTEMPTS {
        match &config.init {
            Init::Random => {
                for xi in x.iter_mut() {
                    *xi = rng.random_range(-2.0..2.0);
                }
            }
            Init::FromPoint(p) => {
                assert_eq!(p.len(), dim, "init point dimension mismatch");
                let jitter = 0.05 * attempt as f64;
                for (xi, &pi) in x.iter_mut().zip(p) {
                    let noise: f64 = rng.sample(StandardNormal);
                    *xi = pi + jitter * noise;
                }
            }
        }
        let mut finite = true;
        for t in 0..n_terms {
            terms[t] = target.term(t, &x);
            if !terms[t].is_finite() {
                finite = false;
                break;
            }
        }
        if finite {
            ok = true;
            break;
        }
    }
    if !ok {
        return Err(McmcError::InitializationFailed { attempts: INIT_ATTEMPTS });
    }

    let g = blocks[0].len();
    // per-block scalar step factors plus per-coordinate preconditioner scales
    // (found componentwise early in warmup)
    let mut scales: Vec<f64> = blocks.iter().map(|b| 2.38 / (b.len() as f64).sqrt()).collect();
    let mut coord_scales: Vec<Vec<f64>> = blocks.iter().map(|b| vec![0.5; b.len()]).collect();

    let phase_a_end = (config.warmup / 4).max(1);
    let refresh_every = (config.warmup / 8).max(1);
    let mut cov_acc = Welford::new(g);
    let mut chol: Option<Vec<f64>> = None;

    let mut draws = DrawMatrix::with_capacity(config.iters, target.constrain(&x).len());
    let mut proposal = x.clone();
    let mut new_terms = vec![0.0; n_terms];
    let mut accepted = 0u64;
    let mut proposed = 0u64;

    for sweep in 0..config.warmup + config.iters {
        let adapting = sweep < config.warmup;
        let gamma = (sweep as f64 + 1.0).powf(-0.6);

        if adapting && sweep < phase_a_end {
            // componentwise warmup: every coordinate finds its own scale, so
            // the later block proposals start from a sane preconditioner
            for (k, block) in blocks.iter().enumerate() {
                for (r, &idx) in block.iter().enumerate() {
                    let noise: f64 = rng.sample(StandardNormal);
                    proposal[idx] = x[idx] + coord_scales[k][r] * noise;
                    let mut delta = 0.0;
                    for &t in &affected[k] {
                        new_terms[t] = target.term(t, &proposal);
                        delta += new_terms[t] - terms[t];
                    }
                    let accept = delta >= 0.0 || rng.random::<f64>().ln() < delta;
                    if accept {
                        x[idx] = proposal[idx];
                        for &t in &affected[k] {
                            terms[t] = new_terms[t];
                        }
                    } else {
                        proposal[idx] = x[idx];
                    }
                    let alpha = if delta >= 0.0 { 1.0 } else { delta.exp() };
                    coord_scales[k][r] *= (gamma * (alpha - 0.44)).exp();
                }
            }
        } else {
            for (k, block) in blocks.iter().enumerate() {
                let repeats = if k == 0 { target.global_update_repeats().max(1) } else { 1 };
                for _ in 0..repeats {
                    if k == 0 {
                        if let Some(l) = &chol {
                            // x' = x + s * L * zeta on the global block
                            let zeta: Vec<f64> =
                                (0..g).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
                            for (r, &idx) in block.iter().enumerate() {
                                let mut step = 0.0;
                                for (c, z) in zeta.iter().enumerate().take(r + 1) {
                                    step += l[r * g + c] * z;
                                }
                                proposal[idx] = x[idx] + scales[0] * step;
                            }
                        } else {
                            for (r, &idx) in block.iter().enumerate() {
                                let noise: f64 = rng.sample(StandardNormal);
                                proposal[idx] = x[idx] + scales[0] * coord_scales[0][r] * noise;
                            }
                        }
                    } else {
                        for (r, &idx) in block.iter().enumerate() {
                            let noise: f64 = rng.sample(StandardNormal);
                            proposal[idx] = x[idx] + scales[k] * coord_scales[k][r] * noise;
                        }
                    }

                    let mut delta = 0.0;
                    for &t in &affected[k] {
                        new_terms[t] = target.term(t, &proposal);
                        delta += new_terms[t] - terms[t];
                    }
                    let accept = delta >= 0.0 || rng.random::<f64>().ln() < delta;
                    if accept {
                        for &idx in block {
                            x[idx] = proposal[idx];
                        }
                        for &t in &affected[k] {
                            terms[t] = new_terms[t];
                        }
                    } else {
                        for &idx in block {
                            proposal[idx] = x[idx];
                        }
                    }
                    if adapting {
                        let alpha = if delta >= 0.0 { 1.0 } else { delta.exp() };
                        scales[k] *= (gamma * (alpha - config.target_accept)).exp();
                    } else {
                        proposed += 1;
                        accepted += accept as u64;
                    }
                }
            }
        }

        // funnel-breaking scaling moves: random-walk the scale coordinate,
        // rescale its group about the anchor, account for the Jacobian
        for (mi, mv) in moves.iter().enumerate() {
            let noise: f64 = rng.sample(StandardNormal);
            proposal[mv.scale_coord] = x[mv.scale_coord] + move_scales[mi] * noise;
            let old_scale = target.constrain(&x)[mv.scale_coord];
            let new_scale = target.constrain(&proposal)[mv.scale_coord];
            let ratio = new_scale / old_scale;
            let anchor = x[mv.anchor_coord];
            for &idx in &mv.group {
                proposal[idx] = anchor + ratio * (x[idx] - anchor);
            }
            let mut delta = mv.group.len() as f64 * ratio.ln();
            for t in 0..n_terms {
                new_terms[t] = target.term(t, &proposal);
                delta += new_terms[t] - terms[t];
            }
            let accept = delta >= 0.0 || rng.random::<f64>().ln() < delta;
            if accept {
                x[mv.scale_coord] = proposal[mv.scale_coord];
                for &idx in &mv.group {
                    x[idx] = proposal[idx];
                }
                terms.copy_from_slice(&new_terms);
            } else {
                proposal[mv.scale_coord] = x[mv.scale_coord];
                for &idx in &mv.group {
                    proposal[idx] = x[idx];
                }
            }
            if adapting {
                let alpha = if delta >= 0.0 { 1.0 } else { delta.exp() };
                move_scales[mi] *= (gamma * (alpha - config.target_accept)).exp();
            } else {
                proposed += 1;
                accepted += accept as u64;
            }
        }

        if adapting {
            if sweep >= phase_a_end / 2 {
                cov_acc.push(blocks[0].iter().map(|&i| x[i]));
            }
            // windowed refreshes: estimate, fold into the proposal, restart
            // the window so stale early draws stop weighing in
            if sweep >= phase_a_end
                && (sweep - phase_a_end) % refresh_every == 0
                && cov_acc.count > 2 * g
            {
                chol = cholesky(&cov_acc.covariance_regularized(), g).or(chol.take());
                cov_acc = Welford::new(g);
            }
        } else {
            draws.push_row(&target.constrain(&x));
        }
    }

    debug_assert!(draws.data.iter().all(|v| v.is_finite()), "non-finite retained draw");
    Ok(ChainOutput {
        draws,
        accept_rate: accepted as f64 / proposed as f64,
        scales,
    })
}

/// Running mean/covariance accumulator.
struct Welford {
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl Welford {
    fn new(d: usize) -> Self {
        Self { count: 0, mean: vec![0.0; d], m2: vec![0.0; d * d] }
    }

    fn push(&mut self, values: impl Iterator<Item = f64>) {
        let d = self.mean.len();
        let v: Vec<f64> = values.collect();
        debug_assert_eq!(v.len(), d);
        self.count += 1;
        let n = self.count as f64;
        let delta: Vec<f64> = v.iter().zip(&self.mean).map(|(a, b)| a - b).collect();
        for (m, dl) in self.mean.iter_mut().zip(&delta) {
            *m += dl / n;
        }
        for r in 0..d {
            let d2r = v[r] - self.mean[r];
            for c in 0..d {
                self.m2[r * d + c] += delta[c] * d2r;
            }
        }
    }

    /// Sample covariance shrunk slightly toward its own diagonal scale, so a
    /// coordinate that has not yet explored cannot freeze the proposal.
    fn covariance_regularized(&self) -> Vec<f64> {
        let d = self.mean.len();
        let denom = (self.count.max(2) - 1) as f64;
        let mut cov: Vec<f64> = self.m2.iter().map(|v| v / denom).collect();
        let mean_var = (0..d).map(|r| cov[r * d + r]).sum::<f64>() / d as f64;
        let ridge = (1e-3 * mean_var).max(1e-10);
        for r in 0..d {
            cov[r * d + r] += ridge;
        }
        cov
    }
}

/// Dense lower Cholesky factor of a small SPD matrix (row-major), or `None`
/// if the matrix is not positive definite.
fn cholesky(mat: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for r in 0..d {
        for c in 0..=r {
            let mut sum = mat[r * d + c];
            for k in 0..c {
                sum -= l[r * d + k] * l[c * d + k];
            }
            if r == c {
                if sum <= 0.0 {
                    return None;
                }
                l[r * d + r] = sum.sqrt();
            } else {
                l[r * d + c] = sum / l[c * d + c];
            }
        }
    }
    Some(l)
}
