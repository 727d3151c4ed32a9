//! HDP machinery for the collapsed HDP-HMM: stick-breaking geometric
//! expectations, expected table counts of the auxiliary-variable expansion,
//! and the stochastic updates of `q(π̃)`, `q(α)` and `q(γ)`.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::messages::SequencePosterior;
use crate::special::{beta_expect_logs, gamma_expect, gamma_geo_expect, psi, BetaParams, GammaParams};

/// Value of every `G[απ_k]` before the first HDP update.
pub const INITIAL_GEO_ALPHA_PI: f64 = 0.1;

/// Gamma hyperpriors on the concentrations α and γ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HdpPriors {
    pub alpha: GammaParams,
    pub gamma: GammaParams,
}

impl Default for HdpPriors {
    fn default() -> Self {
        let vague = GammaParams::new(1.0, 0.1).expect("valid");
        HdpPriors { alpha: vague, gamma: vague }
    }
}

/// Variational posterior over the HDP parameters under direct-assignment
/// truncation at K sticks.
#[derive(Debug, Clone, PartialEq)]
pub struct HdpPosterior {
    sticks: Vec<BetaParams>,
    alpha: GammaParams,
    gamma: GammaParams,
    geo_alpha_pi: Vec<f64>,
    pinned: bool,
}

impl HdpPosterior {
    /// Starts from the prior: `π̃_k ~ Beta(1, E[γ])`, α and γ at their
    /// hyperpriors, and every `G[απ_k]` pinned to [`INITIAL_GEO_ALPHA_PI`]
    /// until the first update.
    pub fn from_prior(states: usize, priors: &HdpPriors) -> Result<Self> {
        if states == 0 {
            return Err(Error::InvalidArgument("HDP truncation must be at least 1".into()));
        }
        let stick = BetaParams::new(1.0, gamma_expect(priors.gamma))?;
        Ok(HdpPosterior {
            sticks: vec![stick; states],
            alpha: priors.alpha,
            gamma: priors.gamma,
            geo_alpha_pi: vec![INITIAL_GEO_ALPHA_PI; states],
            pinned: true,
        })
    }

    /// Builds a posterior from explicit parameters with a freshly computed cache.
    pub fn new(sticks: Vec<BetaParams>, alpha: GammaParams, gamma: GammaParams) -> Result<Self> {
        if sticks.is_empty() {
            return Err(Error::InvalidArgument("HDP truncation must be at least 1".into()));
        }
        let mut post = HdpPosterior {
            sticks,
            alpha,
            gamma,
            geo_alpha_pi: Vec::new(),
            pinned: false,
        };
        post.refresh();
        Ok(post)
    }

    /// Restores a posterior verbatim, cache included.
    pub(crate) fn from_raw(
        sticks: Vec<BetaParams>,
        alpha: GammaParams,
        gamma: GammaParams,
        geo_alpha_pi: Vec<f64>,
        pinned: bool,
    ) -> Result<Self> {
        if sticks.is_empty() || geo_alpha_pi.len() != sticks.len() {
            return Err(Error::Malformed("HDP posterior dimensions disagree".into()));
        }
        if geo_alpha_pi.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(Error::Malformed("non-positive cached G[απ]".into()));
        }
        Ok(HdpPosterior {
            sticks,
            alpha,
            gamma,
            geo_alpha_pi,
            pinned,
        })
    }

    pub fn states(&self) -> usize {
        self.sticks.len()
    }

    pub fn sticks(&self) -> &[BetaParams] {
        &self.sticks
    }

    pub fn alpha(&self) -> GammaParams {
        self.alpha
    }

    pub fn gamma(&self) -> GammaParams {
        self.gamma
    }

    /// True until the first [`update_hdp`] replaces the startup values.
    pub fn is_pinned(&self) -> bool {
        self.pinned
    }

    /// Cached `G[απ_k]`, the transition prior counts of the surrogate.
    pub fn geo_alpha_pi(&self) -> &[f64] {
        &self.geo_alpha_pi
    }

    /// `G[α] · exp(E[log π̃_k] + Σ_{l<k} E[log(1-π̃_l)])` from the current sticks.
    pub fn compute_geo_alpha_pi(&self) -> Vec<f64> {
        let log_geo_alpha = gamma_geo_expect(self.alpha).ln();
        let mut rest = 0.0;
        self.sticks
            .iter()
            .map(|&s| {
                let (log_pi, log_rest) = beta_expect_logs(s);
                let g = (log_geo_alpha + log_pi + rest).exp();
                rest += log_rest;
                g
            })
            .collect()
    }

    fn refresh(&mut self) {
        self.geo_alpha_pi = self.compute_geo_alpha_pi();
        self.pinned = false;
    }
}

/// `G[απ_k]` for every stick, honoring the startup pin.
pub fn geo_alpha_pi(post: &HdpPosterior) -> Vec<f64> {
    post.geo_alpha_pi.clone()
}

/// Per-sequence inputs to the table-count approximation.
#[derive(Debug, Clone, PartialEq)]
pub struct TableInputs {
    /// `E[C^n_{kk'}]`, (K+1) × K.
    pub counts: Array2<f64>,
    /// `log q(C^n_{kk'} = 0)` under the overlapping-pair independence
    /// approximation, (K+1) × K. May be `-inf`.
    pub log_empty: Array2<f64>,
    /// `log q(C^n_{k·} = 0)`, length K+1. Entry 0 is always `-inf`.
    pub log_empty_row: Array1<f64>,
}

impl TableInputs {
    pub fn zeros(states: usize) -> Self {
        TableInputs {
            counts: Array2::zeros((states + 1, states)),
            log_empty: Array2::zeros((states + 1, states)),
            log_empty_row: Array1::zeros(states + 1),
        }
    }

    pub fn from_posterior(post: &SequencePosterior) -> Self {
        let mut inputs = TableInputs::zeros(post.states());
        inputs.accumulate(post);
        inputs
    }

    /// Adds one sequence's contribution.
    pub fn accumulate(&mut self, post: &SequencePosterior) {
        for slot in post.pairwise.axis_iter(Axis(0)) {
            for ((c, le), &p) in self.counts.iter_mut().zip(self.log_empty.iter_mut()).zip(slot.iter()) {
                *c += p;
                *le += (-p.clamp(0.0, 1.0)).ln_1p();
            }
            for (lr, row) in self.log_empty_row.iter_mut().zip(slot.axis_iter(Axis(0))) {
                *lr += (-row.sum().clamp(0.0, 1.0)).ln_1p();
            }
        }
    }

    pub fn add_assign(&mut self, other: &TableInputs) {
        self.counts += &other.counts;
        self.log_empty += &other.log_empty;
        self.log_empty_row += &other.log_empty_row;
    }

    /// Divides by the number of accumulated sequences.
    pub fn scaled(&self, factor: f64) -> TableInputs {
        TableInputs {
            counts: &self.counts * factor,
            log_empty: &self.log_empty * factor,
            log_empty_row: &self.log_empty_row * factor,
        }
    }
}

/// Expected table counts and `E[log η]` for the N-replicate dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct TableStats {
    /// `E[s^(N)_{kk'}]`, (K+1) × K.
    pub es: Array2<f64>,
    /// `E[log η^(N)_k]`, length K+1.
    pub elog_eta: Array1<f64>,
}

impl TableStats {
    pub fn zeros(states: usize) -> Self {
        TableStats {
            es: Array2::zeros((states + 1, states)),
            elog_eta: Array1::zeros(states + 1),
        }
    }
}

/// Probability of at least one event among N replicates, and the expected
/// count given at least one.
///
/// `q(C>0)` is capped by `N·E[C^n]` (Markov's bound), which keeps
/// `E₊[C] ≥ 1` when the inputs are averages over several sequences.
fn occupancy(mean_count: f64, log_empty: f64, replicates: f64) -> Option<(f64, f64)> {
    if !(mean_count > 0.0) {
        return None;
    }
    let total = replicates * mean_count;
    let q_pos = (-(replicates * log_empty).exp_m1()).min(total);
    if !(q_pos > 0.0) {
        return None;
    }
    Some((q_pos, total / q_pos))
}

/// Expected table counts `E[s^(N)]` and `E[log η^(N)]` from per-sequence
/// marginal summaries, treating the sequence as N independent replicates.
pub fn expected_tables(inputs: &TableInputs, replicates: f64, post: &HdpPosterior) -> Result<TableStats> {
    let k = post.states();
    if inputs.counts.dim() != (k + 1, k) {
        return Err(Error::InvalidArgument(format!(
            "table inputs are {:?}, expected ({}, {k})",
            inputs.counts.dim(),
            k + 1
        )));
    }
    if !(replicates >= 1.0 && replicates.is_finite()) {
        return Err(Error::InvalidArgument(format!("replicate count must be ≥ 1, got {replicates}")));
    }
    let geo = post.geo_alpha_pi();
    let mean_alpha = gamma_expect(post.alpha);
    let mut out = TableStats::zeros(k);

    for ((r, c), es) in out.es.indexed_iter_mut() {
        if let Some((q_pos, e_plus)) = occupancy(inputs.counts[[r, c]], inputs.log_empty[[r, c]], replicates) {
            let g = geo[c];
            *es = g * q_pos * (psi(g + e_plus) - psi(g));
        }
    }
    for (r, e) in out.elog_eta.iter_mut().enumerate() {
        let row_count = inputs.counts.row(r).sum();
        if let Some((q_pos, e_plus)) = occupancy(row_count, inputs.log_empty_row[r], replicates) {
            *e = q_pos * (psi(mean_alpha) - psi(mean_alpha + e_plus));
        }
    }
    Ok(out)
}

/// Targets of the (π̃, γ) block: stick shapes and the rate of q(γ), solved
/// jointly because `v` depends on `E[γ]` and `b_γ` on the sticks.
fn stick_gamma_targets(col: &[f64], priors: &HdpPriors) -> (Vec<f64>, Vec<f64>, f64, f64) {
    let k = col.len();
    let u: Vec<f64> = col.iter().map(|s| 1.0 + s).collect();
    let mut above = vec![0.0; k];
    let mut acc = 0.0;
    for j in (0..k).rev() {
        above[j] = acc;
        acc += col[j];
    }
    let a_gamma = priors.gamma.shape() + k as f64;
    let b0 = priors.gamma.rate();
    let rate_at = |e: f64| -> f64 {
        b0 + u
            .iter()
            .zip(&above)
            .map(|(&uj, &aj)| {
                let v = e + aj;
                psi(uj + v) - psi(v)
            })
            .sum::<f64>()
    };
    // E·b_γ(E) - a_γ is strictly increasing in E with a single root.
    let h = |e: f64| e * rate_at(e) - a_gamma;
    let (mut lo, mut hi) = (a_gamma / (b0 + 1.0), a_gamma / b0);
    while h(lo) > 0.0 {
        lo *= 0.5;
    }
    while h(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if h(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    let e_gamma = 0.5 * (lo + hi);
    let v: Vec<f64> = above.iter().map(|a| e_gamma + a).collect();
    let b_gamma = rate_at(e_gamma);
    (u, v, a_gamma, b_gamma)
}

/// One stochastic update of the HDP posterior with step size `rho`.
///
/// Intermediate targets are computed from the table statistics and priors,
/// then mixed with the current parameters as `(1-ρ)·old + ρ·target`. The
/// stick and `q(γ)` targets are mutually dependent and are solved jointly, so
/// `E[γ]` in the `v` target and `E[log(1-π̃)]` in the `b_γ` target refer to
/// the same updated distributions.
pub fn update_hdp(post: &HdpPosterior, tables: &TableStats, rho: f64, priors: &HdpPriors) -> Result<HdpPosterior> {
    let k = post.states();
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidArgument(format!("step size {rho} outside [0, 1]")));
    }
    if tables.es.dim() != (k + 1, k) || tables.elog_eta.len() != k + 1 {
        return Err(Error::InvalidArgument("table statistics do not match the truncation".into()));
    }
    let col: Vec<f64> = tables.es.sum_axis(Axis(0)).to_vec();
    let total_tables: f64 = col.iter().sum();
    let sum_elog_eta = tables.elog_eta.sum();

    let (u_t, v_t, a_gamma_t, b_gamma_t) = stick_gamma_targets(&col, priors);
    let a_alpha_t = priors.alpha.shape() + total_tables;
    let b_alpha_t = priors.alpha.rate() - sum_elog_eta;

    let mix = |old: f64, target: f64| (1.0 - rho) * old + rho * target;
    let sticks = post
        .sticks
        .iter()
        .zip(u_t.iter().zip(&v_t))
        .map(|(s, (&u, &v))| BetaParams::new(mix(s.u(), u), mix(s.v(), v)))
        .collect::<Result<Vec<_>>>()?;
    let alpha = GammaParams::new(mix(post.alpha.shape(), a_alpha_t), mix(post.alpha.rate(), b_alpha_t))?;
    let gamma = GammaParams::new(mix(post.gamma.shape(), a_gamma_t), mix(post.gamma.rate(), b_gamma_t))?;

    let mut next = HdpPosterior {
        sticks,
        alpha,
        gamma,
        geo_alpha_pi: Vec::new(),
        pinned: false,
    };
    if rho == 0.0 && post.pinned {
        next.geo_alpha_pi = post.geo_alpha_pi.clone();
        next.pinned = true;
    } else {
        next.refresh();
    }
    Ok(next)
}
