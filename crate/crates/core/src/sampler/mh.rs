//! Symmetric Gaussian random walk on the log scale, with batch adaptation
//! of the step size toward a target acceptance rate during burn-in only.

use rand::Rng;
use rand_distr::StandardNormal;

/// Adaptive per-parameter step state. Adaptation happens in batches of
/// `window` proposals with a shrinking nudge, Roberts-Rosenthal style, and
/// is frozen once burn-in ends so the post-burn-in kernel satisfies
/// detailed balance.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveStep {
    log_step: f64,
    target: f64,
    window: u32,
    batch: u32,
    window_proposals: u32,
    window_accepts: u32,
    pub total_proposals: u64,
    pub total_accepts: u64,
}

impl AdaptiveStep {
    pub fn new(initial_step: f64, target: f64, window: u32) -> AdaptiveStep {
        AdaptiveStep {
            log_step: initial_step.ln(),
            target,
            window: window.max(1),
            batch: 0,
            window_proposals: 0,
            window_accepts: 0,
            total_proposals: 0,
            total_accepts: 0,
        }
    }

    pub fn step(&self) -> f64 {
        self.log_step.exp()
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.total_proposals == 0 {
            0.0
        } else {
            self.total_accepts as f64 / self.total_proposals as f64
        }
    }

    pub(crate) fn record(&mut self, accepted: bool, adapting: bool) {
        self.total_proposals += 1;
        if accepted {
            self.total_accepts += 1;
        }
        if !adapting {
            return;
        }
        self.window_proposals += 1;
        if accepted {
            self.window_accepts += 1;
        }
        if self.window_proposals >= self.window {
            self.batch += 1;
            let rate = self.window_accepts as f64 / self.window_proposals as f64;
            let delta = 0.05f64.min(1.0 / (self.batch as f64).sqrt());
            self.log_step += if rate > self.target { delta } else { -delta };
            self.window_proposals = 0;
            self.window_accepts = 0;
        }
    }
}

/// One Metropolis-Hastings move for a positive scalar: propose
/// `exp(log x + s z)`, accept with the log-scale Jacobian included.
/// `log_target` returns negative infinity outside the support.
pub fn mh_move<R: Rng + ?Sized, F: FnMut(f64) -> f64>(
    current: f64,
    current_log_target: f64,
    step: &mut AdaptiveStep,
    adapting: bool,
    rng: &mut R,
    mut log_target: F,
) -> (f64, f64) {
    let z: f64 = rng.sample(StandardNormal);
    let proposal = (current.ln() + step.step() * z).exp();
    let prop_log_target = if proposal.is_finite() && proposal > 0.0 {
        log_target(proposal)
    } else {
        f64::NEG_INFINITY
    };
    let log_alpha = prop_log_target - current_log_target + proposal.ln() - current.ln();
    let u: f64 = rng.gen();
    if u.ln() < log_alpha {
        step.record(true, adapting);
        (proposal, prop_log_target)
    } else {
        step.record(false, adapting);
        (current, current_log_target)
    }
}
