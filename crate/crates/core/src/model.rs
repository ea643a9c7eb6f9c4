//! The model contract for finite-horizon nonlinear Markov decision problems.
//!
//! A nonlinear model supplies time-indexed, distribution-dependent transition
//! kernels `p_mu^(t)(s'|s,a)` and rewards `r_mu^(t)(s,a)` together with their
//! partial derivatives in the state distribution `mu`. All derivatives are
//! plain partial derivatives in ordinary (ambient) coordinates, so kernels and
//! rewards must evaluate as algebraic formulas for `mu` slightly off the
//! probability simplex as well.

/// Contract for a finite-horizon nonlinear Markov decision problem.
///
/// Implementations must be pure: every method is a function of its arguments
/// only, so a model instance may be shared across concurrent runs.
pub trait NonlinearModel: Sync {
    /// Number of decision epochs `T`; states live at times `0..=T`.
    fn horizon(&self) -> usize;
    fn state_count(&self) -> usize;
    fn action_count(&self) -> usize;

    /// Writes the kernel row `p_mu^(t)(.|s,a)` into `out` (length `state_count`).
    fn kernel(&self, t: usize, mu: &[f64], s: usize, a: usize, out: &mut [f64]);

    /// Immediate reward `r_mu^(t)(s,a)` for `t < T`.
    fn reward(&self, t: usize, mu: &[f64], s: usize, a: usize) -> f64;

    /// Terminal reward `r_mu^(T)(s)`.
    fn terminal_reward(&self, mu: &[f64], s: usize) -> f64;

    /// Whether the `*_mu_partial` derivatives are implemented. Backward-scheme
    /// operations fail with an unsupported-model error when this is false.
    fn mu_partials_available(&self) -> bool {
        true
    }

    /// `∂ p_mu^(t)(s_next | s, a) / ∂ mu(s_partial)`.
    fn kernel_mu_partial(
        &self,
        t: usize,
        mu: &[f64],
        s: usize,
        a: usize,
        s_next: usize,
        s_partial: usize,
    ) -> f64;

    /// `∂ r_mu^(t)(s, a) / ∂ mu(s_partial)`.
    fn reward_mu_partial(&self, t: usize, mu: &[f64], s: usize, a: usize, s_partial: usize)
        -> f64;

    /// `∂ r_mu^(T)(s) / ∂ mu(s_partial)`.
    fn terminal_mu_partial(&self, mu: &[f64], s: usize, s_partial: usize) -> f64;

    /// Writes `out[s_partial] = Σ_{s'} ∂p_mu^(t)(s'|s,a)/∂mu(s_partial) × weights[s']`.
    ///
    /// The default evaluates the pointwise partials; models with structured
    /// kernels may override this with a direct differentiation of the same
    /// formulas when the pointwise route is too slow.
    fn kernel_mu_partial_dot(
        &self,
        t: usize,
        mu: &[f64],
        s: usize,
        a: usize,
        weights: &[f64],
        out: &mut [f64],
    ) {
        let n = self.state_count();
        for (sp, slot) in out.iter_mut().enumerate().take(n) {
            let mut acc = 0.0;
            for (s_next, &w) in weights.iter().enumerate() {
                if w != 0.0 {
                    acc += self.kernel_mu_partial(t, mu, s, a, s_next, sp) * w;
                }
            }
            *slot = acc;
        }
    }

    /// Writes `out[s_partial] = ∂r_mu^(t)(s,a)/∂mu(s_partial)`.
    fn reward_mu_partial_row(&self, t: usize, mu: &[f64], s: usize, a: usize, out: &mut [f64]) {
        for sp in 0..self.state_count() {
            out[sp] = self.reward_mu_partial(t, mu, s, a, sp);
        }
    }

    /// Names of the reward components reported in decompositions.
    fn component_names(&self) -> Vec<String> {
        vec!["reward".to_string()]
    }

    /// Splits `reward` into the named components (same order as
    /// `component_names`); the components must sum to the reward.
    fn reward_components(&self, t: usize, mu: &[f64], s: usize, a: usize, out: &mut [f64]) {
        out[0] = self.reward(t, mu, s, a);
        for v in out.iter_mut().skip(1) {
            *v = 0.0;
        }
    }

    /// Splits `terminal_reward` into the named components.
    fn terminal_components(&self, mu: &[f64], s: usize, out: &mut [f64]) {
        out[0] = self.terminal_reward(mu, s);
        for v in out.iter_mut().skip(1) {
            *v = 0.0;
        }
    }
}
