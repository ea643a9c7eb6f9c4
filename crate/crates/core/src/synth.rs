//! Synthetic nonlinear models with closed-form derivatives. Used by the
//! verification suites (gradcheck) and as randomized test instances.
//!
//! Kernels are softmax mixtures `p_mu(s'|s,a) ∝ exp(base + W·mu)`, so they
//! are valid pmfs and smooth in `mu` on and slightly off the simplex.
//! Rewards are quadratic polynomials in `mu`.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::NonlinearModel;

#[derive(Debug, Clone, Copy)]
pub struct SynthSpec {
    pub horizon: usize,
    pub states: usize,
    pub actions: usize,
    /// Scale of the kernel's dependence on `mu`; zero gives a Markov model.
    pub kernel_nonlinearity: f64,
    /// Scale of the rewards' dependence on `mu`; zero gives Markov rewards.
    pub reward_nonlinearity: f64,
}

impl SynthSpec {
    pub fn markov(horizon: usize, states: usize, actions: usize) -> Self {
        SynthSpec {
            horizon,
            states,
            actions,
            kernel_nonlinearity: 0.0,
            reward_nonlinearity: 0.0,
        }
    }

    pub fn nonlinear(horizon: usize, states: usize, actions: usize) -> Self {
        SynthSpec {
            horizon,
            states,
            actions,
            kernel_nonlinearity: 0.8,
            reward_nonlinearity: 0.6,
        }
    }
}

pub struct SyntheticModel {
    spec: SynthSpec,
    /// `[t][s][a][s']`
    kernel_base: Vec<f64>,
    /// `[t][s][a][s'][sp]`
    kernel_w: Vec<f64>,
    /// `[t][s][a]`
    reward_base: Vec<f64>,
    /// `[t][s][a][sp]`
    reward_lin: Vec<f64>,
    /// `[t][s][a][sp][sq]`
    reward_quad: Vec<f64>,
    /// `[s]`
    terminal_base: Vec<f64>,
    /// `[s][sp]`
    terminal_lin: Vec<f64>,
    /// Overrides every reward with zero when set.
    pub zero_rewards: bool,
    /// Test fixture: adds an error to one kernel mu-partial when set,
    /// leaving the kernel itself intact (a deliberately corrupted
    /// derivative for negative controls).
    pub corrupt_kernel_partial: Option<f64>,
}

impl SyntheticModel {
    pub fn random(spec: SynthSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (t, s, a) = (spec.horizon, spec.states, spec.actions);
        let mut draw = |n: usize, scale: f64| -> Vec<f64> {
            (0..n).map(|_| rng.gen_range(-1.0..1.0) * scale).collect()
        };
        SyntheticModel {
            kernel_base: draw(t * s * a * s, 1.0),
            kernel_w: draw(t * s * a * s * s, spec.kernel_nonlinearity),
            reward_base: draw(t * s * a, 1.0),
            reward_lin: draw(t * s * a * s, spec.reward_nonlinearity),
            reward_quad: draw(t * s * a * s * s, 0.5 * spec.reward_nonlinearity),
            terminal_base: draw(s, 1.0),
            terminal_lin: draw(s * s, spec.reward_nonlinearity),
            zero_rewards: false,
            corrupt_kernel_partial: None,
            spec,
        }
    }

    #[inline]
    fn base(&self, t: usize, s: usize, a: usize, s_next: usize) -> f64 {
        let n = self.spec.states;
        self.kernel_base[((t * n + s) * self.spec.actions + a) * n + s_next]
    }

    #[inline]
    fn w(&self, t: usize, s: usize, a: usize, s_next: usize, sp: usize) -> f64 {
        let n = self.spec.states;
        self.kernel_w[(((t * n + s) * self.spec.actions + a) * n + s_next) * n + sp]
    }

    fn logits(&self, t: usize, mu: &[f64], s: usize, a: usize, out: &mut [f64]) {
        let n = self.spec.states;
        for s_next in 0..n {
            let mut v = self.base(t, s, a, s_next);
            for (sp, &m) in mu.iter().enumerate() {
                v += self.w(t, s, a, s_next, sp) * m;
            }
            out[s_next] = v;
        }
    }

    fn softmax(logits: &mut [f64]) {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in logits.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in logits.iter_mut() {
            *v /= sum;
        }
    }
}

impl NonlinearModel for SyntheticModel {
    fn horizon(&self) -> usize {
        self.spec.horizon
    }

    fn state_count(&self) -> usize {
        self.spec.states
    }

    fn action_count(&self) -> usize {
        self.spec.actions
    }

    fn kernel(&self, t: usize, mu: &[f64], s: usize, a: usize, out: &mut [f64]) {
        self.logits(t, mu, s, a, out);
        Self::softmax(out);
    }

    fn reward(&self, t: usize, mu: &[f64], s: usize, a: usize) -> f64 {
        if self.zero_rewards {
            return 0.0;
        }
        let n = self.spec.states;
        let idx = (t * n + s) * self.spec.actions + a;
        let mut v = self.reward_base[idx];
        for (sp, &mp) in mu.iter().enumerate() {
            v += self.reward_lin[idx * n + sp] * mp;
            for (sq, &mq) in mu.iter().enumerate() {
                v += self.reward_quad[(idx * n + sp) * n + sq] * mp * mq;
            }
        }
        v
    }

    fn terminal_reward(&self, mu: &[f64], s: usize) -> f64 {
        if self.zero_rewards {
            return 0.0;
        }
        let n = self.spec.states;
        let mut v = self.terminal_base[s];
        for (sp, &mp) in mu.iter().enumerate() {
            v += self.terminal_lin[s * n + sp] * mp;
        }
        v
    }

    fn kernel_mu_partial(
        &self,
        t: usize,
        mu: &[f64],
        s: usize,
        a: usize,
        s_next: usize,
        sp: usize,
    ) -> f64 {
        let n = self.spec.states;
        let mut p = vec![0.0; n];
        self.kernel(t, mu, s, a, &mut p);
        let avg: f64 = (0..n).map(|k| p[k] * self.w(t, s, a, k, sp)).sum();
        let mut d = p[s_next] * (self.w(t, s, a, s_next, sp) - avg);
        if let Some(bump) = self.corrupt_kernel_partial {
            if t == 1 && s == 0 && a == 0 && s_next == 0 && sp == 0 {
                d += bump;
            }
        }
        d
    }

    fn reward_mu_partial(&self, t: usize, mu: &[f64], s: usize, a: usize, sp: usize) -> f64 {
        if self.zero_rewards {
            return 0.0;
        }
        let n = self.spec.states;
        let idx = (t * n + s) * self.spec.actions + a;
        let mut v = self.reward_lin[idx * n + sp];
        for (sq, &mq) in mu.iter().enumerate() {
            v += (self.reward_quad[(idx * n + sp) * n + sq]
                + self.reward_quad[(idx * n + sq) * n + sp])
                * mq;
        }
        v
    }

    fn terminal_mu_partial(&self, _mu: &[f64], s: usize, sp: usize) -> f64 {
        if self.zero_rewards {
            return 0.0;
        }
        self.terminal_lin[s * self.spec.states + sp]
    }
}
