//! Noise schedules and ODE integrators: the cosine diffusion schedule,
//! the deterministic DDIM step, the Euler flow step, and classifier-free
//! guidance combination.

use crate::constants::{ALPHA_GUARD, SCHEDULE_ENDPOINT_TOL, VP_SLACK};
use crate::error::{Error, Result};
use crate::numerics::Tensor2;

/// Discretized variance-preserving noise schedule over s in 0..=T.
#[derive(Debug, Clone)]
pub struct Schedule {
    pub steps: usize,
    pub alpha: Vec<f32>,
    pub sigma: Vec<f32>,
}

impl Schedule {
    /// Cosine schedule: alpha_bar(t) = f(t)/f(0) with
    /// f(t) = cos^2(((t/T + 0.008) / 1.008) * pi/2).
    pub fn cosine(steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::Config(format!("schedule needs T >= 2, got {steps}")));
        }
        let f = |t: f64| -> f64 {
            let x = ((t / steps as f64 + 0.008) / 1.008) * std::f64::consts::FRAC_PI_2;
            x.cos().powi(2)
        };
        let f0 = f(0.0);
        let mut alpha = Vec::with_capacity(steps + 1);
        let mut sigma = Vec::with_capacity(steps + 1);
        // Per-step betas are capped at 0.999 so alpha_bar stays clear of
        // zero at the noise end (keeps the DDIM x0 reconstruction finite).
        let mut abar_prev = 1.0f64;
        for t in 0..=steps {
            let abar = if t == 0 {
                1.0
            } else {
                let raw = (f(t as f64) / f0).clamp(0.0, 1.0);
                let beta = (1.0 - raw / abar_prev).min(0.999);
                abar_prev * (1.0 - beta)
            };
            abar_prev = abar;
            alpha.push(abar.sqrt() as f32);
            sigma.push((1.0 - abar).sqrt() as f32);
        }
        let sched = Self { steps, alpha, sigma };
        sched.validate()?;
        Ok(sched)
    }

    fn validate(&self) -> Result<()> {
        if (self.alpha[0] - 1.0).abs() > SCHEDULE_ENDPOINT_TOL
            || self.sigma[0] > 1e-3
        {
            return Err(Error::Config(format!(
                "schedule data endpoint alpha_0={} sigma_0={}",
                self.alpha[0], self.sigma[0]
            )));
        }
        for s in 0..=self.steps {
            let vp = self.alpha[s] * self.alpha[s] + self.sigma[s] * self.sigma[s];
            if vp > 1.0 + VP_SLACK {
                return Err(Error::Config(format!("schedule not variance preserving at {s}")));
            }
        }
        for s in 1..=self.steps {
            if self.snr(s) >= self.snr(s - 1) {
                return Err(Error::Config(format!("SNR not strictly decreasing at {s}")));
            }
        }
        Ok(())
    }

    pub fn snr(&self, s: usize) -> f32 {
        let a = self.alpha[s];
        let g = self.sigma[s].max(1e-12);
        a * a / (g * g)
    }
}

/// Closed-form forward process: x_s = alpha_s * x0 + sigma_s * eps.
pub fn forward_noise(sched: &Schedule, x0: &Tensor2, s: usize, eps: &Tensor2) -> Result<Tensor2> {
    if !x0.same_shape(eps) {
        return Err(Error::Shape(format!(
            "forward_noise x0 {}x{} vs eps {}x{}",
            x0.rows, x0.cols, eps.rows, eps.cols
        )));
    }
    let (a, g) = (sched.alpha[s], sched.sigma[s]);
    let mut out = x0.clone();
    for (o, &e) in out.data.iter_mut().zip(eps.data.iter()) {
        *o = a * *o + g * e;
    }
    Ok(out)
}

/// Deterministic DDIM update from grid index `s` down to `s_next`:
/// reconstruct x0_hat from the noise prediction and re-noise at `s_next`.
pub fn ddim_step(
    sched: &Schedule,
    x_s: &Tensor2,
    eps_hat: &Tensor2,
    s: usize,
    s_next: usize,
) -> Result<Tensor2> {
    if !x_s.same_shape(eps_hat) {
        return Err(Error::Shape("ddim_step shape mismatch".into()));
    }
    if s_next > s {
        return Err(Error::Config(format!("ddim_step requires s >= s', got {s} -> {s_next}")));
    }
    let a_s = sched.alpha[s];
    if a_s.abs() < ALPHA_GUARD {
        return Err(Error::Numerical(format!("alpha_{s} below guard in ddim_step")));
    }
    let g_s = sched.sigma[s];
    let a_n = sched.alpha[s_next];
    let g_n = sched.sigma[s_next];
    let mut out = Tensor2::zeros(x_s.rows, x_s.cols);
    for i in 0..x_s.data.len() {
        let x0_hat = (x_s.data[i] - g_s * eps_hat.data[i]) / a_s;
        out.data[i] = a_n * x0_hat + g_n * eps_hat.data[i];
    }
    Ok(out)
}

/// Euler step of the flow ODE from time `s` up to `s_next` in [0, 1].
pub fn euler_flow_step(x_s: &Tensor2, v_hat: &Tensor2, s: f32, s_next: f32) -> Result<Tensor2> {
    if !x_s.same_shape(v_hat) {
        return Err(Error::Shape("euler_flow_step shape mismatch".into()));
    }
    if !(0.0..=1.0).contains(&s) || !(s..=1.0).contains(&s_next) {
        return Err(Error::Config(format!("euler step times out of order: {s} -> {s_next}")));
    }
    let dt = s_next - s;
    let mut out = x_s.clone();
    for (o, &v) in out.data.iter_mut().zip(v_hat.data.iter()) {
        *o += dt * v;
    }
    Ok(out)
}

/// Classifier-free guidance: w * cond + (1 - w) * uncond, for either
/// noise or velocity predictions.
pub fn cfg_combine(pred_cond: &Tensor2, pred_uncond: &Tensor2, w: f32) -> Result<Tensor2> {
    if !pred_cond.same_shape(pred_uncond) {
        return Err(Error::Shape("cfg_combine shape mismatch".into()));
    }
    let mut out = Tensor2::zeros(pred_cond.rows, pred_cond.cols);
    for i in 0..out.data.len() {
        out.data[i] = w * pred_cond.data[i] + (1.0 - w) * pred_uncond.data[i];
    }
    Ok(out)
}

/// Sequence slots clamped to fixed values in the initial noise and after
/// every solver step. Indices are flat positions within one sequence row.
#[derive(Debug, Clone, Default)]
pub struct InpaintMask {
    pub slots: Vec<(usize, f32)>,
}

impl InpaintMask {
    pub fn apply(&self, x: &mut Tensor2) {
        for r in 0..x.rows {
            let row = x.row_mut(r);
            for &(idx, v) in &self.slots {
                row[idx] = v;
            }
        }
    }
}

/// Uniform DDIM index grid from T down to 0 with `n` sampling steps.
pub fn ddim_grid(t_steps: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Config("sampling step count must be >= 1".into()));
    }
    let mut grid = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let v = (t_steps as f64 * (n - k) as f64 / n as f64).round() as usize;
        grid.push(v);
    }
    Ok(grid)
}

/// Uniform Euler grid on [0, 1] with `n` steps.
pub fn euler_grid(n: usize) -> Result<Vec<f32>> {
    if n == 0 {
        return Err(Error::Config("sampling step count must be >= 1".into()));
    }
    Ok((0..=n).map(|k| k as f32 / n as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn cosine_endpoints() {
        let s = Schedule::cosine(1000).unwrap();
        assert!((s.alpha[0] - 1.0).abs() < 1e-6);
        assert!(s.sigma[0] < 1e-3);
    }

    #[test]
    fn cosine_midpoint_matches_closed_form() {
        let s = Schedule::cosine(1000).unwrap();
        // Direct evaluation of the closed form at t = 500.
        let f = |t: f64| ((t / 1000.0 + 0.008) / 1.008 * std::f64::consts::FRAC_PI_2)
            .cos()
            .powi(2);
        let abar = f(500.0) / f(0.0);
        assert!((s.alpha[500] as f64 - abar.sqrt()).abs() < 1e-6);
        assert!((s.sigma[500] as f64 - (1.0 - abar).sqrt()).abs() < 1e-6);
        assert!((s.alpha[500] - 0.7035).abs() < 1e-3);
        assert!((s.sigma[500] - 0.7107).abs() < 1e-3);
    }

    #[test]
    fn snr_strictly_decreasing() {
        let s = Schedule::cosine(1000).unwrap();
        for t in 1..=1000 {
            assert!(s.snr(t) < s.snr(t - 1), "SNR not decreasing at {t}");
        }
    }

    #[test]
    fn too_few_steps_rejected() {
        assert!(Schedule::cosine(1).is_err());
    }

    #[test]
    fn forward_noise_cases() {
        let sched = Schedule::cosine(100).unwrap();
        let mut rng = Rng::seed(0);
        let x0 = rng.randn(3, 4);
        let zero = Tensor2::zeros(3, 4);
        // eps = 0 -> alpha_s * x0
        let y = forward_noise(&sched, &x0, 50, &zero).unwrap();
        for (a, b) in y.data.iter().zip(x0.data.iter()) {
            assert!((a - sched.alpha[50] * b).abs() < 1e-7);
        }
        // s = 0 -> ~ x0
        let eps = rng.randn(3, 4);
        let y = forward_noise(&sched, &x0, 0, &eps).unwrap();
        for (a, b) in y.data.iter().zip(x0.data.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
        // x0 = 0 -> sigma_s * eps
        let y = forward_noise(&sched, &zero, 70, &eps).unwrap();
        for (a, b) in y.data.iter().zip(eps.data.iter()) {
            assert!((a - sched.sigma[70] * b).abs() < 1e-7);
        }
        // shape mismatch
        assert!(forward_noise(&sched, &x0, 10, &Tensor2::zeros(2, 2)).is_err());
    }

    #[test]
    fn ddim_identity_step() {
        let sched = Schedule::cosine(100).unwrap();
        let mut rng = Rng::seed(1);
        let x = rng.randn(2, 3);
        let e = rng.randn(2, 3);
        let y = ddim_step(&sched, &x, &e, 60, 60).unwrap();
        for (a, b) in y.data.iter().zip(x.data.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn ddim_recovers_forward_point() {
        // With the exact forward noise as prediction, a DDIM step lands on
        // the forward process point at s'.
        let sched = Schedule::cosine(1000).unwrap();
        let mut rng = Rng::seed(2);
        let x0 = rng.randn(4, 6);
        let eps = rng.randn(4, 6);
        let x_s = forward_noise(&sched, &x0, 800, &eps).unwrap();
        let stepped = ddim_step(&sched, &x_s, &eps, 800, 300).unwrap();
        let want = forward_noise(&sched, &x0, 300, &eps).unwrap();
        for (a, b) in stepped.data.iter().zip(want.data.iter()) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn euler_cases() {
        let mut rng = Rng::seed(3);
        let x0 = rng.randn(2, 4);
        let zero = Tensor2::zeros(2, 4);
        // v = 0 -> unchanged
        let y = euler_flow_step(&x0, &zero, 0.2, 0.7).unwrap();
        assert_eq!(y.data, x0.data);
        // straight field, single step 0 -> 1 lands exactly on x1
        let x1 = rng.randn(2, 4);
        let mut v = x1.clone();
        for (vv, &a) in v.data.iter_mut().zip(x0.data.iter()) {
            *vv -= a;
        }
        let y = euler_flow_step(&x0, &v, 0.0, 1.0).unwrap();
        for (a, b) in y.data.iter().zip(x1.data.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        // two half steps with constant field equal one full step
        let h1 = euler_flow_step(&x0, &v, 0.0, 0.5).unwrap();
        let h2 = euler_flow_step(&h1, &v, 0.5, 1.0).unwrap();
        for (a, b) in h2.data.iter().zip(y.data.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(euler_flow_step(&x0, &v, 0.8, 0.2).is_err());
    }

    #[test]
    fn cfg_cases() {
        let c = Tensor2::from_vec(1, 2, vec![1.0, 1.0]).unwrap();
        let u = Tensor2::from_vec(1, 2, vec![0.0, 0.0]).unwrap();
        assert_eq!(cfg_combine(&c, &u, 1.0).unwrap().data, vec![1.0, 1.0]);
        assert_eq!(cfg_combine(&c, &u, 0.0).unwrap().data, vec![0.0, 0.0]);
        assert_eq!(cfg_combine(&c, &u, 2.0).unwrap().data, vec![2.0, 2.0]);
    }

    #[test]
    fn ddim_grid_matches_uniform_indices() {
        assert_eq!(ddim_grid(1000, 3).unwrap(), vec![1000, 667, 333, 0]);
        assert_eq!(ddim_grid(1000, 5).unwrap(), vec![1000, 800, 600, 400, 200, 0]);
        assert_eq!(euler_grid(2).unwrap(), vec![0.0, 0.5, 1.0]);
    }

    #[test]
    fn inpaint_mask_applies_to_all_rows() {
        let mut x = Tensor2::zeros(3, 4);
        let mask = InpaintMask { slots: vec![(0, 7.0), (3, -2.0)] };
        mask.apply(&mut x);
        for r in 0..3 {
            assert_eq!(x.get(r, 0), 7.0);
            assert_eq!(x.get(r, 3), -2.0);
        }
    }

    #[test]
    fn ddim_gaussian_oracle_chain_densification() {
        // Chaining DDIM with the analytic optimal predictor for N(0, I)
        // data: per-sample drift from the coarse chain shrinks as the grid
        // densifies.
        let sched = Schedule::cosine(1000).unwrap();
        let predictor = |x: &Tensor2, s: usize| -> Tensor2 {
            let a = sched.alpha[s];
            let g = sched.sigma[s];
            x.map(|v| g * v / (a * a + g * g))
        };
        let mut rng = Rng::seed(9);
        let noise = rng.randn(64, 2);
        let run = |steps: usize| -> Tensor2 {
            let grid = ddim_grid(1000, steps).unwrap();
            let mut x = noise.clone();
            for w in grid.windows(2) {
                let e = predictor(&x, w[0]);
                x = ddim_step(&sched, &x, &e, w[0], w[1]).unwrap();
            }
            x
        };
        let fine = run(128);
        let drift = |a: &Tensor2| -> f32 {
            a.data
                .iter()
                .zip(fine.data.iter())
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f32>()
                / a.data.len() as f32
        };
        let d8 = drift(&run(8));
        let d32 = drift(&run(32));
        assert!(d32 < d8, "drift should shrink as the grid densifies: {d8} -> {d32}");
    }
}
