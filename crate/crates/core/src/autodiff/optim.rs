use super::params::ParamStore;
use super::tape::{Tape, ValueId};
use super::{DiffError, Result};

/// Adam hyper-parameters. Defaults follow the optimizer's original paper.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One bias-corrected Adam update over every slot.
///
/// Increments the shared step counter, consumes the gradient accumulators
/// and zeroes them afterwards. A non-finite gradient aborts before any slot
/// is touched, naming the offending parameter.
pub fn adam_step(store: &mut ParamStore, cfg: &AdamConfig) -> Result<()> {
    for slot in 0..store.len() {
        if !store.grad_at(slot).is_finite() {
            return Err(DiffError::NonFiniteGradient(store.name_at(slot).to_string()));
        }
    }
    let t = store.bump_step();
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for slot in 0..store.len() {
        let grad = store.grad_at(slot).data().to_vec();
        let (value, m, v) = store.adam_buffers(slot);
        let (value, m, v) = (value.data_mut(), m.data_mut(), v.data_mut());
        for i in 0..grad.len() {
            let g = grad[i];
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
    }
    store.zero_grads();
    Ok(())
}

/// Scale all gradient accumulators so their global L2 norm is at most `max_norm`.
pub fn clip_gradients(store: &mut ParamStore, max_norm: f64) {
    let norm = store.grad_norm();
    if norm > max_norm && norm > 0.0 {
        store.scale_grads(max_norm / norm);
    }
}

/// Per-slot outcome of a finite-difference comparison.
#[derive(Debug, Clone)]
pub struct SlotReport {
    pub name: String,
    pub max_rel_err: f64,
}

/// Result of [`grad_check`]: worst relative error per parameter slot, with
/// slots exceeding the tolerance listed in `failed`.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub slots: Vec<SlotReport>,
    pub max_rel_err: f64,
    pub failed: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failed.is_empty()
    }
}

/// Scale floor for the relative-error denominator: elements smaller than
/// this in magnitude are compared on an absolute scale of `tol * FLOOR`.
const REL_ERR_FLOOR: f64 = 1e-2;

/// Compare reverse-mode gradients against central finite differences.
///
/// `f` must build the scalar loss for the given store on the supplied tape;
/// it is re-evaluated at 2 x numel perturbed parameter settings per slot.
/// The relative error per element is `|ad - fd| / max(|ad|, |fd|, 1e-2)`.
pub fn grad_check<F>(store: &ParamStore, f: F, h: f64, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore, &mut Tape) -> Result<ValueId>,
{
    // Reverse-mode gradients from a single taped pass.
    let mut base = store.clone();
    base.zero_grads();
    let mut tape = Tape::new();
    let loss_id = f(&base, &mut tape)?;
    if tape.value(loss_id).numel() != 1 {
        return Err(DiffError::NotScalar {
            shape: tape.value(loss_id).shape().to_vec(),
        });
    }
    if !tape.value(loss_id).is_finite() {
        return Err(DiffError::NonFiniteLoss);
    }
    tape.backward(loss_id)?;
    tape.accumulate_param_grads(&mut base, 1.0);

    let eval = |s: &ParamStore| -> Result<f64> {
        let mut t = Tape::new();
        let id = f(s, &mut t)?;
        let v = t.value(id).item();
        if !v.is_finite() {
            return Err(DiffError::NonFiniteLoss);
        }
        Ok(v)
    };

    let mut slots = Vec::with_capacity(base.len());
    let mut failed = Vec::new();
    let mut overall: f64 = 0.0;
    for slot in 0..base.len() {
        let numel = base.value_at(slot).numel();
        let ad = base.grad_at(slot).data().to_vec();
        let mut worst: f64 = 0.0;
        for elem in 0..numel {
            let mut plus = store.clone();
            plus.perturb(slot, elem, h);
            let lp = eval(&plus)?;
            let mut minus = store.clone();
            minus.perturb(slot, elem, -h);
            let lm = eval(&minus)?;
            let fd = (lp - lm) / (2.0 * h);
            let denom = ad[elem].abs().max(fd.abs()).max(REL_ERR_FLOOR);
            worst = worst.max((ad[elem] - fd).abs() / denom);
        }
        overall = overall.max(worst);
        if worst > tol {
            failed.push(base.name_at(slot).to_string());
        }
        slots.push(SlotReport {
            name: base.name_at(slot).to_string(),
            max_rel_err: worst,
        });
    }
    Ok(GradCheckReport {
        slots,
        max_rel_err: overall,
        failed,
    })
}
