//! Innovation-based adaptation of the measurement noise covariance.
//!
//! The mismatch between the filter's theoretical innovation covariance and
//! the covariance actually observed over a moving window (DOM) and its first
//! difference feed one two-input neuro-fuzzy network per measurement channel.
//! Each network outputs an additive correction to its diagonal entry of R and
//! is trained online by backpropagation.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SlamError};
use crate::types::{Mat2, Vec2};

pub const TERMS: usize = 5;
pub const RULES: usize = TERMS * TERMS;

/// Minimum membership width after a training step.
pub const MIN_WIDTH: f64 = 1e-6;

/// Consequent label (1..=7) for each (DOM term, ΔDOM term) pair, terms
/// ordered L, LM, Z, HM, H. Large positive DOM maps to label 1, the
/// strongest decrease.
pub const RULE_TABLE: [[u8; TERMS]; TERMS] =
    [[7, 7, 6, 5, 4], [7, 6, 5, 4, 3], [6, 5, 4, 3, 2], [5, 4, 3, 2, 1], [4, 3, 2, 1, 1]];

/// Value of consequent label `s` for scale `kappa`: S1 = -3κ … S7 = +3κ.
pub fn label_value(s: u8, kappa: f64) -> f64 {
    (s as f64 - 4.0) * kappa
}

/// Sample covariance of a window of innovations, `(1/N) Σ r rᵀ`.
pub fn actual_innovation_cov(window: &[Vec2]) -> Result<Mat2> {
    if window.is_empty() {
        return Err(SlamError::Precondition("empty innovation window".into()));
    }
    let sum = window.iter().fold(Mat2::zeros(), |acc, r| acc + r * r.transpose());
    Ok(sum / window.len() as f64)
}

/// Diagonal degree of mismatch and its first difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DomPair {
    pub dom: Vec2,
    pub ddom: Vec2,
}

pub fn compute_dom(s_theoretical: &Mat2, c_actual: &Mat2, dom_prev: &Vec2) -> DomPair {
    let dom = (s_theoretical - c_actual).diagonal();
    DomPair { dom, ddom: dom - dom_prev }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnfisNet {
    /// Gaussian centers, `[input][term]` with input 0 = DOM, 1 = ΔDOM.
    pub mf_mean: [[f64; TERMS]; 2],
    pub mf_width: [[f64; TERMS]; 2],
    /// One singleton per rule, row-major over (DOM term, ΔDOM term).
    pub consequents: [f64; RULES],
    pub learning_rate: f64,
}

/// Intermediate activations of a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub inputs: [f64; 2],
    pub membership: [[f64; TERMS]; 2],
    pub firing: [f64; RULES],
    pub firing_sum: f64,
    pub normalized: [f64; RULES],
    pub output: f64,
}

/// Partial derivatives of the network output with respect to every
/// trainable parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputGradient {
    pub mf_mean: [[f64; TERMS]; 2],
    pub mf_width: [[f64; TERMS]; 2],
    pub consequents: [f64; RULES],
}

#[inline]
fn rule_terms(l: usize) -> (usize, usize) {
    (l / TERMS, l % TERMS)
}

impl AnfisNet {
    /// Five evenly spaced terms per input over `[-span, span]`, widths equal
    /// to the center spacing, consequents from [`RULE_TABLE`] at scale `kappa`.
    pub fn with_rule_table(dom_span: f64, ddom_span: f64, kappa: f64, learning_rate: f64) -> Self {
        let grid = |span: f64| {
            let step = 2.0 * span / (TERMS - 1) as f64;
            (std::array::from_fn(|j| -span + step * j as f64), [step; TERMS])
        };
        let (m0, w0) = grid(dom_span);
        let (m1, w1) = grid(ddom_span);
        let consequents = std::array::from_fn(|l| {
            let (i, j) = rule_terms(l);
            label_value(RULE_TABLE[i][j], kappa)
        });
        AnfisNet { mf_mean: [m0, m1], mf_width: [w0, w1], consequents, learning_rate }
    }

    pub fn validate(&self) -> Result<()> {
        let widths_ok = self.mf_width.iter().flatten().all(|w| w.is_finite() && *w > 0.0);
        if widths_ok && self.learning_rate > 0.0 {
            Ok(())
        } else {
            Err(SlamError::Config("ANFIS widths and learning rate must be positive".into()))
        }
    }

    pub fn forward(&self, dom: f64, ddom: f64) -> Result<ForwardTrace> {
        if !dom.is_finite() || !ddom.is_finite() {
            return Err(SlamError::NonFinite("ANFIS input"));
        }
        let inputs = [dom, ddom];
        let membership: [[f64; TERMS]; 2] = std::array::from_fn(|i| {
            std::array::from_fn(|j| {
                let d = inputs[i] - self.mf_mean[i][j];
                (-(d * d) / (self.mf_width[i][j] * self.mf_width[i][j])).exp()
            })
        });
        let firing: [f64; RULES] = std::array::from_fn(|l| {
            let (i, j) = rule_terms(l);
            membership[0][i] * membership[1][j]
        });
        let firing_sum: f64 = firing.iter().sum();
        if !(firing_sum > f64::MIN_POSITIVE) {
            return Err(SlamError::DegenerateActivation);
        }
        let normalized = firing.map(|f| f / firing_sum);
        let output = normalized.iter().zip(&self.consequents).map(|(n, w)| n * w).sum();
        Ok(ForwardTrace { inputs, membership, firing, firing_sum, normalized, output })
    }

    /// Chain rule through the trace: `∂y/∂w_l = n_l`, `∂y/∂f_l = (w_l - y)/Σf`,
    /// then through the product rule nodes into each Gaussian.
    pub fn output_gradient(&self, t: &ForwardTrace) -> OutputGradient {
        let d_firing: [f64; RULES] = std::array::from_fn(|l| (self.consequents[l] - t.output) / t.firing_sum);
        let mut d_mu = [[0.0; TERMS]; 2];
        for (l, df) in d_firing.iter().enumerate() {
            let (i, j) = rule_terms(l);
            d_mu[0][i] += df * t.membership[1][j];
            d_mu[1][j] += df * t.membership[0][i];
        }
        let mut mf_mean = [[0.0; TERMS]; 2];
        let mut mf_width = [[0.0; TERMS]; 2];
        for k in 0..2 {
            for j in 0..TERMS {
                let mu = t.membership[k][j];
                let d = t.inputs[k] - self.mf_mean[k][j];
                let w = self.mf_width[k][j];
                mf_mean[k][j] = d_mu[k][j] * mu * 2.0 * d / (w * w);
                mf_width[k][j] = d_mu[k][j] * mu * 2.0 * d * d / (w * w * w);
            }
        }
        OutputGradient { mf_mean, mf_width, consequents: t.normalized }
    }

    /// One steepest-descent step on `E = e²/2` with `∂E/∂W = -e ∂y/∂W`.
    pub fn train_step(&self, dom: f64, ddom: f64, error: f64) -> Result<AnfisNet> {
        let trace = self.forward(dom, ddom)?;
        Ok(self.apply_gradient(&self.output_gradient(&trace), error))
    }

    fn apply_gradient(&self, g: &OutputGradient, error: f64) -> AnfisNet {
        let step = self.learning_rate * error;
        let mut next = self.clone();
        for k in 0..2 {
            for j in 0..TERMS {
                next.mf_mean[k][j] += step * g.mf_mean[k][j];
                next.mf_width[k][j] = (next.mf_width[k][j] + step * g.mf_width[k][j]).max(MIN_WIDTH);
            }
        }
        for (w, n) in next.consequents.iter_mut().zip(&g.consequents) {
            *w += step * n;
        }
        next
    }

    fn input_range(&self, k: usize) -> (f64, f64) {
        let lo = self.mf_mean[k].iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.mf_mean[k].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnfisConfig {
    pub window: usize,
    pub learning_rate: f64,
    /// Lower bounds on the adapted (range, bearing) variances.
    pub r_floor: [f64; 2],
    /// κ as a fraction of the initial variance of each channel.
    pub consequent_scale: f64,
    /// Membership span for DOM and ΔDOM as a multiple of the initial
    /// variance; an innovation covariance right after landmark
    /// initialization is roughly twice R.
    pub span_factor: f64,
}

impl Default for AnfisConfig {
    fn default() -> Self {
        AnfisConfig { window: 15, learning_rate: 1e-4, r_floor: [1e-4, 1e-7], consequent_scale: 0.02, span_factor: 2.0 }
    }
}

/// Diagnostics from the most recent adaptation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaptationRecord {
    pub dom: DomPair,
    pub delta_r: Vec2,
    /// A channel's rule base did not fire and was left untouched.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveR {
    /// Range and bearing channel networks.
    pub nets: [AnfisNet; 2],
    window: VecDeque<(Vec2, Mat2)>,
    capacity: usize,
    r_current: Mat2,
    dom_prev: Option<Vec2>,
    r_floor: [f64; 2],
    last: Option<AdaptationRecord>,
}

impl AdaptiveR {
    pub fn new(r_initial: &Mat2, cfg: &AnfisConfig) -> Result<Self> {
        if cfg.window == 0 || !(cfg.learning_rate > 0.0) || cfg.r_floor.iter().any(|f| !(*f > 0.0)) {
            return Err(SlamError::Config(format!("invalid adaptation settings: {cfg:?}")));
        }
        let nets = std::array::from_fn(|i| {
            let r0 = r_initial[(i, i)];
            let span = cfg.span_factor * r0;
            AnfisNet::with_rule_table(span, span, cfg.consequent_scale * r0, cfg.learning_rate)
        });
        for n in &nets {
            n.validate()?;
        }
        let diag = Vec2::new(r_initial[(0, 0)].max(cfg.r_floor[0]), r_initial[(1, 1)].max(cfg.r_floor[1]));
        Ok(AdaptiveR {
            nets,
            window: VecDeque::with_capacity(cfg.window),
            capacity: cfg.window,
            r_current: Mat2::from_diagonal(&diag),
            dom_prev: None,
            r_floor: cfg.r_floor,
            last: None,
        })
    }

    pub fn r_current(&self) -> Mat2 {
        self.r_current
    }

    pub fn window_len(&self) -> usize {
        self.window.len()
    }

    pub fn last_adaptation(&self) -> Option<&AdaptationRecord> {
        self.last.as_ref()
    }

    fn push(&mut self, innovation: Vec2, s: Mat2) {
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back((innovation, s));
    }

    /// Feeds one innovation with its theoretical covariance and adapts R once
    /// the window is full.
    pub fn adapt(&mut self, innovation: Vec2, s_theoretical: &Mat2) -> Result<Option<AdaptationRecord>> {
        self.adapt_epoch(&[(innovation, *s_theoretical)])
    }

    /// Feeds all innovations of one scan, then performs at most one adaptation.
    pub fn adapt_epoch(&mut self, samples: &[(Vec2, Mat2)]) -> Result<Option<AdaptationRecord>> {
        for (nu, s) in samples {
            if !nu.iter().chain(s.iter()).all(|v| v.is_finite()) {
                return Err(SlamError::NonFinite("innovation"));
            }
            self.push(*nu, *s);
        }
        if self.window.len() < self.capacity || samples.is_empty() {
            return Ok(None);
        }
        let residuals: Vec<Vec2> = self.window.iter().map(|(r, _)| *r).collect();
        let c_actual = actual_innovation_cov(&residuals)?;
        let s_mean = self.window.iter().fold(Mat2::zeros(), |acc, (_, s)| acc + s) / self.window.len() as f64;
        let dom = compute_dom(&s_mean, &c_actual, &self.dom_prev.unwrap_or_else(|| (s_mean - c_actual).diagonal()));

        let mut delta_r = Vec2::zeros();
        let mut degenerate = false;
        for i in 0..2 {
            let net = &self.nets[i];
            // saturate at the outermost terms so large mismatches keep firing
            let (lo0, hi0) = net.input_range(0);
            let (lo1, hi1) = net.input_range(1);
            let u0 = dom.dom[i].clamp(lo0, hi0);
            let u1 = dom.ddom[i].clamp(lo1, hi1);
            let trace = match net.forward(u0, u1) {
                Ok(t) => t,
                // skip this channel for the epoch; the record reports a zero step
                Err(SlamError::DegenerateActivation) => {
                    degenerate = true;
                    continue;
                }
                Err(e) => return Err(e),
            };
            delta_r[i] = trace.output;
            let updated = (self.r_current[(i, i)] + trace.output).max(self.r_floor[i]);
            self.r_current[(i, i)] = updated;
            // BP error e = DOM per channel; with a small learning rate the
            // consequents drift slowly and Table 1 does most of the work
            let g = net.output_gradient(&trace);
            self.nets[i] = net.apply_gradient(&g, dom.dom[i]);
        }
        self.dom_prev = Some(dom.dom);
        let rec = AdaptationRecord { dom, delta_r, degenerate };
        self.last = Some(rec);
        Ok(Some(rec))
    }
}
