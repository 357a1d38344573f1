//! Uniform sampling of the truncated state domain, with rejection of
//! lifted-Heston states whose total variance is negative.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{LiftedHestonSpec, ModelSpec};

/// Rectangular sampling box and batch sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct SamplingDomain {
    pub moneyness: [f64; 2],
    /// One range per variance coordinate; empty for Black–Scholes.
    pub variance: Vec<[f64; 2]>,
    pub samples_per_dim: usize,
    /// Points per boundary face for the flux term (faces are single points
    /// in one dimension).
    pub face_samples: usize,
}

/// `M` interior states as rows of a `[M × d]` array.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub points: Array2<f64>,
    /// `|Ω|`: the box volume times the fraction of draws accepted, which is
    /// the box volume itself whenever nothing is rejected.
    pub volume: f64,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples on one face `{x_axis = bound}` of the box.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceBatch {
    pub axis: usize,
    /// +1 on the upper face, −1 on the lower.
    pub normal: f64,
    /// Admissible points only; rejected candidates are dropped, not redrawn.
    pub points: Array2<f64>,
    /// Quadrature weight of each point: face measure over the number of
    /// candidates drawn.
    pub weight: f64,
}

/// Half-width of the symmetric range of lifted factor `i`: three standard
/// deviations of the factor's Ornstein–Uhlenbeck approximation at `T`.
pub fn variance_bound(spec: &LiftedHestonSpec, i: usize, maturity: f64) -> f64 {
    let g = spec.gamma[i];
    let var = if g == 0.0 {
        spec.eta * spec.eta * spec.v0 * maturity
    } else {
        spec.eta * spec.eta * spec.v0 / (2.0 * g) * -(-2.0 * g * maturity).exp_m1()
    };
    3.0 * var.max(0.0).sqrt()
}

const STARVATION_WINDOW: u64 = 1_000_000;
const STARVATION_RATE: f64 = 1e-3;

impl SamplingDomain {
    /// Default box for `model`: moneyness `[0.01, 3]`, Heston variance
    /// `[0.001, 0.1]`, lifted factors `±variance_bound`.
    pub fn for_model(model: &ModelSpec, maturity: f64) -> Self {
        let variance = match model {
            ModelSpec::BlackScholes(_) => vec![],
            ModelSpec::Heston(_) => vec![[0.001, 0.1]],
            ModelSpec::LiftedHeston(s) => (0..s.factors())
                .map(|i| {
                    let b = variance_bound(s, i, maturity);
                    [-b, b]
                })
                .collect(),
        };
        Self {
            moneyness: [0.01, 3.0],
            variance,
            samples_per_dim: 600,
            face_samples: 100,
        }
    }

    pub fn dim(&self) -> usize {
        1 + self.variance.len()
    }

    pub fn ranges(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        std::iter::once(self.moneyness).chain(self.variance.iter().copied())
    }

    pub fn volume(&self) -> f64 {
        self.ranges().map(|[lo, hi]| hi - lo).product()
    }

    pub fn batch_size(&self) -> usize {
        self.samples_per_dim * self.dim()
    }

    pub fn validate(&self, model: &ModelSpec) -> Result<()> {
        if self.dim() != model.dim() {
            return Err(Error::Config(format!(
                "sampling box has {} coordinates but the {} model has {}",
                self.dim(),
                model.name(),
                model.dim()
            )));
        }
        if !(self.moneyness[0] > 0.0) {
            return Err(Error::Config(format!("moneyness lower bound {} must be positive", self.moneyness[0])));
        }
        if let Some([lo, hi]) = self.ranges().find(|[lo, hi]| !(hi > lo) || !lo.is_finite() || !hi.is_finite()) {
            return Err(Error::Config(format!("degenerate sampling range [{lo}, {hi}]")));
        }
        if self.samples_per_dim == 0 {
            return Err(Error::Config("samples_per_dim must be positive".into()));
        }
        if let ModelSpec::Heston(_) = model {
            if self.variance[0][0] < 0.0 {
                return Err(Error::Config("heston variance range must be non-negative".into()));
            }
        }
        Ok(())
    }
}

/// Draws states uniformly from the box, rejecting inadmissible ones.
struct Drawer<'a> {
    domain: &'a SamplingDomain,
    lifted: Option<&'a LiftedHestonSpec>,
    tau: f64,
    drawn: u64,
    accepted: u64,
}

impl<'a> Drawer<'a> {
    fn new(domain: &'a SamplingDomain, model: &'a ModelSpec, tau: f64) -> Self {
        let lifted = match model {
            ModelSpec::LiftedHeston(s) => Some(s),
            _ => None,
        };
        Self {
            domain,
            lifted,
            tau,
            drawn: 0,
            accepted: 0,
        }
    }

    fn admissible(&self, row: &[f64]) -> bool {
        match self.lifted {
            Some(s) => s.v_tilde(self.tau, &row[1..]) >= 0.0,
            None => true,
        }
    }

    /// Fills `row` with a uniform draw, holding `fixed = (axis, value)` if
    /// given, and reports whether it is admissible.
    fn draw_once<R: Rng>(&mut self, rng: &mut R, row: &mut [f64], fixed: Option<(usize, f64)>) -> bool {
        for (x, [lo, hi]) in row.iter_mut().zip(self.domain.ranges()) {
            *x = rng.random_range(lo..hi);
        }
        if let Some((axis, v)) = fixed {
            row[axis] = v;
        }
        self.drawn += 1;
        let ok = self.admissible(row);
        self.accepted += ok as u64;
        ok
    }

    /// Draws until `row` holds an admissible state.
    fn draw<R: Rng>(&mut self, rng: &mut R, row: &mut [f64]) -> Result<()> {
        while !self.draw_once(rng, row, None) {
            if self.drawn.is_multiple_of(STARVATION_WINDOW) && (self.accepted as f64) < STARVATION_RATE * self.drawn as f64 {
                return Err(Error::SamplingStarvation {
                    accepted: self.accepted,
                    drawn: self.drawn,
                });
            }
        }
        Ok(())
    }
}

/// Interior batch of `samples_per_dim · d` admissible points at time to
/// maturity `tau`. Rejected draws are replaced so the batch is always full.
pub fn sample_batch<R: Rng>(domain: &SamplingDomain, model: &ModelSpec, tau: f64, rng: &mut R) -> Result<SampleBatch> {
    let d = domain.dim();
    let m = domain.batch_size();
    let mut points = Array2::zeros((m, d));
    let mut drawer = Drawer::new(domain, model, tau);
    for mut row in points.rows_mut() {
        drawer.draw(rng, row.as_slice_mut().expect("row-major"))?;
    }
    Ok(SampleBatch {
        points,
        volume: domain.volume() * drawer.accepted as f64 / drawer.drawn as f64,
    })
}

/// Points on each of the `2d` faces of the box, in order
/// `(axis 0 lower, axis 0 upper, axis 1 lower, …)`. Each face gets a fixed
/// number of uniform candidates; inadmissible ones are dropped so the
/// weighted sum estimates the integral over the admissible part of the face.
pub fn sample_faces<R: Rng>(domain: &SamplingDomain, model: &ModelSpec, tau: f64, rng: &mut R) -> Vec<FaceBatch> {
    let d = domain.dim();
    let per_face = if d == 1 { 1 } else { domain.face_samples };
    let ranges: Vec<[f64; 2]> = domain.ranges().collect();
    let mut faces = Vec::with_capacity(2 * d);
    if per_face == 0 {
        return faces;
    }
    let mut drawer = Drawer::new(domain, model, tau);
    for axis in 0..d {
        let measure: f64 = ranges
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != axis)
            .map(|(_, [lo, hi])| hi - lo)
            .product();
        for (normal, bound) in [(-1.0, ranges[axis][0]), (1.0, ranges[axis][1])] {
            let mut kept = Vec::with_capacity(per_face * d);
            let mut row = vec![0.0; d];
            for _ in 0..per_face {
                if drawer.draw_once(rng, &mut row, Some((axis, bound))) {
                    kept.extend_from_slice(&row);
                }
            }
            let points = Array2::from_shape_vec((kept.len() / d, d), kept).expect("face rows");
            faces.push(FaceBatch {
                axis,
                normal,
                points,
                weight: measure / per_face as f64,
            });
        }
    }
    faces
}

/// Generator for step `k`. Streams are disjoint across steps and purposes,
/// so any step can be re-run in isolation.
pub fn step_rng(seed: u64, step: usize, purpose: RngPurpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose as u64);
    rng.set_stream(step as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum RngPurpose {
    Training = 0,
    Validation = 0x9e37_79b9_7f4a_7c15,
    Initialization = 0xbf58_476d_1ce4_e5b9,
}
