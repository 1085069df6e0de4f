//! Two interleaved spirals classified by a 2 → 24 → 24 → 1 tanh MLP with a
//! sigmoid output and binary cross-entropy, backpropagated by hand.

use std::io::Write;
use std::sync::Arc;

use super::{MetricKind, Problem};
use crate::error::{Error, Result};
use crate::param_space::{Layout, ParamVector, Rng};

pub const HIDDEN: usize = 24;
const NOISE_STD: f64 = 0.02;
/// Outer radius of the spirals in input coordinates.
pub const SPIRAL_RADIUS: f64 = 4.0;

#[derive(Debug, Clone)]
pub struct SpiralDataset {
    pub points: Vec<[f64; 2]>,
    /// 0.0 or 1.0.
    pub labels: Vec<f64>,
}

impl SpiralDataset {
    /// `n` points, half per class, along Archimedean spirals that wind
    /// `rotation_deg` degrees from the centre to `SPIRAL_RADIUS`; the second
    /// class is the first rotated by π. Coordinates get N(0, 0.02²) noise.
    pub fn generate(n: usize, rotation_deg: f64, rng: &mut Rng) -> Self {
        let per_class = n / 2;
        let turn = rotation_deg.to_radians();
        let mut points = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for class in 0..2 {
            let count = if class == 0 { per_class } else { n - per_class };
            for i in 0..count {
                let s = (i as f64 + 0.5) / count as f64;
                let angle = s * turn + class as f64 * std::f64::consts::PI;
                let radius = s * SPIRAL_RADIUS;
                points.push([
                    radius * angle.cos() + rng.normal(0.0, NOISE_STD),
                    radius * angle.sin() + rng.normal(0.0, NOISE_STD),
                ]);
                labels.push(class as f64);
            }
        }
        SpiralDataset { points, labels }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

#[derive(Debug, Clone)]
pub struct TwoSpirals {
    data: SpiralDataset,
    rotation_deg: f64,
    seed: u64,
    layout: Arc<Layout>,
}

struct Weights<'a> {
    w1: &'a [f64],
    b1: &'a [f64],
    w2: &'a [f64],
    b2: &'a [f64],
    w3: &'a [f64],
    b3: f64,
}

impl TwoSpirals {
    pub fn new(n: usize, rotation_deg: f64, seed: u64) -> Self {
        let data = SpiralDataset::generate(n, rotation_deg, &mut Rng::stream(seed, 0));
        Self::from_dataset(data, rotation_deg, seed)
    }

    pub fn from_dataset(data: SpiralDataset, rotation_deg: f64, seed: u64) -> Self {
        let h = HIDDEN;
        let layout = Arc::new(Layout::new([
            ("w1", h * 2),
            ("b1", h),
            ("w2", h * h),
            ("b2", h),
            ("w3", h),
            ("b3", 1),
        ]));
        TwoSpirals {
            data,
            rotation_deg,
            seed,
            layout,
        }
    }

    pub fn dataset(&self) -> &SpiralDataset {
        &self.data
    }

    fn weights<'a>(&self, theta: &'a ParamVector) -> Weights<'a> {
        let seg = |name: &str| theta.segment(name).expect("spiral layout");
        Weights {
            w1: seg("w1"),
            b1: seg("b1"),
            w2: seg("w2"),
            b2: seg("b2"),
            w3: seg("w3"),
            b3: seg("b3")[0],
        }
    }

    fn forward(w: &Weights<'_>, x: [f64; 2], h1: &mut [f64], h2: &mut [f64]) -> f64 {
        for (j, h) in h1.iter_mut().enumerate() {
            *h = (w.w1[2 * j] * x[0] + w.w1[2 * j + 1] * x[1] + w.b1[j]).tanh();
        }
        for (j, h) in h2.iter_mut().enumerate() {
            let row = &w.w2[j * HIDDEN..(j + 1) * HIDDEN];
            let pre: f64 = row.iter().zip(h1.iter()).map(|(a, b)| a * b).sum();
            *h = (pre + w.b2[j]).tanh();
        }
        w.w3.iter().zip(h2.iter()).map(|(a, b)| a * b).sum::<f64>() + w.b3
    }

    /// Output logits for every data point.
    pub fn logits(&self, theta: &ParamVector) -> Vec<f64> {
        let w = self.weights(theta);
        let mut h1 = [0.0; HIDDEN];
        let mut h2 = [0.0; HIDDEN];
        self.data
            .points
            .iter()
            .map(|&x| Self::forward(&w, x, &mut h1, &mut h2))
            .collect()
    }

    /// Fraction of points with `sigmoid(z) > 0.5` matching the label.
    pub fn accuracy(&self, theta: &ParamVector) -> f64 {
        let correct = self
            .logits(theta)
            .iter()
            .zip(&self.data.labels)
            .filter(|(&z, &y)| (z > 0.0) == (y > 0.5))
            .count();
        correct as f64 / self.data.len() as f64
    }

    pub fn write_dataset_csv(&self, out: &mut dyn Write) -> Result<()> {
        let io = |e| Error::io("<export>", e);
        writeln!(
            out,
            "# problem=two_spirals n={} rotation_deg={} seed={}",
            self.data.len(),
            self.rotation_deg,
            self.seed
        )
        .map_err(io)?;
        writeln!(out, "x,y,label").map_err(io)?;
        for (p, l) in self.data.points.iter().zip(&self.data.labels) {
            writeln!(out, "{},{},{}", p[0], p[1], l).map_err(io)?;
        }
        Ok(())
    }
}

impl Problem for TwoSpirals {
    fn name(&self) -> &str {
        "two_spirals"
    }

    fn layout(&self) -> Arc<Layout> {
        Arc::clone(&self.layout)
    }

    /// Uniform(±1/√fan_in) for every weight and bias.
    fn init(&self, rng: &mut Rng) -> ParamVector {
        let mut theta = ParamVector::with_layout(vec![0.0; self.layout.len()], self.layout())
            .expect("layout length");
        for (name, fan_in) in [
            ("w1", 2),
            ("b1", 2),
            ("w2", HIDDEN),
            ("b2", HIDDEN),
            ("w3", HIDDEN),
            ("b3", HIDDEN),
        ] {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in theta.segment_mut(name).expect("spiral layout") {
                *v = rng.uniform_range(-bound, bound);
            }
        }
        theta
    }

    fn loss_grad(&self, theta: &ParamVector) -> (f64, ParamVector) {
        let w = self.weights(theta);
        let n = self.data.len() as f64;
        let mut grad = theta.zeros_like();
        let offset = |name: &str| self.layout.segment(name).expect("spiral layout").offset;
        let (o_w1, o_b1, o_w2, o_b2, o_w3, o_b3) = (
            offset("w1"),
            offset("b1"),
            offset("w2"),
            offset("b2"),
            offset("w3"),
            offset("b3"),
        );
        let g = grad.as_mut_slice();
        let mut h1 = [0.0; HIDDEN];
        let mut h2 = [0.0; HIDDEN];
        let mut d2 = [0.0; HIDDEN];
        let mut d1 = [0.0; HIDDEN];
        let mut loss = 0.0;
        for (&x, &y) in self.data.points.iter().zip(&self.data.labels) {
            let z = Self::forward(&w, x, &mut h1, &mut h2);
            loss += softplus(z) - y * z;
            let dz = (sigmoid(z) - y) / n;
            g[o_b3] += dz;
            for j in 0..HIDDEN {
                g[o_w3 + j] += dz * h2[j];
                d2[j] = dz * w.w3[j] * (1.0 - h2[j] * h2[j]);
            }
            d1.iter_mut().for_each(|d| *d = 0.0);
            for j in 0..HIDDEN {
                g[o_b2 + j] += d2[j];
                let row = &mut g[o_w2 + j * HIDDEN..o_w2 + (j + 1) * HIDDEN];
                for k in 0..HIDDEN {
                    row[k] += d2[j] * h1[k];
                    d1[k] += d2[j] * w.w2[j * HIDDEN + k];
                }
            }
            for k in 0..HIDDEN {
                let dk = d1[k] * (1.0 - h1[k] * h1[k]);
                g[o_b1 + k] += dk;
                g[o_w1 + 2 * k] += dk * x[0];
                g[o_w1 + 2 * k + 1] += dk * x[1];
            }
        }
        (loss / n, grad)
    }

    fn loss(&self, theta: &ParamVector) -> f64 {
        let n = self.data.len() as f64;
        self.logits(theta)
            .iter()
            .zip(&self.data.labels)
            .map(|(&z, &y)| softplus(z) - y * z)
            .sum::<f64>()
            / n
    }

    fn test_metric(&self, theta: &ParamVector) -> Option<f64> {
        Some(self.accuracy(theta))
    }

    fn metric_name(&self) -> &str {
        "accuracy"
    }

    fn metric_kind(&self) -> MetricKind {
        MetricKind::HigherIsBetter
    }

    fn metadata(&self) -> Vec<(String, String)> {
        vec![
            ("n".into(), self.data.len().to_string()),
            ("rotation_deg".into(), self.rotation_deg.to_string()),
            ("hidden".into(), HIDDEN.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }

    fn export_csv(&self, out: &mut dyn Write) -> Result<bool> {
        self.write_dataset_csv(out)?;
        Ok(true)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::testutil::{all_coords, max_fd_rel_error};

    #[test]
    fn zero_network_outputs_half() {
        let p = TwoSpirals::new(1000, 1200.0, 1);
        let zero = ParamVector::with_layout(vec![0.0; p.dim()], p.layout()).unwrap();
        let loss = p.loss(&zero);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((p.loss_grad(&zero).0 - loss).abs() < 1e-12);
        // z = 0 predicts class 0 everywhere: accuracy is the class-0 share.
        assert!((p.accuracy(&zero) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dataset_shape() {
        let d = SpiralDataset::generate(1000, 1200.0, &mut Rng::new(0));
        assert_eq!(d.len(), 1000);
        assert_eq!(d.labels.iter().filter(|&&l| l == 1.0).count(), 500);
        let max_r = d
            .points
            .iter()
            .map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt())
            .fold(0.0, f64::max);
        assert!(max_r < SPIRAL_RADIUS + 0.1);
    }

    #[test]
    fn backprop_matches_finite_differences() {
        let full = TwoSpirals::new(1000, 1200.0, 3);
        let subset = SpiralDataset {
            points: full.dataset().points.iter().step_by(100).copied().collect(),
            labels: full.dataset().labels.iter().step_by(100).copied().collect(),
        };
        assert_eq!(subset.len(), 10);
        let p = TwoSpirals::from_dataset(subset, 1200.0, 3);
        let theta = p.init(&mut Rng::new(8));
        let err = max_fd_rel_error(&p, &theta, &all_coords(&p));
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn init_within_fan_in_bounds() {
        let p = TwoSpirals::new(100, 1200.0, 0);
        let theta = p.init(&mut Rng::new(1));
        assert!(theta
            .segment("w1")
            .unwrap()
            .iter()
            .all(|v| v.abs() <= 1.0 / 2f64.sqrt()));
        assert!(theta
            .segment("w2")
            .unwrap()
            .iter()
            .all(|v| v.abs() <= 1.0 / 24f64.sqrt()));
    }
}
