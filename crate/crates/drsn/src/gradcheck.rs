//! Finite-difference verification of every backward pass.
//!
//! Each check compares an analytic gradient against central differences of
//! the corresponding forward map (step 1e-5 unless noted) and reports the
//! maximum relative error. Everything here runs at 64-bit precision.

use crate::deform::{
    bilinear_sample, bilinear_sample_grad, deform_conv2d_backward, deform_conv2d_forward,
    FractionalLoc, OffsetField,
};
use crate::model::{
    euclidean_loss, euclidean_loss_backward, NetworkConfig, SegNetwork,
};
use crate::nn::{conv2d_backward, conv2d_forward, ConvLayer};
use crate::rng::SplitMix64;
use crate::tensor::Tensor4;

pub const FD_STEP: f64 = 1e-5;

/// Outcome of one named check.
#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn pass(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }
}

/// `|a - b|` relative to the larger magnitude, floored so that near-zero
/// pairs compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

fn random_tensor(n: usize, c: usize, h: usize, w: usize, rng: &mut SplitMix64) -> Tensor4 {
    Tensor4::from_vec(n, c, h, w, (0..n * c * h * w).map(|_| rng.uniform(-1.0, 1.0)).collect())
        .unwrap()
}

/// Offsets whose fractional parts stay in [0.1, 0.4] or [0.6, 0.9], away
/// from the sampling kernel's kinks.
fn safe_offsets(n: usize, kh: usize, kw: usize, h: usize, w: usize, rng: &mut SplitMix64) -> OffsetField {
    let data = (0..n * 2 * kh * kw * h * w)
        .map(|_| {
            let mag = rng.uniform(0.1, 0.4);
            if rng.chance(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect();
    OffsetField::new(Tensor4::from_vec(n, 2 * kh * kw, h, w, data).unwrap(), kh, kw).unwrap()
}

/// Perturbs `values[i]`, evaluates `f`, and restores.
fn central_diff(values: &mut [f64], i: usize, f: &mut dyn FnMut(&[f64]) -> f64) -> f64 {
    let orig = values[i];
    values[i] = orig + FD_STEP;
    let hi = f(values);
    values[i] = orig - FD_STEP;
    let lo = f(values);
    values[i] = orig;
    (hi - lo) / (2.0 * FD_STEP)
}

struct ConvFixture {
    x: Tensor4,
    layer: ConvLayer,
    projection: Tensor4,
    offsets: Option<OffsetField>,
}

impl ConvFixture {
    fn new(seed: u64, deform: bool) -> ConvFixture {
        let mut rng = SplitMix64::new(seed);
        let x = random_tensor(1, 2, 6, 6, &mut rng);
        let mut layer = ConvLayer::glorot(2, 2, 3, 3, &mut rng).unwrap();
        for b in layer.bias.iter_mut() {
            *b = rng.uniform(-0.5, 0.5);
        }
        let projection = random_tensor(1, 2, 6, 6, &mut rng);
        let offsets = deform.then(|| safe_offsets(1, 3, 3, 6, 6, &mut rng));
        ConvFixture {
            x,
            layer,
            projection,
            offsets,
        }
    }

    /// Scalar objective: the forward output contracted with a fixed
    /// random projection.
    fn objective(&self, x: &Tensor4, layer: &ConvLayer) -> f64 {
        let y = match &self.offsets {
            Some(o) => deform_conv2d_forward(x, layer, o).unwrap(),
            None => conv2d_forward(x, layer).unwrap(),
        };
        y.data()
            .iter()
            .zip(self.projection.data())
            .map(|(a, b)| a * b)
            .sum()
    }

    /// Analytic gradients (dx, dweights, dbias, doffsets) via backward with
    /// dy = projection.
    fn analytic(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut layer = self.layer.clone();
        match &self.offsets {
            Some(o) => {
                let (dx, doff) =
                    deform_conv2d_backward(&self.x, &mut layer, o, &self.projection).unwrap();
                (
                    dx.data().to_vec(),
                    layer.grad_weights.clone(),
                    layer.grad_bias.clone(),
                    doff.tensor().data().to_vec(),
                )
            }
            None => {
                let dx = conv2d_backward(&self.x, &mut layer, &self.projection).unwrap();
                (
                    dx.data().to_vec(),
                    layer.grad_weights.clone(),
                    layer.grad_bias.clone(),
                    Vec::new(),
                )
            }
        }
    }

    fn numeric_dx(&self) -> Vec<f64> {
        let mut vals = self.x.data().to_vec();
        let shape = self.x.shape();
        (0..vals.len())
            .map(|i| {
                central_diff(&mut vals, i, &mut |v| {
                    let x = Tensor4::from_vec(shape.0, shape.1, shape.2, shape.3, v.to_vec())
                        .unwrap();
                    self.objective(&x, &self.layer)
                })
            })
            .collect()
    }

    fn numeric_dw(&self) -> Vec<f64> {
        let mut layer = self.layer.clone();
        let mut vals = layer.weights.clone();
        (0..vals.len())
            .map(|i| {
                central_diff(&mut vals, i, &mut |v| {
                    layer.weights.copy_from_slice(v);
                    self.objective(&self.x, &layer)
                })
            })
            .collect()
    }

    fn numeric_db(&self) -> Vec<f64> {
        let mut layer = self.layer.clone();
        let mut vals = layer.bias.clone();
        (0..vals.len())
            .map(|i| {
                central_diff(&mut vals, i, &mut |v| {
                    layer.bias.copy_from_slice(v);
                    self.objective(&self.x, &layer)
                })
            })
            .collect()
    }

    fn numeric_doffsets(&self) -> Vec<f64> {
        let offsets = self.offsets.as_ref().unwrap();
        let t = offsets.tensor();
        let shape = t.shape();
        let mut vals = t.data().to_vec();
        (0..vals.len())
            .map(|i| {
                central_diff(&mut vals, i, &mut |v| {
                    let field = OffsetField::new(
                        Tensor4::from_vec(shape.0, shape.1, shape.2, shape.3, v.to_vec())
                            .unwrap(),
                        offsets.kh(),
                        offsets.kw(),
                    )
                    .unwrap();
                    deform_conv2d_forward(&self.x, &self.layer, &field)
                        .unwrap()
                        .data()
                        .iter()
                        .zip(self.projection.data())
                        .map(|(a, b)| a * b)
                        .sum()
                })
            })
            .collect()
    }
}

fn check_conv(seed: u64, out: &mut Vec<CheckResult>) {
    let fix = ConvFixture::new(seed, false);
    let (dx, dw, db, _) = fix.analytic();
    out.push(CheckResult {
        name: "conv2d/dx",
        max_rel_err: max_rel_err(&dx, &fix.numeric_dx()),
        tolerance: 1e-4,
    });
    out.push(CheckResult {
        name: "conv2d/dweights",
        max_rel_err: max_rel_err(&dw, &fix.numeric_dw()),
        tolerance: 1e-4,
    });
    out.push(CheckResult {
        name: "conv2d/dbias",
        max_rel_err: max_rel_err(&db, &fix.numeric_db()),
        tolerance: 1e-4,
    });
}

fn check_deform(seed: u64, out: &mut Vec<CheckResult>) {
    let fix = ConvFixture::new(seed, true);
    let (dx, dw, db, doff) = fix.analytic();
    out.push(CheckResult {
        name: "deform_conv2d/dx",
        max_rel_err: max_rel_err(&dx, &fix.numeric_dx()),
        tolerance: 1e-4,
    });
    out.push(CheckResult {
        name: "deform_conv2d/dweights",
        max_rel_err: max_rel_err(&dw, &fix.numeric_dw()),
        tolerance: 1e-4,
    });
    out.push(CheckResult {
        name: "deform_conv2d/dbias",
        max_rel_err: max_rel_err(&db, &fix.numeric_db()),
        tolerance: 1e-4,
    });
    out.push(CheckResult {
        name: "deform_conv2d/doffsets",
        max_rel_err: max_rel_err(&doff, &fix.numeric_doffsets()),
        tolerance: 1e-4,
    });
}

fn check_bilinear(seed: u64, out: &mut Vec<CheckResult>) {
    let mut rng = SplitMix64::new(seed);
    let plane = random_tensor(1, 1, 6, 6, &mut rng);
    let view = plane.plane_view(0, 0);
    let mut worst = 0.0f64;
    for _ in 0..64 {
        let p = FractionalLoc::new(
            rng.int_in(0, 4) as f64 + rng.uniform(0.2, 0.8),
            rng.int_in(0, 4) as f64 + rng.uniform(0.2, 0.8),
        );
        let (_, (dr, dc)) = bilinear_sample_grad(view, p);
        let fdr = (bilinear_sample(view, FractionalLoc::new(p.row + FD_STEP, p.col))
            - bilinear_sample(view, FractionalLoc::new(p.row - FD_STEP, p.col)))
            / (2.0 * FD_STEP);
        let fdc = (bilinear_sample(view, FractionalLoc::new(p.row, p.col + FD_STEP))
            - bilinear_sample(view, FractionalLoc::new(p.row, p.col - FD_STEP)))
            / (2.0 * FD_STEP);
        worst = worst.max(rel_err(dr, fdr)).max(rel_err(dc, fdc));
    }
    out.push(CheckResult {
        name: "bilinear/dloc",
        max_rel_err: worst,
        tolerance: 1e-6,
    });
}

fn check_loss(seed: u64, out: &mut Vec<CheckResult>) {
    let mut rng = SplitMix64::new(seed);
    let pred = Tensor4::from_vec(1, 1, 4, 4, (0..16).map(|_| rng.uniform(0.2, 0.8)).collect())
        .unwrap();
    let target = Tensor4::from_vec(
        1,
        1,
        4,
        4,
        (0..16).map(|_| if rng.chance(0.5) { 1.0 } else { 0.0 }).collect(),
    )
    .unwrap();
    let analytic = euclidean_loss_backward(&pred, &target).unwrap();
    let mut vals = pred.data().to_vec();
    let numeric: Vec<f64> = (0..vals.len())
        .map(|i| {
            central_diff(&mut vals, i, &mut |v| {
                let p = Tensor4::from_vec(1, 1, 4, 4, v.to_vec()).unwrap();
                euclidean_loss(&p, &target).unwrap()
            })
        })
        .collect();
    out.push(CheckResult {
        name: "euclidean_loss/dpred",
        max_rel_err: max_rel_err(analytic.data(), &numeric),
        tolerance: 1e-6,
    });
}

/// Parameter names probed by the whole-network spot check, spanning
/// deformable weights, offset-layer weights and biases, standard conv
/// weights and biases, and projections.
const SPOT_PARAMS: [&str; 10] = [
    "block0.deform.weight",
    "block0.offset.weight",
    "block0.conv2.bias",
    "block0.project.weight",
    "block1.deform.weight",
    "block1.offset.bias",
    "block1.conv3.weight",
    "block2.conv2.weight",
    "recon.conv3.bias",
    "recon.project.weight",
];

fn check_network(seed: u64, out: &mut Vec<CheckResult>) {
    let mut rng = SplitMix64::new(seed);
    let mut net: SegNetwork =
        SegNetwork::new(NetworkConfig::default(), &mut rng).unwrap();
    // Nudge offset layers off their zero init so the deformable path is
    // exercised at fractional locations.
    net.visit_params_mut(|p| {
        if p.name.contains(".offset.") {
            for v in p.values.iter_mut() {
                *v = rng.uniform(-0.05, 0.05);
            }
        }
    });
    let x = Tensor4::from_vec(1, 1, 16, 16, (0..256).map(|_| rng.next_f64()).collect()).unwrap();
    let target = Tensor4::from_vec(
        1,
        1,
        16,
        16,
        (0..256).map(|_| if rng.chance(0.3) { 1.0 } else { 0.0 }).collect(),
    )
    .unwrap();

    net.zero_grads();
    let pred = net.forward(&x).unwrap();
    let dpred = euclidean_loss_backward(&pred, &target).unwrap();
    net.backward(&dpred).unwrap();

    let mut worst = 0.0f64;
    for (k, name) in SPOT_PARAMS.iter().enumerate() {
        let mut analytic = None;
        let mut index = 0usize;
        net.visit_params(|p| {
            if p.name == *name {
                index = (k * 131 + 17) % p.values.len();
                analytic = Some(p.grads[index]);
            }
        });
        let analytic = analytic.expect("spot parameter must exist");

        let mut eval = |delta: f64| -> f64 {
            net.visit_params_mut(|p| {
                if p.name == *name {
                    p.values[index] += delta;
                }
            });
            let y = net.infer(&x).unwrap();
            let loss = euclidean_loss(&y, &target).unwrap();
            net.visit_params_mut(|p| {
                if p.name == *name {
                    p.values[index] -= delta;
                }
            });
            loss
        };
        let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(analytic, numeric));
    }
    out.push(CheckResult {
        name: "network/param_spots",
        max_rel_err: worst,
        tolerance: 1e-3,
    });
}

/// Runs the full suite; deterministic in `seed`.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let mut out = Vec::new();
    check_conv(seed ^ 0x01, &mut out);
    check_deform(seed ^ 0x02, &mut out);
    check_bilinear(seed ^ 0x03, &mut out);
    check_loss(seed ^ 0x04, &mut out);
    check_network(seed ^ 0x05, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_err_basics() {
        assert_eq!(rel_err(1.0, 1.0), 0.0);
        assert!(rel_err(1.0, 1.001) < 2e-3);
        assert_eq!(rel_err(0.0, 0.0), 0.0);
    }

    #[test]
    fn suite_passes_and_lists_enough_checks() {
        let results = run_all(2024);
        assert!(results.len() >= 6, "only {} checks", results.len());
        for r in &results {
            assert!(
                r.pass(),
                "{} failed: {} > {}",
                r.name,
                r.max_rel_err,
                r.tolerance
            );
        }
    }

    #[test]
    fn perturbed_gradient_is_detected() {
        // The comparator must flag a backward pass that is wrong by 1%.
        let fix = ConvFixture::new(99, false);
        let (mut dx, _, _, _) = fix.analytic();
        dx[5] += 0.01f64.max(dx[5].abs() * 0.01);
        let err = max_rel_err(&dx, &fix.numeric_dx());
        assert!(err > 1e-4, "perturbation went unnoticed: {err}");
    }
}
