//! Empirical neural tangent kernel of a wide randomly initialized MLP.
//!
//! The network is fully connected with ReLU activations, no biases, standard
//! normal weights, a `sqrt(2/m)` rescaling after each hidden layer, and a
//! `1/sqrt(m)` rescaling at the scalar output. The empirical NTK entry for a
//! sample pair is the inner product of their exact parameter gradients at
//! initialization; gradients come from a handwritten reverse pass, and the
//! kernel is assembled block by block so that at most two chunks of flat
//! gradient vectors are alive at a time.
//!
//! Post-processing mirrors the standard pipeline: average over
//! initializations, symmetrize, rescale to unit diagonal, divide by the
//! variant count.

use ndarray::{Array1, Array2, ArrayView1};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genodata::GenotypeMatrix;
use crate::kernels::{self, BaseScaling, KernelKind, KernelMatrix, NtkArchitecture};
use crate::linalg;
use crate::util::{derive_seed, median};

/// Width/depth defaults keyed on the feature count: narrow inputs get a
/// wider, shallower network (m = 2000, depth 2); wider inputs get m = 1000,
/// depth 3.
pub const WIDE_NETWORK_FEATURE_CUTOFF: usize = 50;

/// Fully connected ReLU network without biases.
///
/// `depth` counts weight layers: depth 2 is one hidden ReLU layer plus the
/// linear output. Hidden weight matrices are stored rows-by-output-unit; the
/// output layer is a single weight vector.
#[derive(Debug, Clone)]
pub struct WideMlp {
    pub input_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub hidden_weights: Vec<Array2<f64>>,
    pub output_weights: Array1<f64>,
    pub seed: u64,
}

impl WideMlp {
    /// Draws all weights i.i.d. standard normal from the given seed.
    pub fn init(input_dim: usize, width: usize, depth: usize, seed: u64) -> Result<Self> {
        if input_dim == 0 || width == 0 {
            return Err(Error::Parameter(format!(
                "network needs positive input dim and width, got p={input_dim}, m={width}"
            )));
        }
        if depth < 2 {
            return Err(Error::Parameter(format!(
                "network depth must be at least 2, got {depth}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = StandardNormal;
        let mut hidden_weights = Vec::with_capacity(depth - 1);
        for layer in 0..depth - 1 {
            let fan_in = if layer == 0 { input_dim } else { width };
            let mut w = Array2::<f64>::zeros((width, fan_in));
            for v in w.iter_mut() {
                *v = normal.sample(&mut rng);
            }
            hidden_weights.push(w);
        }
        let mut output_weights = Array1::<f64>::zeros(width);
        for v in output_weights.iter_mut() {
            *v = normal.sample(&mut rng);
        }
        Ok(Self {
            input_dim,
            width,
            depth,
            hidden_weights,
            output_weights,
            seed,
        })
    }

    /// Total number of parameters (all hidden matrices plus the output vector).
    pub fn param_count(&self) -> usize {
        self.hidden_weights
            .iter()
            .map(|w| w.len())
            .sum::<usize>()
            + self.output_weights.len()
    }

    /// Layer sizes [p, m, ..., m, 1].
    pub fn widths(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_dim];
        sizes.extend(std::iter::repeat(self.width).take(self.depth - 1));
        sizes.push(1);
        sizes
    }

    /// Forward pass caching pre-activations and scaled activations.
    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<ForwardPass> {
        if x.len() != self.input_dim {
            return Err(Error::Dimension(format!(
                "input has length {}, network expects {}",
                x.len(),
                self.input_dim
            )));
        }
        let scale = (2.0 / self.width as f64).sqrt();
        let mut preactivations = Vec::with_capacity(self.depth - 1);
        let mut activations = Vec::with_capacity(self.depth - 1);
        let mut h = x.to_owned();
        for w in &self.hidden_weights {
            let z = w.dot(&h);
            let a = z.mapv(|v| scale * v.max(0.0));
            preactivations.push(z);
            activations.push(a.clone());
            h = a;
        }
        let output = self.output_weights.dot(&h) / (self.width as f64).sqrt();
        Ok(ForwardPass {
            output,
            preactivations,
            activations,
        })
    }

    /// Exact gradient of the scalar output with respect to every parameter,
    /// flattened as [W1 row-major, W2, ..., output weights].
    ///
    /// The ReLU subgradient at exactly zero is taken as zero.
    pub fn param_gradient(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        let fwd = self.forward(x)?;
        let mut out = Array1::<f64>::zeros(self.param_count());
        self.gradient_into(x, &fwd, out.as_slice_mut().expect("contiguous"));
        Ok(out)
    }

    /// Writes the flat parameter gradient into `out` (length `param_count`).
    fn gradient_into(&self, x: ArrayView1<'_, f64>, fwd: &ForwardPass, out: &mut [f64]) {
        let m = self.width;
        let scale = (2.0 / m as f64).sqrt();
        let out_scale = 1.0 / (m as f64).sqrt();
        debug_assert_eq!(out.len(), self.param_count());

        // Slice boundaries of each layer inside the flat vector.
        let mut offsets = Vec::with_capacity(self.depth);
        let mut pos = 0usize;
        for w in &self.hidden_weights {
            offsets.push(pos);
            pos += w.len();
        }
        let output_offset = pos;

        // Output layer is linear: d f / d w = h^{L-1} / sqrt(m).
        let last_h = &fwd.activations[self.depth - 2];
        for (dst, hv) in out[output_offset..].iter_mut().zip(last_h.iter()) {
            *dst = out_scale * hv;
        }

        // Sensitivity with respect to the current layer's activation h^(l).
        let mut delta_h: Vec<f64> = self
            .output_weights
            .iter()
            .map(|w| out_scale * w)
            .collect();

        for layer in (0..self.depth - 1).rev() {
            let z = &fwd.preactivations[layer];
            // d f / d z = delta_h * scale * 1{z > 0}.
            let mut delta_z = vec![0.0f64; m];
            for i in 0..m {
                if z[i] > 0.0 {
                    delta_z[i] = delta_h[i] * scale;
                }
            }
            // Gradient for W^(layer) is the outer product delta_z * input^T.
            let w = &self.hidden_weights[layer];
            let fan_in = w.ncols();
            let grad = &mut out[offsets[layer]..offsets[layer] + m * fan_in];
            if layer == 0 {
                let xs = x.as_slice().map(|s| s.to_vec()).unwrap_or_else(|| x.to_vec());
                for i in 0..m {
                    let d = delta_z[i];
                    let row = &mut grad[i * fan_in..(i + 1) * fan_in];
                    if d == 0.0 {
                        row.fill(0.0);
                    } else {
                        for (g, xv) in row.iter_mut().zip(xs.iter()) {
                            *g = d * xv;
                        }
                    }
                }
            } else {
                let h_prev = &fwd.activations[layer - 1];
                let hs = h_prev.as_slice().expect("contiguous activation");
                for i in 0..m {
                    let d = delta_z[i];
                    let row = &mut grad[i * fan_in..(i + 1) * fan_in];
                    if d == 0.0 {
                        row.fill(0.0);
                    } else {
                        for (g, hv) in row.iter_mut().zip(hs.iter()) {
                            *g = d * hv;
                        }
                    }
                }
                // Propagate: delta_h^{l-1} = W^T delta_z.
                let ws = w.as_slice().expect("contiguous weights");
                let mut next = vec![0.0f64; fan_in];
                for i in 0..m {
                    let d = delta_z[i];
                    if d == 0.0 {
                        continue;
                    }
                    let row = &ws[i * fan_in..(i + 1) * fan_in];
                    for (nv, wv) in next.iter_mut().zip(row.iter()) {
                        *nv += d * wv;
                    }
                }
                delta_h = next;
            }
        }
    }
}

/// Cached quantities from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub output: f64,
    /// Pre-activations z^(l) per hidden layer.
    pub preactivations: Vec<Array1<f64>>,
    /// Scaled activations h^(l) = sqrt(2/m) relu(z^(l)) per hidden layer.
    pub activations: Vec<Array1<f64>>,
}

/// Build configuration for the empirical NTK.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NtkBuildConfig {
    pub width: usize,
    pub depth: usize,
    /// Samples per Jacobian chunk; at most two chunks are materialized.
    pub chunk_size: usize,
    /// Number of random initializations averaged (default 1).
    pub num_inits: usize,
    pub seed: u64,
    /// Apply the unit-diagonal rescaling and the division by the variant
    /// count. Disable to obtain the raw averaged gradient Gram matrix.
    pub normalize: bool,
}

impl NtkBuildConfig {
    /// Architecture selector keyed on the feature count: p < 50 uses
    /// width 2000 / depth 2, otherwise width 1000 / depth 3.
    pub fn default_for_features(p: usize, seed: u64) -> Self {
        let (width, depth) = if p < WIDE_NETWORK_FEATURE_CUTOFF {
            (2000, 2)
        } else {
            (1000, 3)
        };
        Self {
            width,
            depth,
            chunk_size: 32,
            num_inits: 1,
            seed,
            normalize: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.width < 1 {
            return Err(Error::Parameter("NTK width must be at least 1".into()));
        }
        if self.depth < 2 {
            return Err(Error::Parameter("NTK depth must be at least 2".into()));
        }
        if self.chunk_size < 1 {
            return Err(Error::Parameter("chunk size must be at least 1".into()));
        }
        if self.num_inits < 1 {
            return Err(Error::Parameter(
                "number of initializations must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Empirical NTK over all sample pairs of a genotype matrix.
///
/// K_ij = <grad f(x_i), grad f(x_j)> averaged over `num_inits` random
/// initializations, then symmetrized, diagonal-rescaled (d_i floored at
/// 1e-10), and divided by the variant count. Deterministic given the seed.
pub fn empirical_ntk(geno: &GenotypeMatrix, cfg: &NtkBuildConfig) -> Result<KernelMatrix> {
    cfg.validate()?;
    let x = geno.values();
    let (n, p) = x.dim();
    let mut kernel = Array2::<f64>::zeros((n, n));

    let chunk = cfg.chunk_size.min(n);
    let starts: Vec<usize> = (0..n).step_by(chunk).collect();
    for init in 0..cfg.num_inits {
        let net = WideMlp::init(p, cfg.width, cfg.depth, derive_seed(cfg.seed, init as u64))?;
        let params = net.param_count();
        // Two reusable chunk Jacobians bound the working set at 2*chunk
        // gradient vectors regardless of the pair loop below.
        let mut jac_i = Array2::<f64>::zeros((chunk, params));
        let mut jac_j = Array2::<f64>::zeros((chunk, params));
        for (a, &start_i) in starts.iter().enumerate() {
            let len_i = chunk.min(n - start_i);
            fill_jacobian_chunk(&net, geno, start_i, len_i, &mut jac_i)?;
            let rows_i = jac_i.slice(ndarray::s![..len_i, ..]);
            // Diagonal block.
            let block = rows_i.dot(&rows_i.t());
            accumulate_block(&mut kernel, &block, start_i, start_i);
            // Off-diagonal blocks; the transpose mirror is exact because the
            // entries are the same dot products.
            for &start_j in starts.iter().skip(a + 1) {
                let len_j = chunk.min(n - start_j);
                fill_jacobian_chunk(&net, geno, start_j, len_j, &mut jac_j)?;
                let rows_j = jac_j.slice(ndarray::s![..len_j, ..]);
                let block = rows_i.dot(&rows_j.t());
                accumulate_block(&mut kernel, &block, start_i, start_j);
                accumulate_block_transposed(&mut kernel, &block, start_j, start_i);
            }
        }
    }

    if cfg.num_inits > 1 {
        let inv = 1.0 / cfg.num_inits as f64;
        kernel.mapv_inplace(|v| v * inv);
    }
    linalg::symmetrize(&mut kernel);
    if cfg.normalize {
        kernels::unit_diagonal_over_p(&mut kernel, p);
    }
    KernelMatrix::new(kernel, KernelKind::NtkEmpirical)
}

fn fill_jacobian_chunk(
    net: &WideMlp,
    geno: &GenotypeMatrix,
    start: usize,
    len: usize,
    jac: &mut Array2<f64>,
) -> Result<()> {
    let x = geno.values();
    for row in 0..len {
        let sample = start + row;
        let xi = x.row(sample);
        let fwd = net.forward(xi)?;
        let mut slot = jac.row_mut(row);
        net.gradient_into(xi, &fwd, slot.as_slice_mut().expect("contiguous row"));
        if slot.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite Jacobian for sample {sample}"
            )));
        }
    }
    Ok(())
}

fn accumulate_block(kernel: &mut Array2<f64>, block: &Array2<f64>, row0: usize, col0: usize) {
    for i in 0..block.nrows() {
        for j in 0..block.ncols() {
            kernel[[row0 + i, col0 + j]] += block[[i, j]];
        }
    }
}

fn accumulate_block_transposed(
    kernel: &mut Array2<f64>,
    block: &Array2<f64>,
    row0: usize,
    col0: usize,
) {
    for i in 0..block.nrows() {
        for j in 0..block.ncols() {
            kernel[[row0 + j, col0 + i]] += block[[i, j]];
        }
    }
}

/// One deviation measurement between the empirical and analytic NTK.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub depth: usize,
    pub width: usize,
    pub seed: u64,
    /// Max-entry absolute deviation between the normalized kernels.
    pub max_abs_deviation: f64,
}

/// Sweep configuration for [`width_convergence_report`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceSweep {
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Must be [`BaseScaling::InnerProduct`]: the empirical network consumes
    /// raw inputs, so any other base scaling would compare mismatched kernels.
    pub base: BaseScaling,
    /// Must be true: the raw empirical kernel shrinks with width, so only the
    /// normalized kernels are comparable.
    pub normalize: bool,
}

impl ConvergenceSweep {
    pub fn new(depths: Vec<usize>, widths: Vec<usize>, seeds: Vec<u64>) -> Self {
        Self {
            depths,
            widths,
            seeds,
            base: BaseScaling::InnerProduct,
            normalize: true,
        }
    }
}

/// Deviation of the empirical NTK from the analytic infinite-width kernel,
/// per (depth, width, seed). Chunk sizes are chosen to bound the Jacobian
/// working set regardless of width.
pub fn width_convergence_report(
    geno: &GenotypeMatrix,
    sweep: &ConvergenceSweep,
) -> Result<Vec<ConvergenceRow>> {
    if sweep.base != BaseScaling::InnerProduct {
        return Err(Error::Config(
            "width convergence requires the inner-product base scaling used by the empirical network"
                .into(),
        ));
    }
    if !sweep.normalize {
        return Err(Error::Config(
            "width convergence compares unit-diagonal kernels; raw kernels differ in scale by design"
                .into(),
        ));
    }
    if sweep.depths.is_empty() || sweep.widths.is_empty() || sweep.seeds.is_empty() {
        return Err(Error::Parameter(
            "convergence sweep needs at least one depth, width, and seed".into(),
        ));
    }
    let n = geno.n_samples();
    let mut rows = Vec::new();
    for &depth in &sweep.depths {
        let arch = NtkArchitecture::with_depth(depth)?;
        let analytic = kernels::ntk_analytic(geno, &arch, sweep.base, true)?;
        for &width in &sweep.widths {
            let chunk = chunk_size_for(width, geno.n_variants(), n);
            for &seed in &sweep.seeds {
                let cfg = NtkBuildConfig {
                    width,
                    depth,
                    chunk_size: chunk,
                    num_inits: 1,
                    seed,
                    normalize: true,
                };
                let empirical = empirical_ntk(geno, &cfg)?;
                let dev = max_abs_difference(empirical.values(), analytic.values());
                rows.push(ConvergenceRow {
                    depth,
                    width,
                    seed,
                    max_abs_deviation: dev,
                });
            }
        }
    }
    Ok(rows)
}

/// Median max-entry deviation per width, ascending in width, for one depth.
pub fn median_deviation_by_width(rows: &[ConvergenceRow], depth: usize) -> Vec<(usize, f64)> {
    let mut widths: Vec<usize> = rows
        .iter()
        .filter(|r| r.depth == depth)
        .map(|r| r.width)
        .collect();
    widths.sort_unstable();
    widths.dedup();
    widths
        .into_iter()
        .map(|w| {
            let devs: Vec<f64> = rows
                .iter()
                .filter(|r| r.depth == depth && r.width == w)
                .map(|r| r.max_abs_deviation)
                .collect();
            (w, median(&devs))
        })
        .collect()
}

/// Chunk size keeping each of the two live chunk Jacobians within roughly a
/// gigabyte. Conservatively assumes one m x m middle layer on top of the
/// input and output layers.
fn chunk_size_for(width: usize, p: usize, n: usize) -> usize {
    let params = width * p + width * width + width;
    let budget_bytes = 1usize << 30;
    let per_sample = params * std::mem::size_of::<f64>();
    (budget_bytes / per_sample.max(1)).clamp(1, n.max(1))
}

fn max_abs_difference(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
