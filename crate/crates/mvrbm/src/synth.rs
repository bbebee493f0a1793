//! Synthetic mixed-type benchmark generator.
//!
//! Latent records are drawn from a Gaussian mixture (random means, random
//! positive-definite covariances), a chosen fraction is pushed off-manifold by
//! additive uniform noise, and the latent dimensions are then discretized:
//! a few stay Gaussian, some become binary via random thresholds, and triples
//! become nominal via argmax. The noisy rows are the planted outliers.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::schema::{Cell, ColumnKind, ColumnSpec, Dataset, Schema};
use crate::seed;

/// Generator settings. The default reproduces the 3-component, 15-dimensional
/// setup: 3000 rows, 5% planted outliers, layout 3 gaussian + 3 binary +
/// 9 nominal latent dims (three argmax triples).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub components: usize,
    pub latent_dim: usize,
    pub samples_per_component: usize,
    pub outlier_fraction: f64,
    /// Upper end of the Uniform(0, scale) noise added to outlier rows.
    pub noise_scale: f64,
    pub seed: u64,
    /// Latent dims kept as observed gaussian columns.
    pub kept_gaussian: usize,
    /// Latent dims thresholded into binary columns.
    pub binary: usize,
    /// Latent dims consumed by argmax triples; must be a multiple of 3.
    pub nominal_dims: usize,
    /// Half-width of the box the component means are drawn from.
    pub mean_box: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            components: 3,
            latent_dim: 15,
            samples_per_component: 1000,
            outlier_fraction: 0.05,
            noise_scale: 6.0,
            seed: 0,
            kept_gaussian: 3,
            binary: 3,
            nominal_dims: 9,
            mean_box: 5.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.components == 0 || self.samples_per_component == 0 {
            return Err(Error::Config("components and samples must be positive".into()));
        }
        if self.kept_gaussian + self.binary + self.nominal_dims != self.latent_dim {
            return Err(Error::Config(format!(
                "layout {}+{}+{} does not sum to latent dim {}",
                self.kept_gaussian, self.binary, self.nominal_dims, self.latent_dim
            )));
        }
        if self.nominal_dims % 3 != 0 {
            return Err(Error::Config("nominal latent dims must come in triples".into()));
        }
        if !(self.outlier_fraction > 0.0 && self.outlier_fraction < 1.0) {
            return Err(Error::Config("outlier fraction must lie in (0,1)".into()));
        }
        if !(self.noise_scale >= 0.0) {
            return Err(Error::Config("noise scale must be non-negative".into()));
        }
        Ok(())
    }

    /// Observed schema after discretization.
    pub fn schema(&self) -> Result<Schema> {
        let mut columns = Vec::new();
        for i in 0..self.kept_gaussian {
            columns.push(ColumnSpec {
                name: format!("g{}", i + 1),
                kind: ColumnKind::Gaussian,
            });
        }
        for i in 0..self.binary {
            columns.push(ColumnSpec {
                name: format!("b{}", i + 1),
                kind: ColumnKind::Binary,
            });
        }
        for i in 0..self.nominal_dims / 3 {
            columns.push(ColumnSpec {
                name: format!("n{}", i + 1),
                kind: ColumnKind::Nominal(3),
            });
        }
        Schema::new(columns)
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
fn cholesky(matrix: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = matrix.len();
    let mut l = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = matrix[i][j];
            for k in 0..j {
                sum -= l[i][k] * l[j][k];
            }
            if i == j {
                assert!(sum > 0.0, "matrix is not positive definite");
                l[i][j] = sum.sqrt();
            } else {
                l[i][j] = sum / l[j][j];
            }
        }
    }
    l
}

/// Draw `n` samples from `Normal(mean, L L^T)` given the Cholesky factor `L`.
fn sample_gaussian<R: Rng>(mean: &[f64], chol: &[Vec<f64>], n: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let d = mean.len();
    (0..n)
        .map(|_| {
            let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
            (0..d)
                .map(|i| mean[i] + (0..=i).map(|j| chol[i][j] * z[j]).sum::<f64>())
                .collect()
        })
        .collect()
}

/// Draw the latent mixture: per component a mean uniform in the box and a
/// covariance `A A^T / d + I` with standard-normal `A`, i.e. a random
/// positive-definite matrix with unit-scale diagonal so the planted noise is
/// a meaningful perturbation. Returns the `n x d` matrix and per-row
/// component labels, rows grouped by component.
pub fn generate_latent(config: &SynthConfig) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
    config.validate()?;
    let d = config.latent_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "latent"));
    let box_dist = Uniform::new_inclusive(-config.mean_box, config.mean_box)
        .map_err(|e| Error::Config(format!("mean box: {e}")))?;
    let mut rows = Vec::with_capacity(config.components * config.samples_per_component);
    let mut labels = Vec::with_capacity(rows.capacity());
    for component in 0..config.components {
        let mean: Vec<f64> = (0..d).map(|_| box_dist.sample(&mut rng)).collect();
        let a: Vec<Vec<f64>> = (0..d)
            .map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let mut cov = vec![vec![0.0; d]; d];
        for i in 0..d {
            for j in 0..d {
                cov[i][j] = (0..d).map(|k| a[i][k] * a[j][k]).sum::<f64>() / (2.0 * d as f64);
            }
            cov[i][i] += 0.5;
        }
        let chol = cholesky(&cov);
        for row in sample_gaussian(&mean, &chol, config.samples_per_component, &mut rng) {
            rows.push(row);
            labels.push(component);
        }
    }
    Ok((rows, labels))
}

/// Add `Uniform(0, scale)` noise to every dimension of `round(fraction * n)`
/// rows chosen without replacement. Returns the noisy matrix and outlier flags.
pub fn inject_uniform_noise(
    latent: &[Vec<f64>],
    fraction: f64,
    scale: f64,
    seed_value: u64,
) -> Result<(Vec<Vec<f64>>, Vec<bool>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("fraction must lie in (0,1), got {fraction}")));
    }
    let n = latent.len();
    let chosen = ((n as f64) * fraction).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(seed_value, "noise"));
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng);
    let mut flags = vec![false; n];
    for &i in &indices[..chosen] {
        flags[i] = true;
    }
    let mut out = latent.to_vec();
    // rows perturbed in index order so the draw sequence is stable
    for (i, row) in out.iter_mut().enumerate() {
        if flags[i] {
            for v in row.iter_mut() {
                *v += rng.random::<f64>() * scale;
            }
        }
    }
    Ok((out, flags))
}

fn nearest_rank_percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((n as f64) * p / 100.0).ceil().max(1.0) as usize;
    sorted[rank.min(n) - 1]
}

/// Discretize the latent matrix per the configured layout: kept gaussians pass
/// through, binary dims threshold at a per-dim cut drawn uniformly from the
/// interquartile range, nominal triples take the argmax index (ties: lowest).
pub fn thurstonian_transform(latent: &[Vec<f64>], config: &SynthConfig) -> Result<Dataset> {
    config.validate()?;
    if latent.iter().any(|r| r.len() != config.latent_dim) {
        return Err(Error::Data("latent rows do not match the configured dimension".into()));
    }
    let schema = config.schema()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "thresholds"));
    let thresholds: Vec<f64> = (config.kept_gaussian..config.kept_gaussian + config.binary)
        .map(|dim| {
            let mut column: Vec<f64> = latent.iter().map(|r| r[dim]).collect();
            column.sort_by(|a, b| a.partial_cmp(b).expect("latent values are finite"));
            let low = nearest_rank_percentile(&column, 25.0);
            let high = nearest_rank_percentile(&column, 75.0);
            low + rng.random::<f64>() * (high - low)
        })
        .collect();

    let rows = latent
        .iter()
        .map(|r| {
            let mut row = Vec::with_capacity(schema.len());
            for dim in 0..config.kept_gaussian {
                row.push(Cell::Gaussian(r[dim]));
            }
            for (b, dim) in (config.kept_gaussian..config.kept_gaussian + config.binary).enumerate() {
                row.push(Cell::Binary(u8::from(r[dim] >= thresholds[b])));
            }
            let nominal_start = config.kept_gaussian + config.binary;
            for triple in 0..config.nominal_dims / 3 {
                let base = nominal_start + 3 * triple;
                let mut best = 0;
                for c in 1..3 {
                    if r[base + c] > r[base + best] {
                        best = c;
                    }
                }
                row.push(Cell::Nominal(best));
            }
            row
        })
        .collect();
    Dataset::new(schema, rows, None)
}

/// Run the full pipeline: latent mixture, planted outliers, discretization.
/// The returned dataset carries the ground-truth outlier flags as labels.
pub fn generate(config: &SynthConfig) -> Result<Dataset> {
    let (latent, _components) = generate_latent(config)?;
    let (noisy, flags) =
        inject_uniform_noise(&latent, config.outlier_fraction, config.noise_scale, config.seed)?;
    let mut data = thurstonian_transform(&noisy, config)?;
    data.labels = Some(flags);
    Ok(data)
}

/// Serialize ground-truth labels as `row_index,is_outlier` CSV.
pub fn write_labels<W: std::io::Write>(labels: &[bool], writer: &mut W) -> Result<()> {
    writeln!(writer, "row_index,is_outlier")?;
    for (i, flag) in labels.iter().enumerate() {
        writeln!(writer, "{},{}", i, u8::from(*flag))?;
    }
    Ok(())
}

/// Parse a labels CSV written by [`write_labels`].
pub fn read_labels<R: std::io::BufRead>(reader: R) -> Result<Vec<bool>> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data("empty labels file".into()))??;
    if header.trim() != "row_index,is_outlier" {
        return Err(Error::Data(format!("bad labels header '{header}'")));
    }
    let mut labels = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (idx, flag) = line
            .split_once(',')
            .ok_or_else(|| Error::Data(format!("bad labels line '{line}'")))?;
        let idx: usize = idx
            .parse()
            .map_err(|_| Error::Data(format!("bad row index '{idx}'")))?;
        if idx != i {
            return Err(Error::Data(format!("labels row index {idx} out of order")));
        }
        labels.push(match flag.trim() {
            "0" => false,
            "1" => true,
            other => return Err(Error::Data(format!("bad label value '{other}'"))),
        });
    }
    Ok(labels)
}
