//! The six benchmark problems: three linear structural equation models, each
//! in a plain and a scrambled variant, and the per-environment
//! train/validation/test splits drawn from them.
//!
//! Every problem has invariant features `x_inv` (the first `d_inv` columns in
//! latent coordinates) and spurious features `x_spu` (the remaining `d_spu`
//! columns). Test splits have their spurious block shuffled across rows, so a
//! predictor that leans on `x_spu` pays for it at test time.

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use crate::error::{config, Error, Result};
use crate::math::{sample_categorical, sample_gaussian_vector, sample_rotation, Mat, RngStream};

/// Per-environment noise scale of example1 for E0, E1, E2 (a standard
/// deviation).
pub const EXAMPLE1_SIGMAS: [f64; 3] = [0.1, 1.5, 2.0];
/// Example2 foreground/background agreement probability for E0, E1, E2.
pub const EXAMPLE2_P: [f64; 3] = [0.95, 0.97, 0.99];
/// Example2 cow probability for E0, E1, E2.
pub const EXAMPLE2_S: [f64; 3] = [0.3, 0.5, 0.7];
pub const ANIMAL_SCALE: f64 = 1e-2;
pub const BACKGROUND_SCALE: f64 = 1.0;
/// Variance of the per-coordinate noise around the example2 class means.
pub const EXAMPLE2_NOISE_VAR: f64 = 0.1;
/// Per-coordinate invariant mean offset of example3.
pub const EXAMPLE3_MARGIN: f64 = 0.1;
/// Standard deviation of the per-coordinate example3 noise.
pub const EXAMPLE3_NOISE_SD: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProblemKind {
    Example1,
    Example2,
    Example3,
}

impl ProblemKind {
    pub fn task(self) -> Task {
        match self {
            ProblemKind::Example1 => Task::Regression,
            ProblemKind::Example2 | ProblemKind::Example3 => Task::Classification,
        }
    }

    /// Stable numeric label used to derive random streams.
    pub fn stream_label(self) -> u64 {
        match self {
            ProblemKind::Example1 => 1,
            ProblemKind::Example2 => 2,
            ProblemKind::Example3 => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub scrambled: bool,
    pub d_inv: usize,
    pub d_spu: usize,
    pub n_env: usize,
    pub n_per_env: usize,
}

impl ProblemSpec {
    pub fn new(kind: ProblemKind, scrambled: bool) -> Self {
        Self {
            kind,
            scrambled,
            d_inv: 5,
            d_spu: 5,
            n_env: 3,
            n_per_env: 10_000,
        }
    }

    /// All six problems at default dimensions, in table order.
    pub fn all_defaults() -> Vec<ProblemSpec> {
        let mut out = Vec::new();
        for kind in [
            ProblemKind::Example1,
            ProblemKind::Example2,
            ProblemKind::Example3,
        ] {
            out.push(Self::new(kind, false));
            out.push(Self::new(kind, true));
        }
        out
    }

    pub fn with_dims(mut self, d_inv: usize, d_spu: usize, n_env: usize) -> Self {
        self.d_inv = d_inv;
        self.d_spu = d_spu;
        self.n_env = n_env;
        self
    }

    pub fn with_n_per_env(mut self, n: usize) -> Self {
        self.n_per_env = n;
        self
    }

    pub fn dim(&self) -> usize {
        self.d_inv + self.d_spu
    }

    pub fn task(&self) -> Task {
        self.kind.task()
    }

    /// Identifier such as `example2s`.
    pub fn name(&self) -> String {
        let base = match self.kind {
            ProblemKind::Example1 => "example1",
            ProblemKind::Example2 => "example2",
            ProblemKind::Example3 => "example3",
        };
        if self.scrambled {
            format!("{base}s")
        } else {
            base.to_string()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_inv == 0 {
            return config("d_inv must be at least 1");
        }
        if self.n_env < 2 {
            return config(format!("n_env must be at least 2, got {}", self.n_env));
        }
        if self.n_per_env == 0 {
            return config("n_per_env must be at least 1");
        }
        Ok(())
    }
}

impl fmt::Display for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ProblemSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (base, scrambled) = match lower.strip_suffix('s') {
            Some(b) => (b, true),
            None => (lower.as_str(), false),
        };
        let kind = match base {
            "example1" => ProblemKind::Example1,
            "example2" => ProblemKind::Example2,
            "example3" => ProblemKind::Example3,
            _ => return config(format!("unknown problem '{s}'")),
        };
        Ok(ProblemSpec::new(kind, scrambled))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum EnvParams {
    /// Noise standard deviation shared by `x_inv` and the latent target.
    Example1 {
        sigma: f64,
    },
    Example2 {
        p: f64,
        s: f64,
    },
    Example3 {
        mu_spu: Vec<f64>,
    },
}

/// Environment-independent parameters of a sampled model.
#[derive(Clone, Debug, PartialEq)]
pub enum Mechanism {
    Example1 {
        w_yx: Mat,
        w_xy: Mat,
    },
    Example2 {
        mu_cow: Vec<f64>,
        mu_grass: Vec<f64>,
    },
    Example3 {
        gamma: Vec<f64>,
    },
}

/// Frozen random parameters of one sampled problem.
#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    spec: ProblemSpec,
    envs: Vec<EnvParams>,
    mechanism: Mechanism,
    scramble: Option<Mat>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub x: Mat,
    pub y: Vec<f64>,
    pub task: Task,
    pub env_index: usize,
}

impl Split {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentData {
    pub train: Split,
    pub valid: Split,
    pub test: Split,
}

impl EnvironmentData {
    pub fn env_index(&self) -> usize {
        self.train.env_index
    }
}

fn gaussian_mat(stream: &mut RngStream, rows: usize, cols: usize, scale: f64) -> Mat {
    let data = (0..rows * cols)
        .map(|_| stream.standard_normal() * scale)
        .collect();
    Mat::from_vec(rows, cols, data).expect("sized buffer")
}

/// Samples the frozen parameters of a problem.
///
/// Draws come from separate child streams for the mechanism, the environment
/// parameters and the rotation, so the plain and scrambled variants of a
/// problem built from the same stream share everything except `S`.
pub fn instantiate_problem(spec: &ProblemSpec, stream: &RngStream) -> Result<ProblemInstance> {
    spec.validate()?;
    let mut mech_stream = stream.split(0);
    let env_stream = stream.split(1);

    let mechanism = match spec.kind {
        ProblemKind::Example1 => Mechanism::Example1 {
            w_yx: gaussian_mat(
                &mut mech_stream,
                spec.d_inv,
                spec.d_inv,
                1.0 / spec.d_inv as f64,
            ),
            w_xy: gaussian_mat(
                &mut mech_stream,
                spec.d_spu,
                spec.d_inv,
                1.0 / spec.d_spu.max(1) as f64,
            ),
        },
        ProblemKind::Example2 => Mechanism::Example2 {
            mu_cow: vec![1.0; spec.d_inv],
            mu_grass: vec![1.0; spec.d_spu],
        },
        ProblemKind::Example3 => Mechanism::Example3 {
            gamma: vec![EXAMPLE3_MARGIN; spec.d_inv],
        },
    };

    let envs = (0..spec.n_env)
        .map(|j| {
            let mut s = env_stream.split(j as u64);
            match spec.kind {
                ProblemKind::Example1 => EnvParams::Example1 {
                    sigma: EXAMPLE1_SIGMAS
                        .get(j)
                        .copied()
                        .unwrap_or_else(|| s.uniform_range(1e-2, 10.0)),
                },
                ProblemKind::Example2 => match (EXAMPLE2_P.get(j), EXAMPLE2_S.get(j)) {
                    (Some(&p), Some(&q)) => EnvParams::Example2 { p, s: q },
                    _ => {
                        let p = s.uniform_range(0.9, 1.0);
                        let q = s.uniform_range(0.3, 0.7);
                        EnvParams::Example2 { p, s: q }
                    }
                },
                ProblemKind::Example3 => EnvParams::Example3 {
                    mu_spu: (0..spec.d_spu).map(|_| s.standard_normal()).collect(),
                },
            }
        })
        .collect();

    let scramble = spec
        .scrambled
        .then(|| sample_rotation(&mut stream.split(2), spec.dim()));

    Ok(ProblemInstance {
        spec: spec.clone(),
        envs,
        mechanism,
        scramble,
    })
}

impl ProblemInstance {
    pub fn spec(&self) -> &ProblemSpec {
        &self.spec
    }

    pub fn envs(&self) -> &[EnvParams] {
        &self.envs
    }

    pub fn mechanism(&self) -> &Mechanism {
        &self.mechanism
    }

    pub fn scramble(&self) -> Option<&Mat> {
        self.scramble.as_ref()
    }

    /// Draws `n` rows for one environment in latent (unscrambled)
    /// coordinates, columns ordered `(x_inv, x_spu)`.
    pub fn sample_latent_split(
        &self,
        env_index: usize,
        n: usize,
        stream: &mut RngStream,
    ) -> Result<Split> {
        self.sample_latent_with_groups(env_index, n, stream)
            .map(|(split, _)| split)
    }

    /// Same draws as [`Self::sample_latent_split`], also returning the
    /// example2 category index of every row (zero for the other kinds).
    fn sample_latent_with_groups(
        &self,
        env_index: usize,
        n: usize,
        stream: &mut RngStream,
    ) -> Result<(Split, Vec<usize>)> {
        let env = self.envs.get(env_index).ok_or(Error::EnvIndex {
            index: env_index,
            n_env: self.envs.len(),
        })?;
        if n == 0 {
            return config("split size must be at least 1");
        }
        let (d_inv, d_spu) = (self.spec.d_inv, self.spec.d_spu);
        let d = d_inv + d_spu;
        let mut x = Mat::zeros(n, d);
        let mut y = vec![0.0; n];
        let mut groups = vec![0; n];

        match (&self.mechanism, env) {
            (Mechanism::Example1 { w_yx, w_xy }, EnvParams::Example1 { sigma }) => {
                let var = sigma * sigma;
                let zeros = vec![0.0; d_inv];
                for (i, yi) in y.iter_mut().enumerate() {
                    let x_inv = sample_gaussian_vector(stream, d_inv, &zeros, var)?;
                    let y_mean = w_yx.mat_vec(&x_inv)?;
                    let y_lat = sample_gaussian_vector(stream, d_inv, &y_mean, var)?;
                    let spu_mean = w_xy.mat_vec(&y_lat)?;
                    let x_spu = sample_gaussian_vector(stream, d_spu, &spu_mean, 1.0)?;
                    let row = x.row_mut(i);
                    row[..d_inv].copy_from_slice(&x_inv);
                    row[d_inv..].copy_from_slice(&x_spu);
                    *yi = y_lat.iter().sum();
                }
            }
            (Mechanism::Example2 { mu_cow, mu_grass }, EnvParams::Example2 { p, s }) => {
                let probs = [p * s, (1.0 - p) * s, p * (1.0 - s), (1.0 - p) * (1.0 - s)];
                let mu_camel: Vec<f64> = mu_cow.iter().map(|m| -m).collect();
                let mu_sand: Vec<f64> = mu_grass.iter().map(|m| -m).collect();
                for i in 0..n {
                    let j = sample_categorical(stream, &probs)?;
                    groups[i] = j;
                    let animal = if j <= 1 { mu_cow } else { &mu_camel };
                    let background = if j == 0 || j == 3 { mu_grass } else { &mu_sand };
                    let x_inv = sample_gaussian_vector(stream, d_inv, animal, EXAMPLE2_NOISE_VAR)?;
                    let x_spu =
                        sample_gaussian_vector(stream, d_spu, background, EXAMPLE2_NOISE_VAR)?;
                    let row = x.row_mut(i);
                    for (r, v) in row[..d_inv].iter_mut().zip(&x_inv) {
                        *r = v * ANIMAL_SCALE;
                    }
                    for (r, v) in row[d_inv..].iter_mut().zip(&x_spu) {
                        *r = v * BACKGROUND_SCALE;
                    }
                    y[i] = if row[..d_inv].iter().sum::<f64>() > 0.0 {
                        1.0
                    } else {
                        0.0
                    };
                }
            }
            (Mechanism::Example3 { gamma }, EnvParams::Example3 { mu_spu }) => {
                let var = EXAMPLE3_NOISE_SD * EXAMPLE3_NOISE_SD;
                let neg_gamma: Vec<f64> = gamma.iter().map(|g| -g).collect();
                let neg_mu: Vec<f64> = mu_spu.iter().map(|m| -m).collect();
                for (i, yi) in y.iter_mut().enumerate() {
                    let label = stream.bernoulli(0.5);
                    let (inv_mean, spu_mean) = if label {
                        (&neg_gamma, &neg_mu)
                    } else {
                        (gamma, mu_spu)
                    };
                    let x_inv = sample_gaussian_vector(stream, d_inv, inv_mean, var)?;
                    let x_spu = sample_gaussian_vector(stream, d_spu, spu_mean, var)?;
                    let row = x.row_mut(i);
                    row[..d_inv].copy_from_slice(&x_inv);
                    row[d_inv..].copy_from_slice(&x_spu);
                    *yi = if label { 1.0 } else { 0.0 };
                }
            }
            _ => unreachable!("environment parameters always match the mechanism"),
        }

        let split = Split {
            x,
            y,
            task: self.spec.task(),
            env_index,
        };
        Ok((split, groups))
    }

    /// Train/validation/test data for every environment.
    ///
    /// Each split is an independent latent sample of `n_per_env` rows. The
    /// test split always has its spurious block shuffled; with `oracle` set
    /// the train and validation splits are shuffled too. Shuffling happens in
    /// latent coordinates, then the scramble (if any) is applied.
    ///
    /// Latent samples and the test shuffle come from the same child streams
    /// whether or not `oracle` is set, so oracle and non-oracle data share
    /// identical test splits.
    pub fn build_environments(
        &self,
        oracle: bool,
        stream: &RngStream,
    ) -> Result<Vec<EnvironmentData>> {
        let n = self.spec.n_per_env;
        (0..self.spec.n_env)
            .map(|e| {
                let env_stream = stream.split(e as u64);
                let make = |which: u64, shuffle: bool| -> Result<Split> {
                    let split_stream = env_stream.split(which);
                    let mut split = self.sample_latent_split(e, n, &mut split_stream.split(0))?;
                    if shuffle {
                        split =
                            shuffle_spurious(&split, self.spec.d_inv, &mut split_stream.split(1));
                    }
                    match &self.scramble {
                        Some(s) => apply_scramble(&split, s),
                        None => Ok(split),
                    }
                };
                Ok(EnvironmentData {
                    train: make(0, oracle)?,
                    valid: make(1, oracle)?,
                    test: make(2, true)?,
                })
            })
            .collect()
    }
}

/// Permutes the spurious block (columns `d_inv..`) across rows with one
/// uniformly random permutation; `x_inv` and `y` are untouched.
pub fn shuffle_spurious(split: &Split, d_inv: usize, stream: &mut RngStream) -> Split {
    let n = split.len();
    let perm = stream.permutation(n);
    let mut out = split.clone();
    for (i, &src) in perm.iter().enumerate() {
        out.x.row_mut(i)[d_inv..].copy_from_slice(&split.x.row(src)[d_inv..]);
    }
    out
}

/// Replaces every row `x` with `Sᵀx`.
pub fn apply_scramble(split: &Split, s: &Mat) -> Result<Split> {
    let d = split.dim();
    if s.rows() != d || s.cols() != d {
        return Err(Error::Dimension {
            expected: d,
            got: s.rows(),
            context: "scramble matrix",
        });
    }
    let x = split.x.matmul(s)?;
    Ok(Split {
        x,
        y: split.y.clone(),
        task: split.task,
        env_index: split.env_index,
    })
}

/// Writes one split as CSV with header `x0,..,x{d-1},y`.
pub fn write_split_csv<W: Write>(split: &Split, out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    let mut header: Vec<String> = (0..split.dim()).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for (row, y) in split.x.row_iter().zip(&split.y) {
        let rec: Vec<String> = row
            .iter()
            .chain(std::iter::once(y))
            .map(f64::to_string)
            .collect();
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Dumps every split to `dir/{problem}_E{e}_{train|valid|test}.csv`.
pub fn dump_environments(dir: &Path, problem: &str, envs: &[EnvironmentData]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for env in envs {
        for (tag, split) in [
            ("train", &env.train),
            ("valid", &env.valid),
            ("test", &env.test),
        ] {
            let path = dir.join(format!("{problem}_E{}_{tag}.csv", env.env_index()));
            let file = std::io::BufWriter::new(std::fs::File::create(path)?);
            write_split_csv(split, file)?;
        }
    }
    Ok(())
}
