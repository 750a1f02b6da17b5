//! Score models `h_w(x)` over a flat parameter vector, with an analytic
//! vector-Jacobian product so optimizers only ever see `w` and gradients.
//!
//! Parameters are laid out layer by layer: the `out x in` weight matrix in
//! row-major order followed by the `out` biases. A linear model is the
//! single layer `d_in -> 1`.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::Matrix;
use crate::error::{Error, Result};
use crate::surrogate::logistic_fn;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Arch {
    Linear {
        d_in: usize,
    },
    /// Fully connected tanh network with a scalar output layer.
    Mlp {
        d_in: usize,
        hidden: Vec<usize>,
    },
}

impl Arch {
    pub fn d_in(&self) -> usize {
        match self {
            Arch::Linear { d_in } | Arch::Mlp { d_in, .. } => *d_in,
        }
    }

    /// The same architecture with its input width replaced.
    pub fn with_input_dim(self, d_in: usize) -> Arch {
        match self {
            Arch::Linear { .. } => Arch::Linear { d_in },
            Arch::Mlp { hidden, .. } => Arch::Mlp { d_in, hidden },
        }
    }

    /// Layer widths from input to the scalar output.
    fn widths(&self) -> Vec<usize> {
        match self {
            Arch::Linear { d_in } => vec![*d_in, 1],
            Arch::Mlp { d_in, hidden } => {
                let mut w = vec![*d_in];
                w.extend(hidden);
                w.push(1);
                w
            }
        }
    }

    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.widths().contains(&0) {
            return Err(Error::usage(format!("zero-width layer in {self}")));
        }
        Ok(())
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arch::Linear { d_in } => write!(f, "arch=linear d_in={d_in}"),
            Arch::Mlp { d_in, hidden } => {
                let hidden: Vec<String> = hidden.iter().map(usize::to_string).collect();
                write!(f, "arch=mlp d_in={d_in} hidden={}", hidden.join(","))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    arch: Arch,
    params: Vec<f64>,
    squash: bool,
}

impl ScoreModel {
    pub fn new(arch: Arch, params: Vec<f64>, squash: bool) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::usage(format!(
                "{arch} needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        Ok(ScoreModel {
            arch,
            params,
            squash,
        })
    }

    /// Seeded initialization: zeros for linear models, `U(-1/sqrt(fan_in),
    /// 1/sqrt(fan_in))` for every MLP weight and bias.
    pub fn init(arch: Arch, squash: bool, seed: u64) -> Result<Self> {
        let params = init_params(&arch, seed)?;
        Self::new(arch, params, squash)
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn squash(&self) -> bool {
        self.squash
    }

    pub fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        Self::new(self.arch.clone(), params, self.squash)
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.arch.d_in() {
            return Err(Error::usage(format!(
                "input has {} columns, model expects {}",
                x.cols(),
                self.arch.d_in()
            )));
        }
        if let Some(k) = x.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::NumericInput(format!(
                "feature in row {}",
                k / x.cols().max(1)
            )));
        }
        Ok(())
    }

    /// Activations of every layer for one input row; the last entry holds the
    /// raw scalar output before squashing.
    fn activations(&self, row: &[f64]) -> Vec<Vec<f64>> {
        let widths = self.arch.widths();
        let n_layers = widths.len() - 1;
        let mut acts = Vec::with_capacity(widths.len());
        acts.push(row.to_vec());
        let mut offset = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let bias = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let input = &acts[l];
            let mut out: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let w_row = &weights[o * fan_in..(o + 1) * fan_in];
                    w_row.iter().zip(input).map(|(w, a)| w * a).sum::<f64>() + bias[o]
                })
                .collect();
            if l + 1 < n_layers {
                out.iter_mut().for_each(|z| *z = z.tanh());
            }
            acts.push(out);
        }
        acts
    }

    fn output(&self, raw: f64) -> f64 {
        if self.squash {
            logistic_fn(raw)
        } else {
            raw
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok((0..x.rows()).map(|i| self.score_row(x.row(i))).collect())
    }

    pub(crate) fn score_row(&self, row: &[f64]) -> f64 {
        let acts = self.activations(row);
        self.output(acts[acts.len() - 1][0])
    }

    /// `sum_i d_scores[i] * grad_w h_w(x_i)`, including the squash Jacobian.
    pub fn backward(&self, x: &Matrix, d_scores: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        if d_scores.len() != x.rows() {
            return Err(Error::usage(format!(
                "{} score cotangents for {} rows",
                d_scores.len(),
                x.rows()
            )));
        }
        let mut grad = vec![0.0; self.params.len()];
        for (i, &d) in d_scores.iter().enumerate() {
            if d != 0.0 {
                self.accumulate_row_grad(x.row(i), d, &mut grad);
            }
        }
        Ok(grad)
    }

    fn accumulate_row_grad(&self, row: &[f64], d_score: f64, grad: &mut [f64]) {
        let widths = self.arch.widths();
        let n_layers = widths.len() - 1;
        let acts = self.activations(row);

        let raw = acts[n_layers][0];
        let d_raw = if self.squash {
            let s = logistic_fn(raw);
            d_score * s * (1.0 - s)
        } else {
            d_score
        };

        // Layer offsets into the flat parameter vector.
        let mut offsets = Vec::with_capacity(n_layers);
        let mut off = 0;
        for l in 0..n_layers {
            offsets.push(off);
            off += widths[l] * widths[l + 1] + widths[l + 1];
        }

        let mut delta = vec![d_raw];
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let w_off = offsets[l];
            let b_off = w_off + fan_in * fan_out;
            let input = &acts[l];
            for o in 0..fan_out {
                for k in 0..fan_in {
                    grad[w_off + o * fan_in + k] += delta[o] * input[k];
                }
                grad[b_off + o] += delta[o];
            }
            if l > 0 {
                let weights = &self.params[w_off..b_off];
                delta = (0..fan_in)
                    .map(|k| {
                        let back: f64 = (0..fan_out)
                            .map(|o| weights[o * fan_in + k] * delta[o])
                            .sum();
                        back * (1.0 - input[k] * input[k])
                    })
                    .collect();
            }
        }
    }

    /// Text checkpoint: one descriptor line then one parameter per line.
    pub fn to_checkpoint_string(&self) -> String {
        let mut out = format!("{} squash={}\n", self.arch, self.squash);
        for p in &self.params {
            let _ = writeln!(out, "{p}");
        }
        out
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_checkpoint_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_checkpoint(&text, path)
    }

    pub fn parse_checkpoint(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| parse_err(1, "missing descriptor line".into()))?;
        let (mut kind, mut d_in, mut hidden, mut squash) = (None, None, Vec::new(), None);
        for token in header.split_whitespace() {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| parse_err(1, format!("bad token `{token}`")))?;
            match key {
                "arch" => kind = Some(value.to_string()),
                "d_in" => d_in = value.parse::<usize>().ok(),
                "hidden" => {
                    hidden = value
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(|s| s.parse::<usize>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| parse_err(1, format!("bad widths `{value}`")))?
                }
                "squash" => squash = value.parse::<bool>().ok(),
                _ => return Err(parse_err(1, format!("unknown key `{key}`"))),
            }
        }
        let d_in = d_in.ok_or_else(|| parse_err(1, "missing d_in".into()))?;
        let arch = match kind.as_deref() {
            Some("linear") => Arch::Linear { d_in },
            Some("mlp") => Arch::Mlp { d_in, hidden },
            other => return Err(parse_err(1, format!("unknown arch {other:?}"))),
        };
        let squash = squash.ok_or_else(|| parse_err(1, "missing squash".into()))?;
        let params = lines
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(k, l)| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| parse_err(k + 2, format!("bad parameter `{l}`")))
            })
            .collect::<Result<Vec<f64>>>()?;
        Self::new(arch, params, squash)
    }
}

pub fn init_params(arch: &Arch, seed: u64) -> Result<Vec<f64>> {
    arch.validate()?;
    match arch {
        Arch::Linear { .. } => Ok(vec![0.0; arch.param_count()]),
        Arch::Mlp { .. } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let widths = arch.widths();
            let mut params = Vec::with_capacity(arch.param_count());
            for pair in widths.windows(2) {
                let bound = 1.0 / (pair[0] as f64).sqrt();
                for _ in 0..pair[0] * pair[1] + pair[1] {
                    params.push(rng.random_range(-bound..bound));
                }
            }
            Ok(params)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn param_counts() {
        assert_eq!(Arch::Linear { d_in: 3 }.param_count(), 4);
        let mlp = Arch::Mlp {
            d_in: 2,
            hidden: vec![4],
        };
        assert_eq!(mlp.param_count(), 17);
        assert_eq!(init_params(&mlp, 1).unwrap().len(), 17);
        assert_eq!(
            init_params(&Arch::Linear { d_in: 3 }, 9).unwrap(),
            vec![0.0; 4]
        );
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let arch = Arch::Mlp {
            d_in: 4,
            hidden: vec![3, 2],
        };
        let a = init_params(&arch, 5).unwrap();
        assert_eq!(a, init_params(&arch, 5).unwrap());
        assert_ne!(a, init_params(&arch, 6).unwrap());
        // First layer fan_in = 4 -> bound 0.5.
        assert!(a[..4 * 3 + 3].iter().all(|v| v.abs() < 0.5));
    }

    #[test]
    fn forward_examples() {
        let x = Matrix::from_rows(&[vec![3.0, 1.0], vec![-1.0, 2.0]]).unwrap();
        let zero = ScoreModel::new(Arch::Linear { d_in: 2 }, vec![0.0; 3], true).unwrap();
        assert_eq!(zero.forward(&x).unwrap(), vec![0.5, 0.5]);

        let lin = ScoreModel::new(Arch::Linear { d_in: 2 }, vec![1.0, -1.0, 0.0], false).unwrap();
        assert_eq!(lin.forward(&x).unwrap()[0], 2.0);

        let arch = Arch::Mlp {
            d_in: 2,
            hidden: vec![3],
        };
        let mlp = ScoreModel::new(arch.clone(), vec![0.0; arch.param_count()], true).unwrap();
        assert_eq!(mlp.forward(&x).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn forward_errors() {
        let lin = ScoreModel::new(Arch::Linear { d_in: 2 }, vec![0.0; 3], false).unwrap();
        let wrong = Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        assert!(matches!(lin.forward(&wrong), Err(Error::Usage(_))));
        let nan = Matrix::from_rows(&[vec![1.0, f64::NAN]]).unwrap();
        assert!(matches!(lin.forward(&nan), Err(Error::NumericInput(_))));
        assert!(ScoreModel::new(Arch::Linear { d_in: 2 }, vec![0.0; 2], false).is_err());
        let ok = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(lin.backward(&ok, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn backward_examples() {
        let x = Matrix::from_rows(&[vec![3.0, -1.5]]).unwrap();
        let lin = ScoreModel::new(Arch::Linear { d_in: 2 }, vec![0.2, 0.7, -0.1], false).unwrap();
        assert_eq!(lin.backward(&x, &[1.0]).unwrap(), vec![3.0, -1.5, 1.0]);
        assert_eq!(lin.backward(&x, &[0.0]).unwrap(), vec![0.0; 3]);
    }

    /// Central differences of `sum_i d_i * h_w(x_i)` in every parameter.
    fn fd_vjp(model: &ScoreModel, x: &Matrix, d: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        (0..model.params().len())
            .map(|k| {
                let mut plus = model.clone();
                plus.params_mut()[k] += h;
                let mut minus = model.clone();
                minus.params_mut()[k] -= h;
                let fp: f64 = plus
                    .forward(x)
                    .unwrap()
                    .iter()
                    .zip(d)
                    .map(|(s, c)| s * c)
                    .sum();
                let fm: f64 = minus
                    .forward(x)
                    .unwrap()
                    .iter()
                    .zip(d)
                    .map(|(s, c)| s * c)
                    .sum();
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let diff: f64 = a
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
        diff / norm.max(1e-12)
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let archs = [
            Arch::Linear { d_in: 3 },
            Arch::Mlp {
                d_in: 3,
                hidden: vec![5],
            },
            Arch::Mlp {
                d_in: 2,
                hidden: vec![4, 3],
            },
        ];
        for trial in 0..100 {
            let arch = archs[trial % archs.len()].clone();
            let squash = trial % 2 == 0;
            let params = (0..arch.param_count())
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let model = ScoreModel::new(arch.clone(), params, squash).unwrap();
            let x = random_matrix(&mut rng, 6, arch.d_in());
            let d: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let err = rel_err(&model.backward(&x, &d).unwrap(), &fd_vjp(&model, &x, &d));
            assert!(err < 1e-5, "trial {trial} {arch}: {err}");
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let arch = Arch::Mlp {
            d_in: 3,
            hidden: vec![4, 2],
        };
        let model = ScoreModel::init(arch, true, 3).unwrap();
        let text = model.to_checkpoint_string();
        assert!(text.starts_with("arch=mlp d_in=3 hidden=4,2 squash=true\n"));
        let back = ScoreModel::parse_checkpoint(&text, Path::new("m")).unwrap();
        assert_eq!(back, model);

        let lin = ScoreModel::new(Arch::Linear { d_in: 1 }, vec![0.1, 1e-300], false).unwrap();
        let back =
            ScoreModel::parse_checkpoint(&lin.to_checkpoint_string(), Path::new("m")).unwrap();
        assert_eq!(back, lin);
        assert!(ScoreModel::parse_checkpoint(
            "arch=linear d_in=2 squash=true\n1\n",
            Path::new("m")
        )
        .is_err());
    }

    proptest::proptest! {
        #[test]
        fn squashed_scores_in_unit_interval(
            w in proptest::collection::vec(-3.0f64..3.0, 17),
            x in proptest::collection::vec(-10.0f64..10.0, 2),
        ) {
            let model = ScoreModel::new(Arch::Mlp { d_in: 2, hidden: vec![4] }, w, true).unwrap();
            let s = model.forward(&Matrix::new(1, 2, x).unwrap()).unwrap()[0];
            proptest::prop_assert!(s > 0.0 && s < 1.0);
        }
    }
}
