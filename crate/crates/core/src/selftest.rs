//! Fast internal consistency checks behind the `selftest` subcommand:
//! analytic gradients against central finite differences, rotation
//! orthogonality, shuffle multiset preservation and end-to-end determinism.

use crate::algorithms::{Method, Objective};
use crate::harness::{run_benchmark, SearchSpace};
use crate::math::{sample_rotation, Mat, RngStream};
use crate::models::LinearModel;
use crate::problems::{shuffle_spurious, ProblemSpec, Split, Task};
use crate::report::write_records;
use crate::Result;

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub const FD_STEP: f64 = 1e-6;
pub const GRAD_TOL: f64 = 1e-5;

fn central_difference(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let up = f(&probe);
            probe[k] = x[k] - h;
            let down = f(&probe);
            probe[k] = x[k];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn random_split(task: Task, s: &mut RngStream) -> Split {
    let n = 10 + (s.next_u64() % 40) as usize;
    let d = 1 + (s.next_u64() % 6) as usize;
    let x = Mat::from_vec(n, d, (0..n * d).map(|_| s.standard_normal()).collect()).expect("sized");
    let y = (0..n)
        .map(|i| match task {
            Task::Regression => x.row(i)[0] + 0.5 * s.standard_normal(),
            Task::Classification => f64::from(s.bernoulli(0.5)),
        })
        .collect();
    Split {
        x,
        y,
        task,
        env_index: 0,
    }
}

fn gradient_check(cases: usize, seed: u64) -> Check {
    let mut s = RngStream::new(seed);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let task = if case % 2 == 0 {
            Task::Regression
        } else {
            Task::Classification
        };
        let first = random_split(task, &mut s);
        let d = first.dim();
        let mut splits = vec![first];
        while splits.len() < 3 {
            let cand = random_split(task, &mut s);
            if cand.dim() == d {
                splits.push(cand);
            }
        }
        let theta: Vec<f64> = (0..=d).map(|_| 0.5 * s.standard_normal()).collect();
        let lambda = 10f64.powf(s.uniform_range(-1.0, 2.0));

        let model = LinearModel::from_params(&theta, task);
        let rg = model.risk_and_grad(&splits[0]).expect("valid split");
        let mut analytic = rg.grad_w.clone();
        analytic.push(rg.grad_b);
        let fd = central_difference(
            |p| {
                LinearModel::from_params(p, task)
                    .risk_and_grad(&splits[0])
                    .unwrap()
                    .risk
            },
            &theta,
            FD_STEP,
        );
        worst = worst.max(relative_error(&analytic, &fd));

        let scale = model.scale_risk_grad(&splits[0]).expect("valid split");
        let fd_scale = central_difference(
            |a| {
                let scaled = LinearModel::from_params(
                    &theta.iter().map(|t| t * a[0]).collect::<Vec<_>>(),
                    task,
                );
                scaled.risk_and_grad(&splits[0]).unwrap().risk
            },
            &[1.0],
            FD_STEP,
        );
        worst = worst.max(relative_error(&[scale], &fd_scale));

        let obj = Objective::new(&splits).expect("consistent splits");
        let irm = obj.grad_irmv1(&theta, lambda, false).grad;
        let fd_irm = central_difference(
            |p| obj.grad_irmv1(p, lambda, true).value.unwrap(),
            &theta,
            FD_STEP,
        );
        worst = worst.max(relative_error(&irm, &fd_irm));

        let iga = obj.grad_iga(&theta, lambda, false).grad;
        let fd_iga = central_difference(
            |p| obj.grad_iga(p, lambda, true).value.unwrap(),
            &theta,
            FD_STEP,
        );
        worst = worst.max(relative_error(&iga, &fd_iga));
    }
    Check {
        name: "gradients vs finite differences",
        passed: worst <= GRAD_TOL,
        detail: format!("{cases} cases, worst relative error {worst:.2e}"),
    }
}

fn rotation_check() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let mut s = RngStream::new(seed);
        for d in [1, 2, 10, 64] {
            let r = sample_rotation(&mut s, d);
            let err = r
                .transpose()
                .matmul(&r)
                .expect("square")
                .max_abs_diff(&Mat::identity(d));
            worst = worst.max(err);
        }
    }
    Check {
        name: "rotation orthogonality",
        passed: worst <= 1e-10,
        detail: format!("max |SᵀS − I| = {worst:.2e}"),
    }
}

fn shuffle_check() -> Check {
    let mut s = RngStream::new(17);
    let split = random_split(Task::Classification, &mut s);
    let d_inv = split.dim() / 2;
    let out = shuffle_spurious(&split, d_inv, &mut s);
    let rows = |sp: &Split| {
        let mut v: Vec<Vec<f64>> = sp.x.row_iter().map(|r| r[d_inv..].to_vec()).collect();
        v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        v
    };
    let inv_same = split
        .x
        .row_iter()
        .zip(out.x.row_iter())
        .all(|(a, b)| a[..d_inv] == b[..d_inv]);
    Check {
        name: "shuffle preserves spurious multiset",
        passed: rows(&split) == rows(&out) && inv_same && split.y == out.y,
        detail: format!("{} rows", split.len()),
    }
}

fn determinism_check() -> Result<Check> {
    let spec: ProblemSpec = "example2s".parse::<ProblemSpec>()?.with_n_per_env(100);
    let space = SearchSpace {
        n_trials: 2,
        steps: 30,
        ..SearchSpace::default()
    };
    let run = || -> Result<Vec<u8>> {
        let recs = run_benchmark(&spec, &Method::ALL, &space, 2, &RngStream::new(42))?;
        let mut buf = Vec::new();
        write_records(&recs, &mut buf)?;
        Ok(buf)
    };
    let (a, b) = (run()?, run()?);
    Ok(Check {
        name: "end-to-end determinism",
        passed: a == b,
        detail: format!("{} bytes", a.len()),
    })
}

pub fn run_all() -> Result<Vec<Check>> {
    Ok(vec![
        gradient_check(100, 2024),
        rotation_check(),
        shuffle_check(),
        determinism_check()?,
    ])
}
