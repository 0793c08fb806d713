//! Hard-coded reference geometries.
//!
//! The three-dimensional instances put key coordinates in the first two slots
//! and the score in the third: `W = diag(1, 1, 0)` and `v = e_3`, so a token
//! `(k1, k2, γ)` has key `(k1, k2, 0)` and score `Y γ`.

use serde::Serialize;

use crate::dataset::TokenDataset;
use crate::error::{Error, Result};
use crate::linalg::{matrix_from_rows, Matrix, Vector};

#[derive(Clone, Debug)]
pub struct BuiltinInstance {
    pub name: &'static str,
    pub dataset: TokenDataset,
    pub v: Vector,
    /// Coordinates read off a plot rather than stated exactly.
    pub approximate: bool,
    pub note: &'static str,
}

#[derive(Debug, Serialize)]
pub struct InstanceMeta {
    pub name: &'static str,
    pub approximate: bool,
    pub note: &'static str,
}

impl BuiltinInstance {
    pub fn meta(&self) -> InstanceMeta {
        InstanceMeta { name: self.name, approximate: self.approximate, note: self.note }
    }

    pub fn keys(&self) -> Vec<Matrix> {
        self.dataset.keys()
    }
}

pub const BUILTIN_NAMES: [&str; 6] = ["fig1a", "fig1b", "fig1c", "fig2a", "fig2b", "loss_bias"];

fn mat(rows: &[[f64; 3]]) -> Matrix {
    matrix_from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).expect("rectangular")
}

fn mat2(rows: &[[f64; 2]]) -> Matrix {
    matrix_from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).expect("rectangular")
}

fn score_plane(inputs: Vec<Matrix>, labels: Vec<f64>) -> TokenDataset {
    let w = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 1.0, 0.0]));
    TokenDataset::from_key_query(inputs, labels, w).expect("valid builtin")
}

fn e3() -> Vector {
    Vector::from_vec(vec![0.0, 0.0, 1.0])
}

/// Keys (0,0), (1,0), (−0.1,1) with scores 0, 0, 1.
pub fn fig1a() -> BuiltinInstance {
    BuiltinInstance {
        name: "fig1a",
        dataset: score_plane(vec![mat(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-0.1, 1.0, 1.0]])], vec![1.0]),
        v: e3(),
        approximate: true,
        note: "single input; the optimal token sits at (-0.1, 1)",
    }
}

/// Same keys as `fig1a`, scores 0, 0.9, 1: the (1,0) token is locally but not globally optimal.
pub fn fig1b() -> BuiltinInstance {
    BuiltinInstance {
        name: "fig1b",
        dataset: score_plane(vec![mat(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.9], [-0.1, 1.0, 1.0]])], vec![1.0]),
        v: e3(),
        approximate: true,
        note: "score 0.9 at (1, 0) gives a second locally optimal direction",
    }
}

/// Two inputs: the `fig1a` input and keys (0,0), (−1,−0.5), (1,0.8) with scores 0, 0, 1.
pub fn fig1c() -> BuiltinInstance {
    BuiltinInstance {
        name: "fig1c",
        dataset: score_plane(
            vec![
                mat(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [-0.1, 1.0, 1.0]]),
                mat(&[[0.0, 0.0, 0.0], [-1.0, -0.5, 0.0], [1.0, 0.8, 1.0]]),
            ],
            vec![1.0, 1.0],
        ),
        v: e3(),
        approximate: true,
        note: "second input's coordinates are read from the plot",
    }
}

/// `T = d = 2`, `W = I`; optimal tokens (−1,1), (0.5,1), (1,1), each paired with (0,0).
pub fn fig2a() -> BuiltinInstance {
    let inputs = vec![
        mat2(&[[-1.0, 1.0], [0.0, 0.0]]),
        mat2(&[[0.5, 1.0], [0.0, 0.0]]),
        mat2(&[[1.0, 1.0], [0.0, 0.0]]),
    ];
    BuiltinInstance {
        name: "fig2a",
        dataset: TokenDataset::from_key_query(inputs, vec![1.0; 3], Matrix::identity(2, 2)).expect("valid builtin"),
        v: Vector::from_vec(vec![0.0, 1.0]),
        approximate: false,
        note: "every optimal token is a label-SVM support vector",
    }
}

/// As `fig2a`, with the middle input's optimal token lifted to (0.5,1.5) and a
/// competing token (−1,1.2) added to it, so that input is not a support vector.
pub fn fig2b() -> BuiltinInstance {
    let inputs = vec![
        Matrix::from_row_slice(2, 2, &[-1.0, 1.0, 0.0, 0.0]),
        Matrix::from_row_slice(3, 2, &[0.5, 1.5, 0.0, 0.0, -1.0, 1.2]),
        Matrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 0.0]),
    ];
    BuiltinInstance {
        name: "fig2b",
        dataset: TokenDataset::from_key_query(inputs, vec![1.0; 3], Matrix::identity(2, 2)).expect("valid builtin"),
        v: Vector::from_vec(vec![0.0, 1.0]),
        approximate: true,
        note: "extra token (-1, 1.2) in the non-support input separates the relaxed and full SVM directions",
    }
}

/// Two inputs with one optimal token each, of scores 1 and `c`.
pub fn loss_bias(c: f64) -> Result<BuiltinInstance> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidInput(format!("score ratio C = {c} must be positive")));
    }
    Ok(BuiltinInstance {
        name: "loss_bias",
        dataset: score_plane(
            vec![mat(&[[0.0, 0.0, 0.0], [1.0, 0.0, 1.0]]), mat(&[[0.0, 0.0, 0.0], [0.0, 1.0, c]])],
            vec![1.0, 1.0],
        ),
        v: e3(),
        approximate: false,
        note: "optimal tokens on orthogonal keys with scores 1 and C",
    })
}

pub fn builtin(name: &str) -> Result<BuiltinInstance> {
    match name {
        "fig1a" => Ok(fig1a()),
        "fig1b" => Ok(fig1b()),
        "fig1c" => Ok(fig1c()),
        "fig2a" => Ok(fig2a()),
        "fig2b" => Ok(fig2b()),
        "loss_bias" => loss_bias(3.0),
        other => Err(Error::InvalidInput(format!("unknown builtin instance `{other}`"))),
    }
}
