//! Neighborhood graphs over the instances of a bag and the smoothness
//! energies of per-instance attention values on them.
//!
//! The training losses use the quadratic forms `fᵀLf` (first order) and
//! `fᵀLLf = ‖Lf‖²` (second order). [`energy_sum_form`] evaluates the pairwise
//! sums literally and serves as an independent check; note that its second
//! order sum carries a `1/4` prefactor, so `energy_s2 == 4 * energy_sum_form(.., 2)`.

use crate::diffcore::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Adjacency, degree and Laplacian matrices of one bag. Immutable once built.
#[derive(Clone, Debug, PartialEq)]
pub struct BagGraph {
    n: usize,
    adjacency: Tensor,
    degree: Tensor,
    laplacian: Tensor,
}

impl BagGraph {
    /// Chain over instance order: `i` and `j` are related iff `|i - j| == 1`.
    pub fn chain(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::config(
                "n",
                "a bag graph needs at least one instance",
            ));
        }
        let mut a = Tensor::zeros(&[n, n]);
        for i in 0..n.saturating_sub(1) {
            a.data_mut()[i * n + i + 1] = 1.0;
            a.data_mut()[(i + 1) * n + i] = 1.0;
        }
        Self::from_adjacency(a)
    }

    /// Builds from an arbitrary binary, symmetric, zero-diagonal adjacency.
    pub fn from_adjacency(adjacency: Tensor) -> Result<Self> {
        let (n, m) = adjacency.dims2("adjacency")?;
        if n != m || n == 0 {
            return Err(Error::shape("adjacency", adjacency.shape(), &[n, n]));
        }
        for i in 0..n {
            for j in 0..n {
                let v = adjacency.at(i, j);
                if v != 0.0 && v != 1.0 {
                    return Err(Error::config(
                        "adjacency",
                        format!("entry ({i},{j}) is {v}, not 0/1"),
                    ));
                }
                if v != adjacency.at(j, i) {
                    return Err(Error::config(
                        "adjacency",
                        format!("not symmetric at ({i},{j})"),
                    ));
                }
                if i == j && v != 0.0 {
                    return Err(Error::config("adjacency", format!("self-loop at {i}")));
                }
            }
        }
        let mut degree = Tensor::zeros(&[n, n]);
        for i in 0..n {
            degree.data_mut()[i * n + i] = adjacency.row(i).iter().sum();
        }
        let laplacian = degree.zip_map(&adjacency, |d, a| d - a);
        Ok(BagGraph {
            n,
            adjacency,
            degree,
            laplacian,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn adjacency(&self) -> &Tensor {
        &self.adjacency
    }

    pub fn degree(&self) -> &Tensor {
        &self.degree
    }

    pub fn laplacian(&self) -> &Tensor {
        &self.laplacian
    }

    /// `D + A`, the matrix of the sign-flipped (competition) energy.
    pub fn signless_laplacian(&self) -> Tensor {
        self.degree.zip_map(&self.adjacency, |d, a| d + a)
    }

    fn check_len(&self, op: &'static str, len: usize) -> Result<()> {
        if len != self.n {
            return Err(Error::shape(op, &[len], &[self.n]));
        }
        Ok(())
    }
}

fn as_column(tape: &mut Tape, f: Var, g: &BagGraph, op: &'static str) -> Result<Var> {
    g.check_len(op, tape.value(f).len())?;
    tape.reshape(f, &[g.n, 1])
}

fn quadratic_form(
    tape: &mut Tape,
    f: Var,
    m: Tensor,
    g: &BagGraph,
    op: &'static str,
) -> Result<Var> {
    let col = as_column(tape, f, g, op)?;
    let m = tape.constant(m);
    let mf = tape.matmul(m, col)?;
    let prod = tape.mul(col, mf)?;
    tape.sum(prod)
}

/// First-order smoothness `fᵀLf`.
pub fn energy_s1(tape: &mut Tape, f: Var, g: &BagGraph) -> Result<Var> {
    quadratic_form(tape, f, g.laplacian.clone(), g, "energy_s1")
}

/// Second-order smoothness `fᵀLLf = ‖Lf‖²`.
pub fn energy_s2(tape: &mut Tape, f: Var, g: &BagGraph) -> Result<Var> {
    let col = as_column(tape, f, g, "energy_s2")?;
    let l = tape.constant(g.laplacian.clone());
    let lf = tape.matmul(l, col)?;
    let sq = tape.square(lf)?;
    tape.sum(sq)
}

/// Competition energy `½ΣΣ A_ij (f_i + f_j)² = fᵀ(D + A)f`.
pub fn energy_competition(tape: &mut Tape, f: Var, g: &BagGraph) -> Result<Var> {
    quadratic_form(tape, f, g.signless_laplacian(), g, "energy_competition")
}

/// Literal pairwise sums:
/// order 1 → `½ Σ_i Σ_j A_ij (f_i − f_j)²`,
/// order 2 → `¼ Σ_i (Σ_j A_ij (f_i − f_j))²`.
pub fn energy_sum_form(f: &[f64], g: &BagGraph, order: u8) -> Result<f64> {
    g.check_len("energy_sum_form", f.len())?;
    let n = g.n;
    let a = &g.adjacency;
    match order {
        1 => {
            let mut total = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let d = f[i] - f[j];
                    total += a.at(i, j) * d * d;
                }
            }
            Ok(0.5 * total)
        }
        2 => {
            let mut total = 0.0;
            for i in 0..n {
                let inner: f64 = (0..n).map(|j| a.at(i, j) * (f[i] - f[j])).sum();
                total += inner * inner;
            }
            Ok(0.25 * total)
        }
        _ => Err(Error::config(
            "order",
            format!("must be 1 or 2, got {order}"),
        )),
    }
}

/// Evaluates one of the tape energies on plain values.
pub fn energy_value(
    energy: fn(&mut Tape, Var, &BagGraph) -> Result<Var>,
    f: &[f64],
    g: &BagGraph,
) -> Result<f64> {
    let mut tape = Tape::new();
    let fv = tape.constant(Tensor::vector(f.to_vec())?);
    let e = energy(&mut tape, fv, g)?;
    tape.scalar(e)
}
