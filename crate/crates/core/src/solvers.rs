//! Dense least squares: pivoted QR with rank detection, the row-stacked
//! coupled variant used by every ALS step, and an active-set NNLS.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Columns whose pivoted-QR diagonal falls below this fraction of the
/// leading diagonal entry are treated as numerically dependent.
pub const RANK_RTOL: f64 = 1e-10;

/// NNLS stops once no inactive gradient entry exceeds this multiple of
/// `||A||_F * ||b||`.
pub const NNLS_GRAD_RTOL: f64 = 1e-12;

/// Outer iteration cap of NNLS per unknown.
pub const NNLS_ITER_PER_UNKNOWN: usize = 30;

#[derive(Debug, Clone)]
pub struct LsqSolution {
    pub x: DMatrix<f64>,
    /// Numerical rank of the left-hand side.
    pub rank: usize,
    /// True when `rank` is below the column count; `x` is then the
    /// minimum-norm minimizer.
    pub rank_deficient: bool,
}

#[derive(Debug, Clone)]
pub struct NnlsSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// False when the iteration cap was hit; `x` is still feasible.
    pub converged: bool,
}

struct Reflector {
    start: usize,
    v: DVector<f64>,
    beta: f64,
}

impl Reflector {
    fn apply(&self, m: &mut DMatrix<f64>, first_col: usize) {
        let len = self.v.len();
        for col in first_col..m.ncols() {
            let mut dot = 0.0;
            for i in 0..len {
                dot += self.v[i] * m[(self.start + i, col)];
            }
            let scale = self.beta * dot;
            if scale != 0.0 {
                for i in 0..len {
                    m[(self.start + i, col)] -= scale * self.v[i];
                }
            }
        }
    }
}

/// Householder QR, optionally with column pivoting. `r` is overwritten in
/// place; `perm[i]` is the original index of column `i` of the factored
/// matrix.
struct Qr {
    r: DMatrix<f64>,
    reflectors: Vec<Reflector>,
    perm: Vec<usize>,
}

impl Qr {
    fn factor(mut a: DMatrix<f64>, pivot: bool) -> Self {
        let (p, q) = a.shape();
        let steps = p.min(q);
        let mut perm: Vec<usize> = (0..q).collect();
        let mut reflectors = Vec::with_capacity(steps);
        for k in 0..steps {
            if pivot {
                let mut best = k;
                let mut best_norm = -1.0;
                for j in k..q {
                    let norm: f64 = (k..p).map(|i| a[(i, j)] * a[(i, j)]).sum();
                    if norm > best_norm {
                        best_norm = norm;
                        best = j;
                    }
                }
                if best != k {
                    a.swap_columns(k, best);
                    perm.swap(k, best);
                }
            }
            let x: DVector<f64> = a.view((k, k), (p - k, 1)).column(0).into_owned();
            let norm = x.norm();
            if norm == 0.0 {
                continue;
            }
            let alpha = if x[0] >= 0.0 { -norm } else { norm };
            let mut v = x;
            v[0] -= alpha;
            let vtv = v.norm_squared();
            if vtv == 0.0 {
                continue;
            }
            let refl = Reflector {
                start: k,
                v,
                beta: 2.0 / vtv,
            };
            refl.apply(&mut a, k);
            // clean the annihilated part of the column
            a[(k, k)] = alpha;
            for i in k + 1..p {
                a[(i, k)] = 0.0;
            }
            reflectors.push(refl);
        }
        Self {
            r: a,
            reflectors,
            perm,
        }
    }

    fn apply_qt(&self, b: &mut DMatrix<f64>) {
        for refl in &self.reflectors {
            refl.apply(b, 0);
        }
    }

    fn apply_q(&self, b: &mut DMatrix<f64>) {
        for refl in self.reflectors.iter().rev() {
            refl.apply(b, 0);
        }
    }

    fn numerical_rank(&self) -> usize {
        let steps = self.r.nrows().min(self.r.ncols());
        if steps == 0 {
            return 0;
        }
        let lead = self.r[(0, 0)].abs();
        if lead == 0.0 || !lead.is_finite() {
            return 0;
        }
        (0..steps)
            .take_while(|&i| self.r[(i, i)].abs() > RANK_RTOL * lead)
            .count()
    }
}

/// Minimizes `||a x - b||_F` over `x`, returning the minimum-norm solution
/// when `a` is numerically rank deficient.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<LsqSolution> {
    let (p, q) = a.shape();
    if b.nrows() != p {
        return Err(Error::Shape(format!(
            "lstsq: lhs has {p} rows, rhs has {}",
            b.nrows()
        )));
    }
    let t = b.ncols();
    if q == 0 {
        return Ok(LsqSolution {
            x: DMatrix::zeros(0, t),
            rank: 0,
            rank_deficient: false,
        });
    }
    let qr = Qr::factor(a.clone(), true);
    let rank = qr.numerical_rank();
    let mut qtb = b.clone();
    qr.apply_qt(&mut qtb);

    let mut x = DMatrix::zeros(q, t);
    if rank == 0 {
        return Ok(LsqSolution {
            x,
            rank,
            rank_deficient: true,
        });
    }

    let w = if rank == q {
        back_substitute(&qr.r, rank, &qtb)
    } else {
        // Complete orthogonal decomposition: [R11 R12] = R2^T Q2^T, then the
        // minimum-norm solution is Q2 R2^{-T} c.
        let trap = qr.r.view((0, 0), (rank, q)).transpose();
        let second = Qr::factor(trap, false);
        let mut w = DMatrix::zeros(q, t);
        for col in 0..t {
            for i in 0..rank {
                let mut acc = qtb[(i, col)];
                for l in 0..i {
                    acc -= second.r[(l, i)] * w[(l, col)];
                }
                w[(i, col)] = acc / second.r[(i, i)];
            }
        }
        second.apply_q(&mut w);
        w
    };
    for (i, &orig) in qr.perm.iter().enumerate() {
        x.set_row(orig, &w.row(i));
    }
    Ok(LsqSolution {
        x,
        rank,
        rank_deficient: rank < q,
    })
}

fn back_substitute(r: &DMatrix<f64>, n: usize, rhs: &DMatrix<f64>) -> DMatrix<f64> {
    let t = rhs.ncols();
    let mut w = DMatrix::zeros(n, t);
    for col in 0..t {
        for i in (0..n).rev() {
            let mut acc = rhs[(i, col)];
            for l in i + 1..n {
                acc -= r[(i, l)] * w[(l, col)];
            }
            w[(i, col)] = acc / r[(i, i)];
        }
    }
    w
}

/// Minimizes `||a1 x - b1||^2 + lambda ||a2 x - b2||^2` by row-stacking
/// `[a1; sqrt(lambda) a2]` against `[b1; sqrt(lambda) b2]`.
pub fn stacked_lstsq(
    a1: &DMatrix<f64>,
    b1: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    b2: &DMatrix<f64>,
    lambda: f64,
) -> Result<LsqSolution> {
    let (a, b) = stack(a1, b1, a2, b2, lambda)?;
    lstsq(&a, &b)
}

/// Builds the stacked system used by [`stacked_lstsq`].
pub fn stack(
    a1: &DMatrix<f64>,
    b1: &DMatrix<f64>,
    a2: &DMatrix<f64>,
    b2: &DMatrix<f64>,
    lambda: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!(
            "coupling weight must be finite and nonnegative, got {lambda}"
        )));
    }
    if a1.ncols() != a2.ncols() || b1.ncols() != b2.ncols() {
        return Err(Error::Shape(format!(
            "stacked blocks disagree: lhs cols {} vs {}, rhs cols {} vs {}",
            a1.ncols(),
            a2.ncols(),
            b1.ncols(),
            b2.ncols()
        )));
    }
    if a1.nrows() != b1.nrows() || a2.nrows() != b2.nrows() {
        return Err(Error::Shape("stacked blocks have mismatched row counts".into()));
    }
    let w = lambda.sqrt();
    let (p1, p2) = (a1.nrows(), a2.nrows());
    let mut a = DMatrix::zeros(p1 + p2, a1.ncols());
    a.rows_mut(0, p1).copy_from(a1);
    a.rows_mut(p1, p2).copy_from(&(a2 * w));
    let mut b = DMatrix::zeros(p1 + p2, b1.ncols());
    b.rows_mut(0, p1).copy_from(b1);
    b.rows_mut(p1, p2).copy_from(&(b2 * w));
    Ok((a, b))
}

/// Lawson-Hanson active-set NNLS: minimizes `||a x - b||^2` subject to
/// `x >= 0`. The entering variable is always the one with the largest
/// gradient component; the iteration cap is `30 * q`.
pub fn nnls(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<NnlsSolution> {
    let (p, q) = a.shape();
    if b.len() != p {
        return Err(Error::Shape(format!("nnls: lhs has {p} rows, rhs has {}", b.len())));
    }
    let mut x = DVector::zeros(q);
    let scale = a.norm() * b.norm();
    if q == 0 || scale == 0.0 {
        return Ok(NnlsSolution {
            x,
            iterations: 0,
            converged: true,
        });
    }
    let tol = NNLS_GRAD_RTOL * scale;
    let cap = NNLS_ITER_PER_UNKNOWN * q;
    let mut passive = vec![false; q];
    let mut iterations = 0;

    loop {
        let grad = a.transpose() * (b - a * &x);
        let entering = (0..q)
            .filter(|&j| !passive[j] && grad[j] > tol)
            .max_by(|&i, &j| grad[i].total_cmp(&grad[j]));
        let Some(entering) = entering else {
            return Ok(NnlsSolution {
                x,
                iterations,
                converged: true,
            });
        };
        if iterations >= cap {
            return Ok(NnlsSolution {
                x,
                iterations,
                converged: false,
            });
        }
        iterations += 1;
        passive[entering] = true;

        loop {
            let z = solve_on_support(a, b, &passive)?;
            if z[entering] <= 0.0 && x[entering] == 0.0 {
                // Gradient says "enter" but the subproblem disagrees: the
                // remaining violation is at rounding level.
                passive[entering] = false;
                return Ok(NnlsSolution {
                    x,
                    iterations,
                    converged: true,
                });
            }
            let infeasible = (0..q).any(|j| passive[j] && z[j] <= 0.0);
            if !infeasible {
                x = z;
                break;
            }
            iterations += 1;
            let alpha = (0..q)
                .filter(|&j| passive[j] && z[j] <= 0.0)
                .map(|j| x[j] / (x[j] - z[j]))
                .fold(f64::INFINITY, f64::min);
            for j in 0..q {
                if passive[j] {
                    x[j] += alpha * (z[j] - x[j]);
                }
            }
            let xmax = x.amax();
            for j in 0..q {
                if passive[j] && x[j] <= 1e-15 * xmax.max(f64::MIN_POSITIVE) {
                    passive[j] = false;
                    x[j] = 0.0;
                }
            }
            if iterations >= cap {
                return Ok(NnlsSolution {
                    x,
                    iterations,
                    converged: false,
                });
            }
        }
    }
}

fn solve_on_support(a: &DMatrix<f64>, b: &DVector<f64>, passive: &[bool]) -> Result<DVector<f64>> {
    let cols: Vec<usize> = (0..passive.len()).filter(|&j| passive[j]).collect();
    let sub = a.select_columns(&cols);
    let sol = lstsq(&sub, &DMatrix::from_column_slice(b.len(), 1, b.as_slice()))?;
    let mut z = DVector::zeros(passive.len());
    for (i, &j) in cols.iter().enumerate() {
        z[j] = sol.x[(i, 0)];
    }
    Ok(z)
}

/// NNLS where the columns flagged in `free` are sign-unconstrained.
///
/// The free block is eliminated by projecting onto the orthogonal
/// complement of its range; the constrained block is solved by [`nnls`] on
/// the projected system and the free coordinates are then recovered in
/// closed form.
pub fn nnls_with_free(a: &DMatrix<f64>, b: &DVector<f64>, free: &[bool]) -> Result<NnlsSolution> {
    let q = a.ncols();
    if free.len() != q {
        return Err(Error::Shape(format!(
            "free mask has {} entries for {q} columns",
            free.len()
        )));
    }
    let free_cols: Vec<usize> = (0..q).filter(|&j| free[j]).collect();
    if free_cols.is_empty() {
        return nnls(a, b);
    }
    let con_cols: Vec<usize> = (0..q).filter(|&j| !free[j]).collect();
    let a_free = a.select_columns(&free_cols);
    let a_con = a.select_columns(&con_cols);

    let basis = orthonormal_range(&a_free);
    let project = |m: &DMatrix<f64>| -> DMatrix<f64> { m - &basis * (basis.transpose() * m) };
    let a_proj = project(&a_con);
    let b_proj = project(&DMatrix::from_column_slice(b.len(), 1, b.as_slice()));
    let con = nnls(&a_proj, &b_proj.column(0).into_owned())?;

    let resid = b - &a_con * &con.x;
    let free_sol = lstsq(&a_free, &DMatrix::from_column_slice(resid.len(), 1, resid.as_slice()))?;

    let mut x = DVector::zeros(q);
    for (i, &j) in con_cols.iter().enumerate() {
        x[j] = con.x[i];
    }
    for (i, &j) in free_cols.iter().enumerate() {
        x[j] = free_sol.x[(i, 0)];
    }
    Ok(NnlsSolution {
        x,
        iterations: con.iterations,
        converged: con.converged,
    })
}

/// Orthonormal basis (as columns) of the numerical range of `a`.
fn orthonormal_range(a: &DMatrix<f64>) -> DMatrix<f64> {
    let p = a.nrows();
    let qr = Qr::factor(a.clone(), true);
    let rank = qr.numerical_rank();
    let mut basis = DMatrix::zeros(p, rank);
    for i in 0..rank {
        basis[(i, i)] = 1.0;
    }
    qr.apply_q(&mut basis);
    basis
}
