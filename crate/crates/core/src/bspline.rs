//! Clamped B-spline bases with quantile knot placement, value / derivative
//! / antiderivative design matrices and spline evaluation.
//!
//! Evaluation outside `[knots_min, knots_max]` extends the polynomial piece
//! of the nearest boundary span. At `knots_max` the last basis function
//! equals one (closed right end).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the spline coefficients relate to a branch function `g`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// The spline models `g`; `g'` is its derivative.
    G,
    /// The spline models `g'`; `g` is its antiderivative plus a constant.
    #[serde(rename = "gprime")]
    GPrime,
}

impl std::str::FromStr for Representation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "g" => Ok(Representation::G),
            "gprime" | "g'" | "g-prime" => Ok(Representation::GPrime),
            other => Err(Error::Config(format!("unknown representation {other:?}"))),
        }
    }
}

/// Constant column prepended by [`augment`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Augment {
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    degree: usize,
    knots: Vec<f64>,
}

impl SplineBasis {
    /// Validates a clamped knot vector for the given degree.
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self> {
        if knots.len() < 2 * (degree + 1) {
            return Err(Error::Knots(format!(
                "{} knots cannot form a clamped basis of degree {degree}",
                knots.len()
            )));
        }
        if knots.iter().any(|k| !k.is_finite()) {
            return Err(Error::Knots("knots must be finite".into()));
        }
        if knots.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Knots("knots must be nondecreasing".into()));
        }
        let (lo, hi) = (knots[0], knots[knots.len() - 1]);
        if !(lo < hi) {
            return Err(Error::Knots(format!("degenerate knot domain [{lo}, {hi}]")));
        }
        let clamped_left = knots[..=degree].iter().all(|&k| k == lo);
        let clamped_right = knots[knots.len() - degree - 1..].iter().all(|&k| k == hi);
        if !clamped_left || !clamped_right {
            return Err(Error::Knots(format!(
                "boundary knots must be repeated {} times",
                degree + 1
            )));
        }
        Ok(Self { degree, knots })
    }

    /// Places knots at quantiles of `x`: boundary knots at `min(x)` and
    /// `max(x)` with multiplicity `degree + 1`, and `df - degree - 1`
    /// interior knots at the `i / (K + 1)` sample quantiles.
    ///
    /// Quantiles interpolate linearly between order statistics: for sorted
    /// `x_(0..N)` and level `q`, with `h = (N - 1) q`, the quantile is
    /// `x_(floor h) + (h - floor h) (x_(floor h + 1) - x_(floor h))`.
    pub fn from_quantiles(x: &[f64], df: usize, degree: usize) -> Result<Self> {
        if df <= degree {
            return Err(Error::Knots(format!(
                "degrees of freedom ({df}) must exceed the degree ({degree})"
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample for knot placement".into()));
        }
        let mut sorted = x.to_vec();
        sorted.sort_by(f64::total_cmp);
        let distinct = 1 + sorted.windows(2).filter(|w| w[1] > w[0]).count();
        if sorted.is_empty() || sorted[0] == sorted[sorted.len() - 1] {
            return Err(Error::Knots("samples are all equal".into()));
        }
        if distinct < df + 1 {
            return Err(Error::Knots(format!(
                "{distinct} distinct samples, need at least {}",
                df + 1
            )));
        }
        let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
        let interior = df - degree - 1;
        let mut knots = Vec::with_capacity(df + degree + 1);
        knots.extend(std::iter::repeat_n(lo, degree + 1));
        for i in 1..=interior {
            knots.push(quantile_sorted(&sorted, i as f64 / (interior + 1) as f64));
        }
        knots.extend(std::iter::repeat_n(hi, degree + 1));
        Self::new(knots, degree)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of basis functions.
    pub fn df(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// True when two interior knots coincide or an interior knot sits on a
    /// boundary, lowering continuity there.
    pub fn has_coincident_knots(&self) -> bool {
        let inner = &self.knots[self.degree..self.knots.len() - self.degree];
        inner.windows(2).any(|w| w[0] == w[1])
    }

    /// Knot span index `s` (`degree <= s < df`) with `t_s <= u < t_{s+1}`;
    /// out-of-domain points map to the boundary spans.
    fn span(&self, u: f64) -> usize {
        let (p, nb) = (self.degree, self.df());
        let t = &self.knots;
        if u >= t[nb] {
            let mut s = nb - 1;
            while t[s] == t[s + 1] {
                s -= 1;
            }
            return s;
        }
        if u < t[p] {
            let mut s = p;
            while t[s] == t[s + 1] {
                s += 1;
            }
            return s;
        }
        // largest s in [p, nb) with t_s <= u
        p + self.knots[p..nb].partition_point(|&k| k <= u) - 1
    }

    /// Values of the `degree + 1` functions of degree `deg` (<= own degree)
    /// that are nonzero on `span`, evaluated as the span's polynomial at `u`
    /// (triangular Cox-de Boor scheme). Entry `l` belongs to basis index
    /// `span - deg + l`.
    fn local_basis(&self, span: usize, u: f64, deg: usize) -> Vec<f64> {
        let t = &self.knots;
        let mut n = vec![0.0; deg + 1];
        let mut left = vec![0.0; deg + 1];
        let mut right = vec![0.0; deg + 1];
        n[0] = 1.0;
        for j in 1..=deg {
            left[j] = u - t[span + 1 - j];
            right[j] = t[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = if denom == 0.0 { 0.0 } else { n[r] / denom };
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        n
    }

    /// `S x df` matrix of basis values `B_{j,degree}(u_s)`.
    pub fn design_matrix(&self, u: &[f64]) -> DMatrix<f64> {
        let p = self.degree;
        let mut out = DMatrix::zeros(u.len(), self.df());
        for (row, &x) in u.iter().enumerate() {
            let span = self.span(x);
            for (l, v) in self.local_basis(span, x, p).into_iter().enumerate() {
                out[(row, span - p + l)] = v;
            }
        }
        out
    }

    /// `S x df` matrix of basis derivatives `B'_{j,degree}(u_s)`.
    pub fn derivative_design_matrix(&self, u: &[f64]) -> Result<DMatrix<f64>> {
        let p = self.degree;
        if p == 0 {
            return Err(Error::Spline(
                "degree-0 basis has no pointwise derivative".into(),
            ));
        }
        let t = &self.knots;
        let pf = p as f64;
        let mut out = DMatrix::zeros(u.len(), self.df());
        for (row, &x) in u.iter().enumerate() {
            let span = self.span(x);
            // lower-degree functions nonzero on the span: indices span-p+1 ..= span
            let lower = self.local_basis(span, x, p - 1);
            let lower_at = |idx: usize| -> f64 {
                if idx + p < span + 1 || idx > span {
                    0.0
                } else {
                    lower[idx + p - 1 - span]
                }
            };
            for j in span - p..=span {
                let mut d = 0.0;
                let den1 = t[j + p] - t[j];
                if den1 > 0.0 {
                    d += lower_at(j) / den1;
                }
                let den2 = t[j + p + 1] - t[j + 1];
                if den2 > 0.0 {
                    d -= lower_at(j + 1) / den2;
                }
                out[(row, j)] = pf * d;
            }
        }
        Ok(out)
    }

    /// `S x df` matrix of `integral_{knots_min}^{u_s} B_{j,degree}(t) dt`.
    ///
    /// Uses the antiderivative identity on the knot vector extended by one
    /// extra boundary knot at each end:
    /// `int B_{j,p} = (t_{j+p+1} - t_j) / (p + 1) * sum_{i > j} B_{i,p+1}`.
    pub fn integral_design_matrix(&self, u: &[f64]) -> DMatrix<f64> {
        let p = self.degree;
        let df = self.df();
        let (lo, hi) = self.domain();
        let mut ext = Vec::with_capacity(self.knots.len() + 2);
        ext.push(lo);
        ext.extend_from_slice(&self.knots);
        ext.push(hi);
        let up = SplineBasis {
            degree: p + 1,
            knots: ext,
        };
        let widths: Vec<f64> = (0..df)
            .map(|j| (self.knots[j + p + 1] - self.knots[j]) / (p + 1) as f64)
            .collect();
        let mut out = DMatrix::zeros(u.len(), df);
        let mut up_vals = vec![0.0; df + 1];
        for (row, &x) in u.iter().enumerate() {
            up_vals.iter_mut().for_each(|v| *v = 0.0);
            let span = up.span(x);
            for (l, v) in up.local_basis(span, x, p + 1).into_iter().enumerate() {
                up_vals[span - (p + 1) + l] = v;
            }
            // suffix sums over the raised basis
            let mut tail = 0.0;
            for j in (0..df).rev() {
                tail += up_vals[j + 1];
                out[(row, j)] = widths[j] * tail;
            }
        }
        out
    }
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Prepends a constant column (zeros or ones) for the constant term `c_0`.
pub fn augment(m: &DMatrix<f64>, kind: Augment) -> DMatrix<f64> {
    let fill = match kind {
        Augment::Zeros => 0.0,
        Augment::Ones => 1.0,
    };
    let mut out = DMatrix::from_element(m.nrows(), m.ncols() + 1, fill);
    out.columns_mut(1, m.ncols()).copy_from(m);
    out
}

/// A univariate branch function `g` stored by its spline coefficients
/// `[c_0, c_1, .., c_df]` (constant term first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplineFunction {
    basis: SplineBasis,
    coeffs: Vec<f64>,
    representation: Representation,
}

impl SplineFunction {
    pub fn new(basis: SplineBasis, coeffs: Vec<f64>, representation: Representation) -> Result<Self> {
        if coeffs.len() != basis.df() + 1 {
            return Err(Error::Spline(format!(
                "expected {} coefficients, got {}",
                basis.df() + 1,
                coeffs.len()
            )));
        }
        if representation == Representation::G && basis.degree() == 0 {
            return Err(Error::Spline(
                "a degree-0 spline for g has no pointwise derivative".into(),
            ));
        }
        Ok(Self {
            basis,
            coeffs,
            representation,
        })
    }

    pub fn basis(&self) -> &SplineBasis {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn representation(&self) -> Representation {
        self.representation
    }

    fn spline_part(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.coeffs[1..])
    }

    /// Branch values `g(u)`.
    pub fn eval(&self, u: &[f64]) -> Vec<f64> {
        let m = match self.representation {
            Representation::G => self.basis.design_matrix(u),
            Representation::GPrime => self.basis.integral_design_matrix(u),
        };
        let c0 = self.coeffs[0];
        (m * self.spline_part()).iter().map(|v| c0 + v).collect()
    }

    /// Branch derivatives `g'(u)`.
    pub fn eval_derivative(&self, u: &[f64]) -> Vec<f64> {
        let m = match self.representation {
            Representation::G => self
                .basis
                .derivative_design_matrix(u)
                .expect("degree checked at construction"),
            Representation::GPrime => self.basis.design_matrix(u),
        };
        (m * self.spline_part()).iter().copied().collect()
    }

    /// B-spline coefficients of `g'` on the basis whose nonnegativity
    /// certifies monotonicity: the stored coefficients for `GPrime`, and the
    /// knot-difference coefficients `p (c_{k+1} - c_k) / (t_{k+p+1} - t_{k+1})`
    /// for `G`.
    pub fn derivative_coefficients(&self) -> Vec<f64> {
        let c = &self.coeffs[1..];
        match self.representation {
            Representation::GPrime => c.to_vec(),
            Representation::G => {
                let p = self.basis.degree();
                let t = self.basis.knots();
                (0..c.len() - 1)
                    .map(|k| {
                        let den = t[k + p + 1] - t[k + 1];
                        if den > 0.0 {
                            p as f64 * (c[k + 1] - c[k]) / den
                        } else {
                            0.0
                        }
                    })
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Textbook recursive Cox-de Boor definition with half-open supports and
    /// the right end closed onto the last nondegenerate interval.
    fn cox_de_boor(t: &[f64], j: usize, p: usize, u: f64) -> f64 {
        if p == 0 {
            let hi = t[t.len() - 1];
            if t[j] <= u && u < t[j + 1] {
                return 1.0;
            }
            // closed right end: the last nonempty interval owns u == hi
            if u == hi && t[j] < t[j + 1] && t[j + 1] == hi {
                return 1.0;
            }
            return 0.0;
        }
        let mut v = 0.0;
        let d1 = t[j + p] - t[j];
        if d1 > 0.0 {
            v += (u - t[j]) / d1 * cox_de_boor(t, j, p - 1, u);
        }
        let d2 = t[j + p + 1] - t[j + 1];
        if d2 > 0.0 {
            v += (t[j + p + 1] - u) / d2 * cox_de_boor(t, j + 1, p - 1, u);
        }
        v
    }

    fn grid() -> Vec<f64> {
        (0..=10).map(|i| i as f64 / 10.0).collect()
    }

    /// Adaptive Simpson quadrature.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth > 40 || (left + right - whole).abs() <= 15.0 * tol {
                return left + right + (left + right - whole) / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth + 1)
                + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth + 1)
        }
        if a == b {
            return 0.0;
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 0)
    }

    #[test]
    fn knots_single_interior() {
        let b = SplineBasis::from_quantiles(&grid(), 5, 3).unwrap();
        assert_eq!(b.knots(), &[0., 0., 0., 0., 0.5, 1., 1., 1., 1.]);
        assert_eq!(b.df(), 5);
    }

    #[test]
    fn knots_without_interior() {
        let b = SplineBasis::from_quantiles(&grid(), 4, 3).unwrap();
        assert_eq!(b.knots(), &[0., 0., 0., 0., 1., 1., 1., 1.]);
    }

    #[test]
    fn knots_linear_four_interior() {
        let b = SplineBasis::from_quantiles(&grid(), 6, 1).unwrap();
        let expected = [0.0, 0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.0];
        for (k, e) in b.knots().iter().zip(expected) {
            assert!((k - e).abs() < 1e-15);
        }
    }

    #[test]
    fn knot_errors() {
        assert!(SplineBasis::from_quantiles(&grid(), 3, 3).is_err());
        assert!(SplineBasis::from_quantiles(&[1.0; 20], 5, 3).is_err());
        assert!(SplineBasis::from_quantiles(&[0.0, 1.0, 2.0], 5, 3).is_err());
        assert!(SplineBasis::new(vec![0., 0., 1., 1.], 2).is_err());
        assert!(SplineBasis::new(vec![0., 0., 0.5, 0.4, 1., 1.], 1).is_err());
    }

    #[test]
    fn knots_invariant_under_permutation_and_duplication() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<f64> = (0..41).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let a = SplineBasis::from_quantiles(&x, 8, 3).unwrap();
        let mut shuffled = x.clone();
        shuffled.reverse();
        shuffled.swap(3, 17);
        assert_eq!(SplineBasis::from_quantiles(&shuffled, 8, 3).unwrap(), a);
        // 41 samples, 4 interior knots: every level lands on an order statistic,
        // so doubling each sample leaves the quantiles unchanged
        let doubled: Vec<f64> = x.iter().flat_map(|&v| [v, v]).collect();
        let b = SplineBasis::from_quantiles(&doubled, 8, 3).unwrap();
        for (ka, kb) in a.knots().iter().zip(b.knots()) {
            assert!((ka - kb).abs() < 1e-12);
        }
    }

    #[test]
    fn coincident_knots_detected() {
        let mut x = vec![0.0; 30];
        x.extend((1..=8).map(|i| i as f64));
        let b = SplineBasis::from_quantiles(&x, 6, 2).unwrap();
        assert!(b.has_coincident_knots());
        let b = SplineBasis::from_quantiles(&grid(), 6, 2).unwrap();
        assert!(!b.has_coincident_knots());
    }

    #[test]
    fn design_examples() {
        let b = SplineBasis::new(vec![0., 0., 1., 1.], 1).unwrap();
        let m = b.design_matrix(&[0.5]);
        assert_eq!(m.row(0).iter().copied().collect::<Vec<_>>(), vec![0.5, 0.5]);

        for p in 0..4 {
            let basis = SplineBasis::from_quantiles(&grid(), p + 3, p).unwrap();
            let row = basis.design_matrix(&[0.0]);
            assert_eq!(row[(0, 0)], 1.0);
            assert!(row.iter().skip(1).all(|&v| v == 0.0));
        }

        let b = SplineBasis::new(vec![0., 0., 0., 0.5, 1., 1., 1.], 2).unwrap();
        let got = b.design_matrix(&[0.25]);
        let oracle: Vec<f64> = (0..4).map(|j| cox_de_boor(b.knots(), j, 2, 0.25)).collect();
        let expected = [0.25, 0.625, 0.125, 0.0];
        for j in 0..4 {
            assert!((oracle[j] - expected[j]).abs() < 1e-15);
            assert!((got[(0, j)] - expected[j]).abs() < 1e-15);
        }
    }

    #[test]
    fn design_matches_recursive_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..60).map(|_| rng.gen_range(-1.0..3.0)).collect();
        for p in 0..=4 {
            let basis = SplineBasis::from_quantiles(&x, p + 6, p).unwrap();
            let (lo, hi) = basis.domain();
            let mut u: Vec<f64> = (0..200)
                .map(|i| (lo + (hi - lo) * i as f64 / 199.0).min(hi))
                .collect();
            u.extend(basis.knots().iter().copied());
            let m = basis.design_matrix(&u);
            for (s, &x) in u.iter().enumerate() {
                for j in 0..basis.df() {
                    let o = cox_de_boor(basis.knots(), j, p, x);
                    assert!((m[(s, j)] - o).abs() < 1e-12, "p={p} u={x} j={j}");
                }
            }
        }
    }

    #[test]
    fn partition_nonnegativity_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x: Vec<f64> = (0..100).map(|_| rng.gen_range(-1.5..1.5)).collect();
        for p in 0..=4 {
            let basis = SplineBasis::from_quantiles(&x, p + 9, p).unwrap();
            let (lo, hi) = basis.domain();
            let u: Vec<f64> = (1..500).map(|i| lo + (hi - lo) * i as f64 / 500.0).collect();
            let m = basis.design_matrix(&u);
            for row in m.row_iter() {
                assert!((row.sum() - 1.0).abs() < 1e-12);
                assert!(row.iter().all(|&v| v >= 0.0));
                assert!(row.iter().filter(|&&v| v != 0.0).count() <= p + 1);
            }
        }
    }

    #[test]
    fn right_boundary_is_closed() {
        let basis = SplineBasis::from_quantiles(&grid(), 6, 3).unwrap();
        let m = basis.design_matrix(&[1.0]);
        assert_eq!(m[(0, 5)], 1.0);
        assert!((m.row(0).sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn derivative_examples() {
        let b = SplineBasis::new(vec![0., 0., 1., 1.], 1).unwrap();
        let d = b.derivative_design_matrix(&[0.1, 0.5, 0.9]).unwrap();
        for row in d.row_iter() {
            assert_eq!(row.iter().copied().collect::<Vec<_>>(), vec![-1.0, 1.0]);
        }
        let zero = SplineBasis::new(vec![0., 0.5, 1.], 0).unwrap();
        assert!(zero.derivative_design_matrix(&[0.3]).is_err());
    }

    #[test]
    fn derivative_matches_finite_differences() {
        let h = 1e-6;
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x: Vec<f64> = (0..80).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let cases = [
            SplineBasis::from_quantiles(&grid(), 5, 3).unwrap(),
            SplineBasis::from_quantiles(&x, 12, 3).unwrap(),
            SplineBasis::from_quantiles(&x, 10, 2).unwrap(),
            SplineBasis::from_quantiles(&x, 9, 4).unwrap(),
            SplineBasis::from_quantiles(&x, 7, 1).unwrap(),
        ];
        for basis in &cases {
            let (lo, hi) = basis.domain();
            let u: Vec<f64> = (1..200)
                .map(|i| lo + (hi - lo) * i as f64 / 200.0)
                .filter(|v| basis.knots().iter().all(|k| (k - v).abs() > 2.0 * h))
                .collect();
            let d = basis.derivative_design_matrix(&u).unwrap();
            let up: Vec<f64> = u.iter().map(|v| v + h).collect();
            let dn: Vec<f64> = u.iter().map(|v| v - h).collect();
            let fd = (basis.design_matrix(&up) - basis.design_matrix(&dn)) / (2.0 * h);
            assert!((d.clone() - fd).amax() < 1e-5);
            for row in d.row_iter() {
                assert!(row.sum().abs() < 1e-10);
            }
        }
        let basis = SplineBasis::from_quantiles(&grid(), 5, 3).unwrap();
        let d = basis.derivative_design_matrix(&[0.3]).unwrap();
        let fd = (basis.design_matrix(&[0.3 + h]) - basis.design_matrix(&[0.3 - h])) / (2.0 * h);
        assert!((d - fd).amax() < 1e-5);
    }

    #[test]
    fn integral_examples() {
        let b = SplineBasis::new(vec![0., 0., 1., 1.], 1).unwrap();
        let m = b.integral_design_matrix(&[0.5, 0.0, 1.0]);
        assert!((m[(0, 1)] - 0.125).abs() < 1e-15);
        assert!((m[(0, 0)] - 0.375).abs() < 1e-15);
        assert_eq!(m[(1, 0)], 0.0);
        assert_eq!(m[(1, 1)], 0.0);
        assert!((m[(2, 0)] - 0.5).abs() < 1e-15);
        assert!((m[(2, 1)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn integral_matches_quadrature() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..1.0)).collect();
        for (df, p) in [(5, 2), (8, 2), (9, 3), (6, 0), (7, 1), (10, 4)] {
            let basis = SplineBasis::from_quantiles(&x, df, p).unwrap();
            let (lo, hi) = basis.domain();
            let pts = [lo, lo + 0.3 * (hi - lo), 0.7, hi];
            let m = basis.integral_design_matrix(&pts);
            for (s, &u) in pts.iter().enumerate() {
                for j in 0..df {
                    // integrate span by span so the integrand is smooth on each piece
                    let mut bounds: Vec<f64> = basis.knots().iter().copied().filter(|&k| k > lo && k < u).collect();
                    bounds.insert(0, lo);
                    bounds.push(u);
                    bounds.dedup();
                    let f = |t: f64| cox_de_boor(basis.knots(), j, p, t);
                    let q: f64 = bounds.windows(2).map(|w| simpson(&f, w[0], w[1], 1e-13)).sum();
                    assert!((m[(s, j)] - q).abs() < 1e-9, "df={df} p={p} u={u} j={j}");
                }
            }
        }
    }

    #[test]
    fn integral_derivative_is_design() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x: Vec<f64> = (0..50).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let basis = SplineBasis::from_quantiles(&x, 11, 3).unwrap();
        let (lo, hi) = basis.domain();
        let h = 1e-6;
        let u: Vec<f64> = (1..100).map(|i| lo + (hi - lo) * i as f64 / 100.0).collect();
        let up: Vec<f64> = u.iter().map(|v| v + h).collect();
        let dn: Vec<f64> = u.iter().map(|v| v - h).collect();
        let fd = (basis.integral_design_matrix(&up) - basis.integral_design_matrix(&dn)) / (2.0 * h);
        assert!((fd - basis.design_matrix(&u)).amax() < 1e-5);
    }

    #[test]
    fn extrapolation_extends_boundary_pieces() {
        let basis = SplineBasis::from_quantiles(&grid(), 7, 3).unwrap();
        let coeffs: Vec<f64> = vec![0.3, 1.0, -0.5, 2.0, 0.1, 0.7, -1.2, 0.4];
        let f = SplineFunction::new(basis.clone(), coeffs, Representation::G).unwrap();
        // fit the cubic on the last span from interior points, then compare outside
        let last_lo = basis.knots()[basis.knots().len() - 5];
        let xs: Vec<f64> = (0..4).map(|i| last_lo + (1.0 - last_lo) * (0.1 + 0.25 * i as f64)).collect();
        let ys = f.eval(&xs);
        let lagrange = |x: f64| -> f64 {
            (0..4)
                .map(|i| {
                    let mut w = ys[i];
                    for k in 0..4 {
                        if k != i {
                            w *= (x - xs[k]) / (xs[i] - xs[k]);
                        }
                    }
                    w
                })
                .sum()
        };
        for x in [1.05, 1.2, 1.5] {
            assert!((f.eval(&[x])[0] - lagrange(x)).abs() < 1e-9);
        }
        // the antiderivative keeps differentiating to the extrapolated g'
        let gp = SplineFunction::new(basis, vec![0.0, 1.0, 0.5, 0.2, 0.9, 0.3, 0.6, 0.8], Representation::GPrime).unwrap();
        let h = 1e-6;
        for x in [-0.4, -0.1, 1.1, 1.3] {
            let fd = (gp.eval(&[x + h])[0] - gp.eval(&[x - h])[0]) / (2.0 * h);
            assert!((fd - gp.eval_derivative(&[x])[0]).abs() < 1e-5);
        }
    }

    #[test]
    fn augment_examples() {
        let m = DMatrix::from_column_slice(2, 1, &[2.0, 3.0]);
        assert_eq!(augment(&m, Augment::Ones), DMatrix::from_row_slice(2, 2, &[1., 2., 1., 3.]));
        assert_eq!(augment(&m, Augment::Zeros), DMatrix::from_row_slice(2, 2, &[0., 2., 0., 3.]));

        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let basis = SplineBasis::from_quantiles(&grid(), 6, 2).unwrap();
        let u: Vec<f64> = (0..9).map(|_| rng.gen_range(0.0..1.0)).collect();
        let design = basis.design_matrix(&u);
        let c = DVector::from_fn(7, |_, _| rng.gen_range(-1.0..1.0));
        let spline = &design * c.rows(1, 6);
        let with_ones = augment(&design, Augment::Ones) * &c;
        let with_zeros = augment(&design, Augment::Zeros) * &c;
        for s in 0..9 {
            assert!((with_ones[s] - (c[0] + spline[s])).abs() < 1e-14);
            assert!((with_zeros[s] - spline[s]).abs() < 1e-14);
        }
    }

    #[test]
    fn eval_examples() {
        let basis = SplineBasis::new(vec![0., 0., 1., 1.], 1).unwrap();
        let zero = SplineFunction::new(basis.clone(), vec![0.0; 3], Representation::G).unwrap();
        assert!(zero.eval(&[0.2, 0.8]).iter().all(|&v| v == 0.0));
        assert!(zero.eval_derivative(&[0.2, 0.8]).iter().all(|&v| v == 0.0));

        let lin = SplineFunction::new(basis.clone(), vec![0.5, 0.0, 1.0], Representation::G).unwrap();
        for u in [0.1, 0.4, 0.9] {
            assert!((lin.eval(&[u])[0] - (0.5 + u)).abs() < 1e-15);
            assert!((lin.eval_derivative(&[u])[0] - 1.0).abs() < 1e-15);
        }

        assert!(SplineFunction::new(basis, vec![0.0; 2], Representation::G).is_err());
        let deg0 = SplineBasis::new(vec![0., 0.5, 1.], 0).unwrap();
        assert!(SplineFunction::new(deg0.clone(), vec![0.0; 3], Representation::G).is_err());
        assert!(SplineFunction::new(deg0, vec![0.0; 3], Representation::GPrime).is_ok());
    }

    #[test]
    fn nonnegative_gprime_is_nondecreasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let x: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let basis = SplineBasis::from_quantiles(&x, 9, 3).unwrap();
        let mut c: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..1.0)).collect();
        c[0] = -4.0;
        let f = SplineFunction::new(basis, c, Representation::GPrime).unwrap();
        let u: Vec<f64> = (0..2000).map(|i| -1.2 + 2.4 * i as f64 / 1999.0).collect();
        let g = f.eval(&u);
        assert!(g.windows(2).all(|w| w[1] >= w[0] - 1e-14));
        let (lo, hi) = f.basis().domain();
        let inside: Vec<f64> = u.iter().copied().filter(|&v| v >= lo && v <= hi).collect();
        assert!(f.eval_derivative(&inside).iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn derivative_coefficients_reproduce_derivative() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let x: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let basis = SplineBasis::from_quantiles(&x, 9, 3).unwrap();
        let c: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = SplineFunction::new(basis.clone(), c, Representation::G).unwrap();
        let dc = f.derivative_coefficients();
        // derivative spline lives on the inner knot vector with degree p-1
        let inner = SplineBasis::new(basis.knots()[1..basis.knots().len() - 1].to_vec(), 2).unwrap();
        let u: Vec<f64> = (0..50).map(|i| -0.9 + 1.8 * i as f64 / 49.0).collect();
        let via_coeffs = inner.design_matrix(&u) * DVector::from_vec(dc);
        let direct = f.eval_derivative(&u);
        for s in 0..u.len() {
            assert!((via_coeffs[s] - direct[s]).abs() < 1e-10);
        }
    }
}
