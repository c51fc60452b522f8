//! Polynomial term library: graded-lexicographic monomial enumeration over
//! state (and optional input) variables, feature evaluation, analytic
//! derivatives, and the sparse coefficient model built on top of it.

use std::collections::BTreeSet;
use std::fmt;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier written into checkpoints and index maps. Bump when the
/// enumeration order changes.
pub const LIBRARY_MAP_VERSION: &str = "graded-lex-v1";

/// Coefficients with magnitude at or below this are structural zeros.
pub const SUPPORT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Monomial {
    pub exponents: Vec<u32>,
}

impl Monomial {
    pub fn degree(&self) -> u32 {
        self.exponents.iter().sum()
    }

    pub fn eval(&self, vars: &[f64]) -> f64 {
        self.exponents
            .iter()
            .zip(vars)
            .filter(|(&e, _)| e > 0)
            .map(|(&e, &x)| x.powi(e as i32))
            .product()
    }

    /// Partial derivative with respect to variable `var`.
    pub fn partial(&self, vars: &[f64], var: usize) -> f64 {
        let e = self.exponents[var];
        if e == 0 {
            return 0.0;
        }
        let mut acc = e as f64 * vars[var].powi(e as i32 - 1);
        for (k, (&ek, &x)) in self.exponents.iter().zip(vars).enumerate() {
            if k != var && ek > 0 {
                acc *= x.powi(ek as i32);
            }
        }
        acc
    }
}

/// Ordered monomial basis. Terms are sorted by total degree, then in
/// descending lexicographic order of the exponent vector, so the constant
/// term comes first and `x1` precedes `x2`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermLibrary {
    n: usize,
    m: usize,
    order: u32,
    terms: Vec<Monomial>,
}

impl TermLibrary {
    /// Enumerates every monomial over `n` state and `m` input variables with
    /// total degree at most `order`.
    pub fn build(n: usize, m: usize, order: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::contract("term library needs at least one state variable"));
        }
        let vars = n + m;
        let size = library_size(vars, order).ok_or(Error::Capacity { vars, order })?;
        let mut terms = Vec::new();
        terms
            .try_reserve_exact(size)
            .map_err(|_| Error::Capacity { vars, order })?;
        let mut scratch = vec![0u32; vars];
        for degree in 0..=order {
            push_compositions(&mut scratch, 0, degree, &mut terms);
        }
        debug_assert_eq!(terms.len(), size);
        Ok(TermLibrary { n, m, order, terms })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    /// Index of the term with the given exponent vector, if present.
    pub fn index_of(&self, exponents: &[u32]) -> Option<usize> {
        self.terms.iter().position(|t| t.exponents == exponents)
    }

    fn check_vars(&self, y: &[f64], u: &[f64]) {
        assert_eq!(y.len(), self.n, "state length does not match library");
        assert_eq!(u.len(), self.m, "input length does not match library");
    }

    /// Feature vector for state `y` and input `u`.
    pub fn evaluate(&self, y: &[f64], u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.len()];
        self.evaluate_into(y, u, &mut out);
        out
    }

    pub fn evaluate_into(&self, y: &[f64], u: &[f64], out: &mut [f64]) {
        self.check_vars(y, u);
        let vars = concat(y, u);
        for (slot, term) in out.iter_mut().zip(&self.terms) {
            *slot = term.eval(&vars);
        }
    }

    /// `(len × n)` matrix of `∂feature_j / ∂y_i`.
    pub fn evaluate_jacobian(&self, y: &[f64], u: &[f64]) -> Array2<f64> {
        self.check_vars(y, u);
        let vars = concat(y, u);
        Array2::from_shape_fn((self.len(), self.n), |(j, i)| self.terms[j].partial(&vars, i))
    }

    /// Vector-Jacobian product over all `n + m` variables:
    /// `out_y[i] = Σ_j w_j ∂φ_j/∂y_i`, `out_u[i] = Σ_j w_j ∂φ_j/∂u_i`.
    pub(crate) fn vjp(&self, y: &[f64], u: &[f64], w: &[f64], out_y: &mut [f64], out_u: &mut [f64]) {
        let vars = concat(y, u);
        out_y.fill(0.0);
        out_u.fill(0.0);
        for (term, &wj) in self.terms.iter().zip(w) {
            if wj == 0.0 {
                continue;
            }
            for v in 0..vars.len() {
                if term.exponents[v] == 0 {
                    continue;
                }
                let d = wj * term.partial(&vars, v);
                if v < self.n {
                    out_y[v] += d;
                } else {
                    out_u[v - self.n] += d;
                }
            }
        }
    }

    /// Human-readable name, e.g. `x1^2*x2` or `u1`; the constant is `1`.
    pub fn describe(&self, index: usize) -> String {
        MonomialName { lib: self, term: &self.terms[index] }.to_string()
    }

    /// Text export: one line per term, `index  exponents  monomial`.
    pub fn index_map(&self) -> String {
        let mut out = format!("# {LIBRARY_MAP_VERSION} n={} m={} order={}\n", self.n, self.m, self.order);
        for (j, term) in self.terms.iter().enumerate() {
            out.push_str(&format!("{j}  {}  {}\n", join_exponents(&term.exponents), self.describe(j)));
        }
        out
    }
}

pub(crate) fn join_exponents(e: &[u32]) -> String {
    e.iter().map(u32::to_string).collect::<Vec<_>>().join(",")
}

struct MonomialName<'a> {
    lib: &'a TermLibrary,
    term: &'a Monomial,
}

impl fmt::Display for MonomialName<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for (v, &e) in self.term.exponents.iter().enumerate() {
            if e == 0 {
                continue;
            }
            if !first {
                f.write_str("*")?;
            }
            first = false;
            if v < self.lib.n {
                write!(f, "x{}", v + 1)?;
            } else {
                write!(f, "u{}", v - self.lib.n + 1)?;
            }
            if e > 1 {
                write!(f, "^{e}")?;
            }
        }
        if first {
            f.write_str("1")?;
        }
        Ok(())
    }
}

fn concat(y: &[f64], u: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(y.len() + u.len());
    v.extend_from_slice(y);
    v.extend_from_slice(u);
    v
}

fn push_compositions(scratch: &mut [u32], pos: usize, remaining: u32, out: &mut Vec<Monomial>) {
    if pos + 1 == scratch.len() {
        scratch[pos] = remaining;
        out.push(Monomial { exponents: scratch.to_vec() });
        return;
    }
    for e in (0..=remaining).rev() {
        scratch[pos] = e;
        push_compositions(scratch, pos + 1, remaining - e, out);
    }
    scratch[pos] = 0;
}

/// `C(order + vars, vars)` with overflow detection.
pub fn library_size(vars: usize, order: u32) -> Option<usize> {
    let order = order as usize;
    let k = vars.min(order);
    let top = order.checked_add(vars)?;
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.checked_mul((top - i) as u128)? / (i as u128 + 1);
    }
    usize::try_from(acc).ok()
}

/// Coefficient matrix over a term library with an explicit support set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseModel {
    library: TermLibrary,
    theta: Array2<f64>,
    support: BTreeSet<(usize, usize)>,
}

impl SparseModel {
    /// Builds a model whose support is every entry with `|θ| > SUPPORT_EPS`;
    /// smaller entries are zeroed.
    pub fn new(library: TermLibrary, mut theta: Array2<f64>) -> Result<Self> {
        check_theta_shape(&library, &theta)?;
        let mut support = BTreeSet::new();
        for ((r, c), v) in theta.indexed_iter_mut() {
            if v.abs() > SUPPORT_EPS {
                support.insert((r, c));
            } else {
                *v = 0.0;
            }
        }
        Ok(SparseModel { library, theta, support })
    }

    /// Builds a model with an explicitly chosen support. Entries outside the
    /// support are zeroed; entries inside may be zero (degenerate selection).
    pub fn with_support(
        library: TermLibrary,
        mut theta: Array2<f64>,
        support: BTreeSet<(usize, usize)>,
    ) -> Result<Self> {
        check_theta_shape(&library, &theta)?;
        let (rows, cols) = theta.dim();
        if let Some(&(r, c)) = support.iter().find(|&&(r, c)| r >= rows || c >= cols) {
            return Err(Error::contract(format!("support entry ({r}, {c}) outside {rows}x{cols}")));
        }
        for ((r, c), v) in theta.indexed_iter_mut() {
            if !support.contains(&(r, c)) {
                *v = 0.0;
            }
        }
        Ok(SparseModel { library, theta, support })
    }

    pub fn zeros(library: TermLibrary) -> Self {
        let theta = Array2::zeros((library.n(), library.len()));
        SparseModel { library, theta, support: BTreeSet::new() }
    }

    pub fn library(&self) -> &TermLibrary {
        &self.library
    }

    pub fn theta(&self) -> &Array2<f64> {
        &self.theta
    }

    pub fn support(&self) -> &BTreeSet<(usize, usize)> {
        &self.support
    }

    /// Number of active coefficients.
    pub fn p(&self) -> usize {
        self.support.len()
    }

    pub fn n(&self) -> usize {
        self.library.n()
    }

    pub fn m(&self) -> usize {
        self.library.m()
    }

    /// `θ · φ(y, u)`.
    pub fn rhs(&self, y: &[f64], u: &[f64]) -> Vec<f64> {
        let features = self.library.evaluate(y, u);
        self.apply(&features)
    }

    pub(crate) fn apply(&self, features: &[f64]) -> Vec<f64> {
        let f = ArrayView1::from(features);
        self.theta.dot(&f).to_vec()
    }

    /// Same model with one coefficient replaced; the support is recomputed.
    pub fn with_coefficient(&self, row: usize, col: usize, value: f64) -> Self {
        let mut theta = self.theta.clone();
        theta[(row, col)] = value;
        let mut support = self.support.clone();
        support.insert((row, col));
        SparseModel::with_support(self.library.clone(), theta, support).expect("shape unchanged")
    }

    /// Multi-line listing of active terms, one equation per state.
    pub fn equations(&self) -> String {
        let mut out = String::new();
        for r in 0..self.n() {
            let terms: Vec<String> = self
                .support
                .iter()
                .filter(|(row, _)| *row == r)
                .map(|&(_, c)| format!("{:+.6}*{}", self.theta[(r, c)], self.library.describe(c)))
                .collect();
            let body = if terms.is_empty() { "0".to_owned() } else { terms.join(" ") };
            out.push_str(&format!("dx{}/dt = {body}\n", r + 1));
        }
        out
    }
}

fn check_theta_shape(library: &TermLibrary, theta: &Array2<f64>) -> Result<()> {
    if theta.dim() != (library.n(), library.len()) {
        return Err(Error::contract(format!(
            "theta has shape {:?}, expected ({}, {})",
            theta.dim(),
            library.n(),
            library.len()
        )));
    }
    Ok(())
}

/// Dense helper used by tests and reports: `θ · φ` as an owned vector.
pub fn dense_rhs(theta: &Array2<f64>, features: &[f64]) -> Array1<f64> {
    theta.dot(&ArrayView1::from(features))
}
