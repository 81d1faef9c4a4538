//! Exterior powers of `C^m`: coordinates of decomposable k-vectors, the
//! derivation induced by a linear generator, and the top-degree pairing.

use crate::linalg::{det, CMat, CVec, C64};

#[derive(Debug, Clone, Copy)]
struct Term {
    target: usize,
    source: usize,
    row: usize,
    col: usize,
    sign: f64,
}

/// The k-th exterior power of an m-dimensional space in the basis of
/// lexicographically ordered k-subsets.
#[derive(Debug, Clone)]
pub struct ExteriorPower {
    pub dim: usize,
    pub k: usize,
    pub subsets: Vec<Vec<usize>>,
    terms: Vec<Term>,
    complement: Vec<(usize, f64)>,
}

fn subsets(m: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, m: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in start..m {
            cur.push(j);
            rec(j + 1, m, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, m, k, &mut Vec::new(), &mut out);
    out
}

/// Sign of the permutation that sorts `v` (entries distinct).
fn sort_sign(v: &[usize]) -> f64 {
    let mut inversions = 0;
    for i in 0..v.len() {
        for j in (i + 1)..v.len() {
            if v[i] > v[j] {
                inversions += 1;
            }
        }
    }
    if inversions % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

impl ExteriorPower {
    pub fn new(dim: usize, k: usize) -> Self {
        let subsets = subsets(dim, k);
        let index_of = |s: &[usize]| subsets.iter().position(|t| t.as_slice() == s).unwrap();

        // G(e_{s1} ^ ... ^ e_{sk}) = sum_p e_{s1} ^ .. ^ G e_{sp} ^ .. ^ e_{sk}
        let mut terms = Vec::new();
        for (src, s) in subsets.iter().enumerate() {
            for p in 0..k {
                for row in 0..dim {
                    if row != s[p] && s.contains(&row) {
                        continue;
                    }
                    let mut t = s.clone();
                    t[p] = row;
                    let sign = sort_sign(&t);
                    t.sort_unstable();
                    terms.push(Term { target: index_of(&t), source: src, row, col: s[p], sign });
                }
            }
        }

        let mut complement = Vec::new();
        if 2 * k == dim {
            for s in &subsets {
                let rest: Vec<usize> = (0..dim).filter(|j| !s.contains(j)).collect();
                let mut perm = s.clone();
                perm.extend_from_slice(&rest);
                complement.push((index_of(&rest), sort_sign(&perm)));
            }
        }
        Self { dim, k, subsets, terms, complement }
    }

    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    /// Plücker coordinates of the wedge of the columns of `w` (dim x k).
    pub fn wedge_columns(&self, w: &CMat) -> CVec {
        assert_eq!(w.nrows(), self.dim);
        assert_eq!(w.ncols(), self.k);
        CVec::from_iterator(
            self.len(),
            self.subsets.iter().map(|s| det(&w.select_rows(s.iter()))),
        )
    }

    /// Apply the derivation induced by `g` to a k-vector.
    pub fn apply(&self, g: &CMat, y: &CVec) -> CVec {
        let mut out = CVec::zeros(self.len());
        for t in &self.terms {
            out[t.target] += g[(t.row, t.col)] * y[t.source] * t.sign;
        }
        out
    }

    /// Matrix of the induced derivation.
    pub fn induced_matrix(&self, g: &CMat) -> CMat {
        let mut out = CMat::zeros(self.len(), self.len());
        for t in &self.terms {
            out[(t.target, t.source)] += g[(t.row, t.col)] * t.sign;
        }
        out
    }

    /// Top-degree pairing `a ^ b` for `2k = dim`, as a scalar multiple of
    /// `e_0 ^ ... ^ e_{dim-1}`.
    pub fn pairing(&self, a: &CVec, b: &CVec) -> C64 {
        assert_eq!(2 * self.k, self.dim, "pairing needs complementary degrees");
        self.complement
            .iter()
            .enumerate()
            .map(|(s, &(rest, sign))| a[s] * b[rest] * sign)
            .sum()
    }
}
