//! Minimal symmetric sparse linear algebra for the condensed skeleton systems:
//! lower-triangle compressed-sparse-column storage, a plain (non-supernodal)
//! Cholesky factorization on a reverse Cuthill–McKee envelope, and diagonally
//! preconditioned conjugate gradients.
//!
//! Problem sizes stay at desk scale (≲ 2·10⁵ unknowns on banded skeleton
//! graphs), where an envelope factorization after bandwidth-reducing reordering
//! is simple and entirely adequate.

use crate::{Error, Result};

/// A symmetric matrix stored as its lower triangle in compressed sparse
/// columns; the upper triangle is implicit.
#[derive(Debug, Clone)]
pub struct SymmetricSparse {
    /// Dimension.
    pub n: usize,
    /// Column start offsets, length `n + 1`.
    pub col_ptr: Vec<usize>,
    /// Row indices per column, each ≥ its column index, sorted ascending.
    pub row_idx: Vec<usize>,
    /// Entry values, aligned with `row_idx`.
    pub values: Vec<f64>,
}

impl SymmetricSparse {
    /// Builds the matrix from (row, col, value) triplets. Entries are mirrored
    /// into the lower triangle, duplicates are summed in a fixed order (so
    /// assembly is bit-reproducible for a fixed triplet order), and a zero
    /// diagonal entry is inserted wherever no triplet touched the diagonal.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len() + n);
        for &(i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::IndexOutOfRange(format!(
                    "triplet ({i}, {j}) outside {n}×{n} matrix"
                )));
            }
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "non-finite entry at ({i}, {j})"
                )));
            }
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            entries.push((c, r, v));
        }
        for d in 0..n {
            entries.push((d, d, 0.0));
        }
        // Stable sort keeps duplicate contributions in insertion order, making
        // the summation below deterministic; duplicates end up adjacent.
        entries.sort_by_key(|&(c, r, _)| (c, r));
        let mut col_ptr = vec![0usize; n + 1];
        let mut row_idx = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut cur_col = 0usize;
        let mut last: Option<(usize, usize)> = None;
        for &(c, r, v) in &entries {
            if last == Some((c, r)) {
                *values.last_mut().unwrap() += v;
            } else {
                while cur_col < c {
                    cur_col += 1;
                    col_ptr[cur_col] = row_idx.len();
                }
                row_idx.push(r);
                values.push(v);
                last = Some((c, r));
            }
        }
        while cur_col < n {
            cur_col += 1;
            col_ptr[cur_col] = row_idx.len();
        }
        Ok(SymmetricSparse { n, col_ptr, row_idx, values })
    }

    /// Number of stored (lower-triangle) entries.
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Diagonal of the matrix.
    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                if self.row_idx[p] == j {
                    d[j] = self.values[p];
                }
            }
        }
        d
    }

    /// Coordinate text dump, one `i j value` line per stored lower-triangle
    /// entry, zero-based (for external verification).
    pub fn to_coordinate_text(&self) -> String {
        use std::fmt::Write as _;
        let mut out = String::new();
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                writeln!(out, "{} {} {:.17e}", self.row_idx[p], j, self.values[p]).unwrap();
            }
        }
        out
    }
}

/// Sparse symmetric matrix–vector product `y = Ax` using implicit symmetry.
pub fn spmv(a: &SymmetricSparse, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != a.n {
        return Err(Error::InvalidParameter(format!(
            "spmv size mismatch: matrix {}, vector {}",
            a.n,
            x.len()
        )));
    }
    let mut y = vec![0.0; a.n];
    for j in 0..a.n {
        let xj = x[j];
        for p in a.col_ptr[j]..a.col_ptr[j + 1] {
            let i = a.row_idx[p];
            let v = a.values[p];
            y[i] += v * xj;
            if i != j {
                y[j] += v * x[i];
            }
        }
    }
    Ok(y)
}

/// Envelope Cholesky factorization of a [`SymmetricSparse`] matrix after
/// reverse Cuthill–McKee reordering.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    n: usize,
    /// Permutation: `perm[new] = old`.
    perm: Vec<usize>,
    /// First stored column per (permuted) row.
    first_col: Vec<usize>,
    /// Row start offsets into `data`.
    row_ptr: Vec<usize>,
    /// Skyline rows of L, row i spanning columns `first_col[i] ..= i`.
    data: Vec<f64>,
}

/// Reverse Cuthill–McKee ordering of the matrix graph (returns `perm` with
/// `perm[new] = old`). Reduces the envelope the factorization has to store.
fn reverse_cuthill_mckee(a: &SymmetricSparse) -> Vec<usize> {
    let n = a.n;
    let mut adj = vec![Vec::new(); n];
    for j in 0..n {
        for p in a.col_ptr[j]..a.col_ptr[j + 1] {
            let i = a.row_idx[p];
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
    }
    for l in &mut adj {
        l.sort_unstable();
        l.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();

    let bfs = |start: usize, visited: &mut [bool], order: &mut Vec<usize>| {
        let mut queue = std::collections::VecDeque::new();
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut nbrs: Vec<usize> = adj[v].iter().copied().filter(|&w| !visited[w]).collect();
            nbrs.sort_by_key(|&w| (degree[w], w));
            for w in nbrs {
                visited[w] = true;
                queue.push_back(w);
            }
        }
    };

    let mut order = Vec::with_capacity(n);
    let mut visited = vec![false; n];
    for seed in 0..n {
        if visited[seed] {
            continue;
        }
        // Pseudo-peripheral start: min-degree node of the component, then the
        // last node of one exploratory BFS.
        let mut component = Vec::new();
        let mut seen = visited.clone();
        bfs(seed, &mut seen, &mut component);
        let start = *component
            .iter()
            .min_by_key(|&&v| (degree[v], v))
            .unwrap();
        let mut probe = Vec::new();
        let mut seen = visited.clone();
        bfs(start, &mut seen, &mut probe);
        let far = *probe.last().unwrap();
        bfs(far, &mut visited, &mut order);
    }
    order.reverse();
    order
}

/// Factorizes an SPD matrix. Fails with a not-SPD error on a non-positive
/// pivot.
pub fn cholesky_factor(a: &SymmetricSparse) -> Result<CholeskyFactor> {
    let n = a.n;
    let perm = reverse_cuthill_mckee(a);
    let mut inv = vec![0usize; n];
    for (new, &old) in perm.iter().enumerate() {
        inv[old] = new;
    }

    // Envelope pattern of the permuted matrix: row i stores first_col[i] ..= i.
    let mut first_col: Vec<usize> = (0..n).collect();
    for j in 0..n {
        for p in a.col_ptr[j]..a.col_ptr[j + 1] {
            let i = a.row_idx[p];
            let (pi, pj) = (inv[i], inv[j]);
            let (hi, lo) = if pi >= pj { (pi, pj) } else { (pj, pi) };
            first_col[hi] = first_col[hi].min(lo);
        }
    }
    let mut row_ptr = vec![0usize; n + 1];
    for i in 0..n {
        row_ptr[i + 1] = row_ptr[i] + (i - first_col[i] + 1);
    }
    let mut data = vec![0.0; row_ptr[n]];
    for j in 0..n {
        for p in a.col_ptr[j]..a.col_ptr[j + 1] {
            let i = a.row_idx[p];
            let (pi, pj) = (inv[i], inv[j]);
            let (hi, lo) = if pi >= pj { (pi, pj) } else { (pj, pi) };
            data[row_ptr[hi] + (lo - first_col[hi])] += a.values[p];
        }
    }

    // Row-oriented skyline Cholesky, in place.
    for i in 0..n {
        let fi = first_col[i];
        for j in fi..i {
            let fj = first_col[j];
            let lo = fi.max(fj);
            let mut sum = data[row_ptr[i] + (j - fi)];
            for k in lo..j {
                sum -= data[row_ptr[i] + (k - fi)] * data[row_ptr[j] + (k - fj)];
            }
            let diag = data[row_ptr[j] + (j - fj)];
            data[row_ptr[i] + (j - fi)] = sum / diag;
        }
        let mut sum = data[row_ptr[i] + (i - fi)];
        for k in fi..i {
            let l = data[row_ptr[i] + (k - fi)];
            sum -= l * l;
        }
        if sum <= 0.0 || !sum.is_finite() {
            return Err(Error::NotSpd(format!(
                "non-positive pivot {sum:.3e} at elimination step {i}"
            )));
        }
        data[row_ptr[i] + (i - fi)] = sum.sqrt();
    }

    Ok(CholeskyFactor { n, perm, first_col, row_ptr, data })
}

/// Solves `Ax = b` with a precomputed factorization.
pub fn cholesky_solve(fact: &CholeskyFactor, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != fact.n {
        return Err(Error::InvalidParameter(format!(
            "solve size mismatch: factor {}, vector {}",
            fact.n,
            b.len()
        )));
    }
    let n = fact.n;
    // Forward: L y = P b.
    let mut y = vec![0.0; n];
    for i in 0..n {
        let fi = fact.first_col[i];
        let mut sum = b[fact.perm[i]];
        for k in fi..i {
            sum -= fact.data[fact.row_ptr[i] + (k - fi)] * y[k];
        }
        y[i] = sum / fact.data[fact.row_ptr[i] + (i - fi)];
    }
    // Backward: Lᵀ z = y.
    for i in (0..n).rev() {
        let fi = fact.first_col[i];
        let z = y[i] / fact.data[fact.row_ptr[i] + (i - fi)];
        y[i] = z;
        for k in fi..i {
            y[k] -= fact.data[fact.row_ptr[i] + (k - fi)] * z;
        }
    }
    // Un-permute.
    let mut x = vec![0.0; n];
    for i in 0..n {
        x[fact.perm[i]] = y[i];
    }
    Ok(x)
}

/// Result of a conjugate-gradient solve.
#[derive(Debug, Clone)]
pub struct CgSolution {
    /// The solution vector.
    pub x: Vec<f64>,
    /// Iterations performed (0 when `b = 0`).
    pub iterations: usize,
    /// Final relative residual ‖b − Ax‖ / ‖b‖.
    pub relative_residual: f64,
}

/// Conjugate gradients for SPD systems, optionally Jacobi-preconditioned.
/// Stops when ‖b − Ax‖ ≤ `tol`·‖b‖; a zero right-hand side short-circuits to
/// the zero solution.
pub fn cg_solve(
    a: &SymmetricSparse,
    b: &[f64],
    tol: f64,
    maxit: usize,
    diag_precond: bool,
) -> Result<CgSolution> {
    if b.len() != a.n {
        return Err(Error::InvalidParameter(format!(
            "cg size mismatch: matrix {}, vector {}",
            a.n,
            b.len()
        )));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return Ok(CgSolution { x: vec![0.0; a.n], iterations: 0, relative_residual: 0.0 });
    }
    let precond: Vec<f64> = if diag_precond {
        a.diagonal()
            .iter()
            .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
            .collect()
    } else {
        vec![1.0; a.n]
    };

    let mut x = vec![0.0; a.n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&precond).map(|(ri, mi)| ri * mi).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut iterations = 0;
    let mut rel = norm(&r) / b_norm;
    while rel > tol {
        if iterations >= maxit {
            return Err(Error::NoConvergence { iterations, residual: rel });
        }
        let ap = spmv(a, &p)?;
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::NotSpd(format!(
                "conjugate gradients met non-positive curvature {pap:.3e}"
            )));
        }
        let alpha = rz / pap;
        for i in 0..a.n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        iterations += 1;
        rel = norm(&r) / b_norm;
        if rel <= tol {
            break;
        }
        for i in 0..a.n {
            z[i] = r[i] * precond[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..a.n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Ok(CgSolution { x, iterations, relative_residual: rel })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dense_from(a: &SymmetricSparse) -> Vec<Vec<f64>> {
        let mut m = vec![vec![0.0; a.n]; a.n];
        for j in 0..a.n {
            for p in a.col_ptr[j]..a.col_ptr[j + 1] {
                let i = a.row_idx[p];
                m[i][j] += a.values[p];
                if i != j {
                    m[j][i] += a.values[p];
                }
            }
        }
        m
    }

    fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> SymmetricSparse {
        // MᵀM + I with dense random M.
        let m: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut triplets = Vec::new();
        for i in 0..n {
            for j in 0..=i {
                let mut v: f64 = (0..n).map(|k| m[k][i] * m[k][j]).sum();
                if i == j {
                    v += 1.0;
                }
                triplets.push((i, j, v));
            }
        }
        SymmetricSparse::from_triplets(n, &triplets).unwrap()
    }

    #[test]
    fn triplets_merge_and_mirror() {
        // Duplicates sum; upper-triangle input lands in the lower triangle.
        let a = SymmetricSparse::from_triplets(2, &[(0, 0, 1.0), (0, 0, 1.0), (0, 1, 3.0)]).unwrap();
        let d = dense_from(&a);
        assert_eq!(d[0][0], 2.0);
        assert_eq!(d[1][0], 3.0);
        assert_eq!(d[0][1], 3.0);
        assert_eq!(d[1][1], 0.0); // implicit zero diagonal inserted
        assert_eq!(a.nnz(), 3);
    }

    #[test]
    fn spmv_diagonal_and_zero() {
        let a = SymmetricSparse::from_triplets(4, &(0..4).map(|i| (i, i, 2.0)).collect::<Vec<_>>())
            .unwrap();
        let y = spmv(&a, &[1.0; 4]).unwrap();
        assert_eq!(y, vec![2.0; 4]);
        let y = spmv(&a, &[0.0; 4]).unwrap();
        assert_eq!(y, vec![0.0; 4]);
        assert!(spmv(&a, &[0.0; 3]).is_err());
    }

    #[test]
    fn spmv_matches_dense_mirror_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = random_spd(&mut rng, 10);
        let d = dense_from(&a);
        let x: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ax = spmv(&a, &x).unwrap();
        for i in 0..10 {
            let dense: f64 = (0..10).map(|j| d[i][j] * x[j]).sum();
            assert!((ax[i] - dense).abs() < 1e-13);
        }
        let ay = spmv(&a, &y).unwrap();
        let xay: f64 = x.iter().zip(&ay).map(|(a, b)| a * b).sum();
        let yax: f64 = y.iter().zip(&ax).map(|(a, b)| a * b).sum();
        assert!((xay - yax).abs() < 1e-12);
    }

    #[test]
    fn cholesky_identity_and_hand_checked_2x2() {
        let eye = SymmetricSparse::from_triplets(3, &(0..3).map(|i| (i, i, 1.0)).collect::<Vec<_>>())
            .unwrap();
        let f = cholesky_factor(&eye).unwrap();
        let b = vec![3.0, -1.0, 2.5];
        assert_eq!(cholesky_solve(&f, &b).unwrap(), b);

        let a = SymmetricSparse::from_triplets(2, &[(0, 0, 4.0), (1, 0, 1.0), (1, 1, 3.0)]).unwrap();
        let f = cholesky_factor(&a).unwrap();
        let x = cholesky_solve(&f, &[1.0, 2.0]).unwrap();
        assert!((x[0] - 1.0 / 11.0).abs() < 1e-14);
        assert!((x[1] - 7.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let a = SymmetricSparse::from_triplets(2, &[(0, 0, 1.0), (1, 0, 2.0), (1, 1, 1.0)]).unwrap();
        assert!(matches!(cholesky_factor(&a), Err(Error::NotSpd(_))));
    }

    #[test]
    fn cg_zero_rhs_and_identity() {
        let eye = SymmetricSparse::from_triplets(5, &(0..5).map(|i| (i, i, 1.0)).collect::<Vec<_>>())
            .unwrap();
        let sol = cg_solve(&eye, &[0.0; 5], 1e-12, 100, true).unwrap();
        assert_eq!(sol.iterations, 0);
        assert_eq!(sol.x, vec![0.0; 5]);
        let b = vec![1.0, -2.0, 3.0, 0.5, 4.0];
        let sol = cg_solve(&eye, &b, 1e-12, 100, false).unwrap();
        assert_eq!(sol.iterations, 1);
        for (xi, bi) in sol.x.iter().zip(&b) {
            assert!((xi - bi).abs() < 1e-13);
        }
    }

    #[test]
    fn cg_exhausting_iterations_reports_no_convergence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_spd(&mut rng, 20);
        let b: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        match cg_solve(&a, &b, 1e-14, 1, false) {
            Err(Error::NoConvergence { iterations, residual }) => {
                assert_eq!(iterations, 1);
                assert!(residual > 0.0);
            }
            other => panic!("expected NoConvergence, got {other:?}"),
        }
    }

    #[test]
    fn both_solvers_handle_random_spd_suite() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..100 {
            let n = rng.gen_range(1..=50);
            let a = random_spd(&mut rng, n);
            let b: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let b_norm = b.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);

            let f = cholesky_factor(&a).expect("SPD by construction");
            let x = cholesky_solve(&f, &b).unwrap();
            let r = spmv(&a, &x).unwrap();
            let res: f64 = r
                .iter()
                .zip(&b)
                .map(|(ri, bi)| (ri - bi) * (ri - bi))
                .sum::<f64>()
                .sqrt();
            assert!(res / b_norm <= 1e-10, "trial {trial}: cholesky residual {res:.3e}");

            let tol = 1e-12;
            let sol = cg_solve(&a, &b, tol, 10 * n + 50, true).unwrap();
            let r = spmv(&a, &sol.x).unwrap();
            let res: f64 = r
                .iter()
                .zip(&b)
                .map(|(ri, bi)| (ri - bi) * (ri - bi))
                .sum::<f64>()
                .sqrt();
            assert!(res / b_norm <= 1e-10, "trial {trial}: cg residual {res:.3e}");
            // Cross-method agreement in the scale of the solve tolerance.
            let dx: f64 = x
                .iter()
                .zip(&sol.x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let xn: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            assert!(dx / xn <= 10.0 * tol.max(1e-11) * 1e3 || dx <= 1e-8, "trial {trial}: dx {dx:.3e}");
        }
    }

    #[test]
    fn empty_system_is_solvable() {
        let a = SymmetricSparse::from_triplets(0, &[]).unwrap();
        let f = cholesky_factor(&a).unwrap();
        assert!(cholesky_solve(&f, &[]).unwrap().is_empty());
        let sol = cg_solve(&a, &[], 1e-12, 10, true).unwrap();
        assert!(sol.x.is_empty());
    }

    #[test]
    fn coordinate_dump_is_zero_based_lower_triangle() {
        let a = SymmetricSparse::from_triplets(2, &[(0, 0, 4.0), (0, 1, 1.0), (1, 1, 3.0)]).unwrap();
        let dump = a.to_coordinate_text();
        let lines: Vec<&str> = dump.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[0].starts_with("0 0 "));
        assert!(lines[1].starts_with("1 0 ")); // mirrored below the diagonal
        assert!(lines[2].starts_with("1 1 "));
    }
}
