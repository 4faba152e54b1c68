//! Weighted proper orthogonal decomposition and its hierarchical
//! approximate variant.

mod driver;
mod tree;

use std::io::{Read, Write};
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::dot;
use crate::sparse::CsrMatrix;

pub use driver::{chunked_hapod, ChunkedHapod, ChunkedHapodOptions, SnapshotSet};
pub use tree::{hapod, local_tolerance, HapodResult, HapodStats, HapodTree};

/// Gramian eigenvalues below this fraction of the largest are round-off.
const GRAMIAN_FLOOR: f64 = 1e-14;
/// For the QR route the same holds for `λ = σ²` below `(1e-13)²·λ₁`.
const QR_FLOOR: f64 = 1e-26;

/// The inner product `⟨x, y⟩_W = xᵀWy` on coefficient vectors.
#[derive(Debug, Clone)]
pub enum InnerProduct {
    Euclidean,
    Weighted(Arc<CsrMatrix>),
}

impl InnerProduct {
    /// `W x`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            InnerProduct::Euclidean => x.to_vec(),
            InnerProduct::Weighted(w) => w.mul_vec(x),
        }
    }

    pub fn dot(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            InnerProduct::Euclidean => dot(x, y),
            InnerProduct::Weighted(w) => dot(x, &w.mul_vec(y)),
        }
    }

    pub fn norm(&self, x: &[f64]) -> f64 {
        self.dot(x, x).max(0.0).sqrt()
    }

    /// Dimension, if fixed by a weight matrix.
    pub fn dim(&self) -> Option<usize> {
        match self {
            InnerProduct::Euclidean => None,
            InnerProduct::Weighted(w) => Some(w.nrows()),
        }
    }
}

/// How the SVD inside a POD is computed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PodMethod {
    /// Eigendecomposition of the weighted Gramian `SᵀWS`.
    #[default]
    Snapshots,
    /// `W`-orthonormal QR of `S` followed by an SVD of the small factor.
    /// Resolves singular values down to round-off relative to `σ₁`, where
    /// the Gramian stops at about `1e-8·σ₁`.
    QrSvd,
}

/// Modes with `UᵀWU = I`, singular values `σ` in descending order, and all
/// (untruncated) squared singular values.
#[derive(Debug, Clone)]
pub struct PodResult {
    pub modes: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
    pub eigenvalues: Vec<f64>,
}

impl PodResult {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// `Σ_{i>N} λᵢ`, the squared ℓ² projection error of the snapshots.
    pub fn tail(&self) -> f64 {
        self.eigenvalues[self.modes.len()..].iter().sum()
    }

    /// Modes multiplied by their singular values.
    pub fn scaled_modes(&self) -> Vec<Vec<f64>> {
        self.modes
            .iter()
            .zip(&self.singular_values)
            .map(|(m, s)| m.iter().map(|x| x * s).collect())
            .collect()
    }
}

/// Minimal `N` with `Σ_{i>N} λᵢ ≤ ε²`, capped at the number of eigenvalues
/// above the round-off floor.
fn truncation_rank(lambda: &[f64], eps: f64, floor: f64) -> usize {
    let lmax = lambda.first().copied().unwrap_or(0.0);
    let significant = lambda.iter().take_while(|&&l| l > floor * lmax && l > 0.0).count();
    // suffix sums avoid cancellation when the spectrum spans many decades
    let mut tails = vec![0.0; lambda.len() + 1];
    for i in (0..lambda.len()).rev() {
        tails[i] = tails[i + 1] + lambda[i];
    }
    (0..significant).find(|&n| tails[n] <= eps * eps).unwrap_or(significant)
}

fn check_snapshots<S: AsRef<[f64]>>(s: &[S], w: &InnerProduct) -> Result<usize> {
    let n = s.first().map_or(w.dim().unwrap_or(0), |v| v.as_ref().len());
    if let Some(d) = w.dim() {
        if d != n {
            return Err(Error::mismatch("snapshot length", d, n));
        }
    }
    for v in s {
        if v.as_ref().len() != n {
            return Err(Error::mismatch("snapshot length", n, v.as_ref().len()));
        }
        if v.as_ref().iter().any(|x| !x.is_finite()) {
            return Err(Error::Config("snapshot contains non-finite values".into()));
        }
    }
    Ok(n)
}

/// Weighted POD of the columns `s` with truncation `Σ_{i>N} λᵢ ≤ ε²`.
pub fn pod<S: AsRef<[f64]>>(
    s: &[S],
    w: &InnerProduct,
    eps: f64,
    method: PodMethod,
) -> Result<PodResult> {
    if !(eps >= 0.0) {
        return Err(Error::Config(format!("POD tolerance must be non-negative, got {eps}")));
    }
    let n = check_snapshots(s, w)?;
    if s.is_empty() {
        return Ok(PodResult { modes: Vec::new(), singular_values: Vec::new(), eigenvalues: Vec::new() });
    }
    match method {
        PodMethod::Snapshots => pod_snapshots(s, w, eps, n),
        PodMethod::QrSvd => pod_qr(s, w, eps, n),
    }
}

fn pod_snapshots<S: AsRef<[f64]>>(s: &[S], w: &InnerProduct, eps: f64, n: usize) -> Result<PodResult> {
    let m = s.len();
    let ws: Vec<Vec<f64>> = s.iter().map(|v| w.apply(v.as_ref())).collect();
    let g = DMatrix::from_fn(m, m, |i, j| {
        let (a, b) = (dot(s[i].as_ref(), &ws[j]), dot(s[j].as_ref(), &ws[i]));
        0.5 * (a + b)
    });
    let eig = SymmetricEigen::new(g);
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lambda: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let rank = truncation_rank(&lambda, eps, GRAMIAN_FLOOR);
    let mut modes = Vec::with_capacity(rank);
    let mut sigma = Vec::with_capacity(rank);
    for (&k, &l) in order.iter().zip(&lambda).take(rank) {
        let sv = l.sqrt();
        let mut u = vec![0.0; n];
        for (j, v) in s.iter().enumerate() {
            let c = eig.eigenvectors[(j, k)] / sv;
            u.iter_mut().zip(v.as_ref()).for_each(|(ui, vi)| *ui += c * vi);
        }
        modes.push(u);
        sigma.push(sv);
    }
    // Modes of small singular values lose orthogonality as ~ machine eps·λ₁/λᵢ;
    // a second orthonormalization keeps the span and restores UᵀWU = I.
    let kept = orthonormalize(&mut modes, w);
    let sigma = kept.into_iter().map(|i| sigma[i]).collect();
    Ok(PodResult { modes, singular_values: sigma, eigenvalues: lambda })
}

fn pod_qr<S: AsRef<[f64]>>(s: &[S], w: &InnerProduct, eps: f64, n: usize) -> Result<PodResult> {
    let m = s.len();
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut wq: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut r = DMatrix::<f64>::zeros(m, m);
    for (j, v) in s.iter().enumerate() {
        let mut x = v.as_ref().to_vec();
        let x_norm = w.norm(&x);
        for _ in 0..2 {
            for (i, wqi) in wq.iter().enumerate() {
                let c = dot(wqi, &x);
                r[(i, j)] += c;
                x.iter_mut().zip(&q[i]).for_each(|(a, b)| *a -= c * b);
            }
        }
        let wx = w.apply(&x);
        let nx = dot(&x, &wx).max(0.0).sqrt();
        if nx > 1e-14 * x_norm && nx > 0.0 {
            r[(q.len(), j)] = nx;
            q.push(x.iter().map(|a| a / nx).collect());
            wq.push(wx.iter().map(|a| a / nx).collect());
        }
    }
    let k = q.len();
    if k == 0 {
        return Ok(PodResult { modes: Vec::new(), singular_values: Vec::new(), eigenvalues: vec![0.0; m] });
    }
    let rk = r.rows(0, k).into_owned();
    let svd = rk.svd(true, false);
    let u_small = svd.u.as_ref().expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let mut lambda: Vec<f64> = order.iter().map(|&i| svd.singular_values[i].powi(2)).collect();
    lambda.resize(m, 0.0);
    let rank = truncation_rank(&lambda, eps, QR_FLOOR);
    let mut modes = Vec::with_capacity(rank);
    for &c in order.iter().take(rank) {
        let mut u = vec![0.0; n];
        for (i, qi) in q.iter().enumerate() {
            let a = u_small[(i, c)];
            u.iter_mut().zip(qi).for_each(|(ui, qv)| *ui += a * qv);
        }
        modes.push(u);
    }
    let sigma = lambda[..rank].iter().map(|l| l.sqrt()).collect();
    Ok(PodResult { modes, singular_values: sigma, eigenvalues: lambda })
}

/// Modified Gram-Schmidt with reorthogonalization in the `W` inner product.
/// Drops numerically dependent vectors; returns the indices that were kept.
pub fn orthonormalize(v: &mut Vec<Vec<f64>>, w: &InnerProduct) -> Vec<usize> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(v.len());
    let mut wout: Vec<Vec<f64>> = Vec::with_capacity(v.len());
    let mut kept = Vec::new();
    for (idx, mut x) in v.drain(..).enumerate() {
        let x_norm = w.norm(&x);
        for _ in 0..2 {
            for (q, wq) in out.iter().zip(&wout) {
                let c = dot(wq, &x);
                x.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
            }
        }
        let wx = w.apply(&x);
        let nx = dot(&x, &wx).max(0.0).sqrt();
        if nx > 1e-10 * x_norm && nx > 0.0 {
            out.push(x.iter().map(|a| a / nx).collect());
            wout.push(wx.iter().map(|a| a / nx).collect());
            kept.push(idx);
        }
    }
    *v = out;
    kept
}

/// Coefficients `UᵀWv` of the `W`-orthogonal projection onto `span U`
/// (`U` must be `W`-orthonormal).
pub fn project_coefficients(u: &[Vec<f64>], w: &InnerProduct, v: &[f64]) -> Vec<f64> {
    let wv = w.apply(v);
    u.iter().map(|m| dot(m, &wv)).collect()
}

/// `v − UUᵀWv`
pub fn projection_residual(u: &[Vec<f64>], w: &InnerProduct, v: &[f64]) -> Vec<f64> {
    let c = project_coefficients(u, w, v);
    let mut r = v.to_vec();
    for (m, ci) in u.iter().zip(&c) {
        r.iter_mut().zip(m).for_each(|(a, b)| *a -= ci * b);
    }
    r
}

/// `(1/|S| Σ ‖v − P v‖²_W)^{1/2}` over the snapshots `s`.
pub fn mean_projection_error<S: AsRef<[f64]>>(u: &[Vec<f64>], w: &InnerProduct, s: &[S]) -> f64 {
    if s.is_empty() {
        return 0.0;
    }
    let sum: f64 = s
        .iter()
        .map(|v| w.norm(&projection_residual(u, w, v.as_ref())).powi(2))
        .sum();
    (sum / s.len() as f64).sqrt()
}

const BASIS_MAGIC: &[u8; 8] = b"CMBASIS\0";
const BASIS_VERSION: u32 = 1;

/// Writes modes and singular values in a versioned little-endian format.
pub fn write_basis(out: &mut impl Write, modes: &[Vec<f64>], sigma: &[f64]) -> Result<()> {
    let n = modes.first().map_or(0, |m| m.len());
    if sigma.len() != modes.len() {
        return Err(Error::mismatch("singular value count", modes.len(), sigma.len()));
    }
    out.write_all(BASIS_MAGIC)?;
    out.write_u32::<LittleEndian>(BASIS_VERSION)?;
    out.write_u64::<LittleEndian>(n as u64)?;
    out.write_u64::<LittleEndian>(modes.len() as u64)?;
    for s in sigma {
        out.write_f64::<LittleEndian>(*s)?;
    }
    for m in modes {
        if m.len() != n {
            return Err(Error::mismatch("mode length", n, m.len()));
        }
        for x in m {
            out.write_f64::<LittleEndian>(*x)?;
        }
    }
    Ok(())
}

pub fn read_basis(input: &mut impl Read) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut magic = [0u8; 8];
    input.read_exact(&mut magic)?;
    if &magic != BASIS_MAGIC {
        return Err(Error::Format("not a basis file".into()));
    }
    let version = input.read_u32::<LittleEndian>()?;
    if version != BASIS_VERSION {
        return Err(Error::Format(format!("unsupported basis version {version}")));
    }
    let n = input.read_u64::<LittleEndian>()? as usize;
    let k = input.read_u64::<LittleEndian>()? as usize;
    let mut sigma = vec![0.0; k];
    input.read_f64_into::<LittleEndian>(&mut sigma)?;
    let mut modes = Vec::with_capacity(k);
    for _ in 0..k {
        let mut m = vec![0.0; n];
        input.read_f64_into::<LittleEndian>(&mut m)?;
        modes.push(m);
    }
    Ok((modes, sigma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const METHODS: [PodMethod; 2] = [PodMethod::Snapshots, PodMethod::QrSvd];

    fn spd_weight(n: usize) -> InnerProduct {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0 + (i % 3) as f64));
            if i + 1 < n {
                t.push((i, i + 1, 0.5));
                t.push((i + 1, i, 0.5));
            }
        }
        InnerProduct::Weighted(Arc::new(CsrMatrix::from_triplets(n, n, &t)))
    }

    fn gram_error(u: &[Vec<f64>], w: &InnerProduct) -> f64 {
        let mut e: f64 = 0.0;
        for (i, a) in u.iter().enumerate() {
            for (j, b) in u.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                e = e.max((w.dot(a, b) - target).abs());
            }
        }
        e
    }

    #[test]
    fn single_vector() {
        for m in METHODS {
            let r = pod(&[vec![2.0, 0.0, 0.0]], &InnerProduct::Euclidean, 1.0, m).unwrap();
            assert_eq!(r.len(), 1);
            assert!((r.singular_values[0] - 2.0).abs() < 1e-14);
            assert!((r.modes[0][0].abs() - 1.0).abs() < 1e-14);
            // tolerance above the norm keeps nothing
            assert!(pod(&[vec![2.0, 0.0, 0.0]], &InnerProduct::Euclidean, 2.5, m).unwrap().is_empty());
        }
    }

    #[test]
    fn rank_one_data_gives_one_mode() {
        let base = [1.0, -2.0, 0.5, 3.0];
        let s: Vec<Vec<f64>> = (1..6).map(|k| base.iter().map(|x| x * k as f64).collect()).collect();
        for m in METHODS {
            let r = pod(&s, &InnerProduct::Euclidean, 1e-8, m).unwrap();
            assert_eq!(r.len(), 1);
            assert!(mean_projection_error(&r.modes, &InnerProduct::Euclidean, &s) < 1e-12);
        }
    }

    #[test]
    fn singular_values_match_dense_svd_of_weighted_matrix() {
        // oracle: SVD of L^T S with W = L L^T
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, s_count) = (30, 12);
        let s: Vec<Vec<f64>> = (0..s_count)
            .map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let w = spd_weight(n);
        let InnerProduct::Weighted(wm) = &w else { unreachable!() };
        let chol = nalgebra::Cholesky::new(wm.to_dense()).unwrap();
        let smat = DMatrix::from_fn(n, s_count, |i, j| s[j][i]);
        let sv = (chol.l().transpose() * smat).singular_values();
        let mut expected: Vec<f64> = sv.iter().copied().collect();
        expected.sort_by(|a, b| b.total_cmp(a));
        for m in METHODS {
            let r = pod(&s, &w, 1e-12, m).unwrap();
            assert_eq!(r.len(), s_count);
            for (a, b) in r.singular_values.iter().zip(&expected) {
                assert!((a - b).abs() <= 1e-10 * expected[0], "{a} vs {b}");
            }
            assert!(gram_error(&r.modes, &w) < 1e-10);
        }
    }

    #[test]
    fn graded_spectrum_is_resolved_by_qr_route() {
        // σᵢ = 10^{-i}: the Gramian cannot see below ~1e-8 σ₁
        let n = 40;
        let k = 12;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut q: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        orthonormalize(&mut q, &InnerProduct::Euclidean);
        let s: Vec<Vec<f64>> = (0..k)
            .map(|j| q[j].iter().map(|x| x * 10f64.powi(-(j as i32))).collect())
            .collect();
        let r = pod(&s, &InnerProduct::Euclidean, 0.0, PodMethod::QrSvd).unwrap();
        assert_eq!(r.len(), k);
        for (j, sv) in r.singular_values.iter().enumerate() {
            let exact = 10f64.powi(-(j as i32));
            assert!((sv - exact).abs() < 1e-14, "{j}: {sv}");
        }
    }

    #[test]
    fn zero_snapshots_have_no_modes() {
        for m in METHODS {
            let r = pod(&[vec![0.0; 5], vec![0.0; 5]], &InnerProduct::Euclidean, 1e-3, m).unwrap();
            assert!(r.is_empty());
            assert_eq!(r.tail(), 0.0);
        }
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let e = pod(&[vec![1.0, 2.0], vec![1.0]], &InnerProduct::Euclidean, 1e-3, PodMethod::Snapshots);
        assert!(matches!(e, Err(Error::DimensionMismatch { .. })));
        assert!(pod(&[vec![1.0; 3]], &spd_weight(4), 1e-3, PodMethod::Snapshots).is_err());
    }

    #[test]
    fn basis_round_trip_and_bad_magic() {
        let modes = vec![vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 1e-300]];
        let sigma = vec![3.0, 0.25];
        let mut buf = Vec::new();
        write_basis(&mut buf, &modes, &sigma).unwrap();
        let (m2, s2) = read_basis(&mut buf.as_slice()).unwrap();
        assert_eq!((m2, s2), (modes, sigma));
        buf[0] = b'X';
        assert!(matches!(read_basis(&mut buf.as_slice()), Err(Error::Format(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn truncation_is_minimal_and_error_equals_tail(
            seed in 0u64..1000,
            s_count in 2usize..10,
            log_eps in -4.0f64..0.5,
            qr in proptest::bool::ANY,
        ) {
            let method = if qr { PodMethod::QrSvd } else { PodMethod::Snapshots };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 15;
            let w = spd_weight(n);
            let s: Vec<Vec<f64>> = (0..s_count)
                .map(|j| (0..n).map(|_| rng.random_range(-1.0..1.0) * 0.5f64.powi(j as i32)).collect())
                .collect();
            let eps = 10f64.powf(log_eps);
            let r = pod(&s, &w, eps, method).unwrap();
            let tail = r.tail();
            prop_assert!(tail <= eps * eps * (1.0 + 1e-12));
            if !r.is_empty() {
                prop_assert!(tail + r.eigenvalues[r.len() - 1] > eps * eps);
            }
            prop_assert!(gram_error(&r.modes, &w) < 1e-10);
            // Eckart-Young: the squared projection error equals the tail
            let err2 = mean_projection_error(&r.modes, &w, &s).powi(2) * s_count as f64;
            prop_assert!((err2 - tail).abs() <= 1e-10 * (1.0 + r.eigenvalues[0]));
        }
    }
}
