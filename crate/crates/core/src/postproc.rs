//! Descriptor finishing: PCA whitening learned on an auxiliary descriptor
//! set, and fusion of descriptors computed at several input scales.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::{l2norm, Descriptor};

const WHITEN_MAGIC: &[u8; 4] = b"COOW";
const WHITEN_VERSION: u8 = 1;

/// Eigenvalues below this are treated as null directions.
const MIN_EIGENVALUE: f64 = 1e-12;

/// Centering, projection onto the leading principal axes and per-axis
/// rescaling to unit variance.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningModel {
    mean: Vec<f64>,
    /// `k x input_dim`, rows orthonormal.
    projection: DMatrix<f64>,
    eigenvalues: Vec<f64>,
}

impl WhiteningModel {
    pub fn new(mean: Vec<f64>, projection: DMatrix<f64>, eigenvalues: Vec<f64>) -> Result<Self> {
        if projection.ncols() != mean.len() || projection.nrows() != eigenvalues.len() {
            return Err(Error::Dimension(format!(
                "projection {}x{} vs mean {} and {} eigenvalues",
                projection.nrows(),
                projection.ncols(),
                mean.len(),
                eigenvalues.len()
            )));
        }
        if eigenvalues.iter().any(|&e| !(e > 0.0)) {
            return Err(Error::Validation("eigenvalues must be positive".into()));
        }
        Ok(WhiteningModel {
            mean,
            projection,
            eigenvalues,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Whitened coordinates before the final normalization.
    pub fn project(&self, d: &Descriptor) -> Result<Descriptor> {
        if d.dim() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "descriptor dim {} vs whitening input {}",
                d.dim(),
                self.input_dim()
            )));
        }
        let centered = DVector::from_iterator(
            d.dim(),
            d.values().iter().zip(&self.mean).map(|(x, m)| x - m),
        );
        let y = &self.projection * centered;
        Ok(Descriptor::new(
            y.iter()
                .zip(&self.eigenvalues)
                .map(|(v, e)| v / e.sqrt())
                .collect(),
        ))
    }
}

/// Learns a PCA whitening of dimension `out_dim` from `descs`.
///
/// Components are ordered by decreasing eigenvalue; each is oriented so its
/// largest-magnitude coordinate is positive. Components with eigenvalue
/// below `1e-12` are dropped with a warning.
pub fn fit_whitening(descs: &[Descriptor], out_dim: usize) -> Result<WhiteningModel> {
    let n = descs.len();
    if out_dim == 0 {
        return Err(Error::Domain("output dimension must be positive".into()));
    }
    if n < out_dim + 1 {
        return Err(Error::Domain(format!(
            "whitening to {out_dim} dims needs at least {} descriptors, got {n}",
            out_dim + 1
        )));
    }
    let dim = descs[0].dim();
    if let Some(bad) = descs.iter().find(|d| d.dim() != dim) {
        return Err(Error::Dimension(format!(
            "descriptor dim {} vs {dim}",
            bad.dim()
        )));
    }
    if out_dim > dim {
        return Err(Error::Domain(format!(
            "output dimension {out_dim} exceeds input dimension {dim}"
        )));
    }

    let mut mean = vec![0.0; dim];
    for d in descs {
        for (m, v) in mean.iter_mut().zip(d.values()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let x = DMatrix::from_fn(n, dim, |r, c| descs[r].values()[c] - mean[c]);
    let norm = 1.0 / (n as f64 - 1.0);

    // (eigenvalue, unit axis) pairs, through whichever of the covariance or
    // the Gram matrix is smaller.
    let mut components: Vec<(f64, DVector<f64>)> = if dim <= n {
        let cov = (x.transpose() * &x) * norm;
        let eig = SymmetricEigen::new(cov);
        (0..dim)
            .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned()))
            .collect()
    } else {
        let gram = (&x * x.transpose()) * norm;
        let eig = SymmetricEigen::new(gram);
        (0..n)
            .filter(|&i| eig.eigenvalues[i] > MIN_EIGENVALUE)
            .map(|i| {
                let axis = x.transpose() * eig.eigenvectors.column(i);
                let len = axis.norm();
                (eig.eigenvalues[i], axis / len)
            })
            .collect()
    };
    components.sort_by(|a, b| b.0.total_cmp(&a.0));
    components.truncate(out_dim);
    let before = components.len();
    components.retain(|(e, _)| *e > MIN_EIGENVALUE);
    if components.len() < out_dim {
        log::warn!(
            "whitening: {} of {out_dim} components have near-zero variance and were dropped",
            out_dim - components.len().min(before)
        );
    }
    if components.is_empty() {
        return Err(Error::Domain(
            "whitening: all components have near-zero variance".into(),
        ));
    }

    let k = components.len();
    let mut projection = DMatrix::<f64>::zeros(k, dim);
    let mut eigenvalues = Vec::with_capacity(k);
    for (row, (e, mut axis)) in components.into_iter().enumerate() {
        let lead = axis
            .iter()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, v)| {
                if v.abs() > best.1 {
                    (i, v.abs())
                } else {
                    best
                }
            })
            .0;
        if axis[lead] < 0.0 {
            axis = -axis;
        }
        projection.row_mut(row).copy_from(&axis.transpose());
        eigenvalues.push(e);
    }
    WhiteningModel::new(mean, projection, eigenvalues)
}

/// `l2norm(diag(1/sqrt(lambda)) P (d - mean))`.
pub fn apply_whitening(model: &WhiteningModel, d: &Descriptor) -> Result<Descriptor> {
    Ok(l2norm(&model.project(d)?))
}

/// Mean of per-scale descriptors, renormalized.
pub fn multiscale_aggregate(descs: &[Descriptor]) -> Result<Descriptor> {
    let Some(first) = descs.first() else {
        return Err(Error::Domain("no descriptors to aggregate".into()));
    };
    let dim = first.dim();
    let mut acc = vec![0.0; dim];
    for d in descs {
        if d.dim() != dim {
            return Err(Error::Dimension(format!(
                "descriptor dim {} vs {dim}",
                d.dim()
            )));
        }
        for (a, v) in acc.iter_mut().zip(d.values()) {
            *a += v;
        }
    }
    let n = descs.len() as f64;
    Ok(l2norm(&Descriptor::new(
        acc.into_iter().map(|v| v / n).collect(),
    )))
}

pub fn save_whitening(model: &WhiteningModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_whitening(model)).map_err(|e| Error::io(path, e))
}

pub fn load_whitening(path: impl AsRef<Path>) -> Result<WhiteningModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_whitening(&bytes)
}

/// `COOW`, version 1, `u32` input dim, `u32` output dim, then the mean,
/// the row-major projection and the eigenvalues as `f32`.
pub fn encode_whitening(model: &WhiteningModel) -> Vec<u8> {
    let (k, dim) = (model.output_dim(), model.input_dim());
    let mut w = Writer::with_capacity(13 + 4 * (dim + k * dim + k));
    w.bytes(WHITEN_MAGIC);
    w.u8(WHITEN_VERSION);
    w.u32(dim as u32);
    w.u32(k as u32);
    w.f64_as_f32(&model.mean);
    let rows: Vec<f64> = model.projection.transpose().iter().copied().collect();
    w.f64_as_f32(&rows);
    w.f64_as_f32(&model.eigenvalues);
    w.finish()
}

pub fn decode_whitening(bytes: &[u8]) -> Result<WhiteningModel> {
    let mut r = Reader::new(bytes);
    r.magic(WHITEN_MAGIC, WHITEN_VERSION)?;
    let dim = r.u32()? as usize;
    let k = r.u32()? as usize;
    let expected = 4 * (dim + k * dim + k);
    if r.remaining() != expected {
        return Err(Error::Corrupt(format!(
            "whitening model needs {expected} payload bytes, found {}",
            r.remaining()
        )));
    }
    let mean = r.f64_from_f32(dim)?;
    let rows = r.f64_from_f32(k * dim)?;
    let eigenvalues = r.f64_from_f32(k)?;
    r.finish()?;
    WhiteningModel::new(mean, DMatrix::from_row_slice(k, dim, &rows), eigenvalues)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rng: &mut ChaCha8Rng, n: usize, stds: &[f64]) -> Vec<Descriptor> {
        (0..n)
            .map(|_| {
                Descriptor::new(
                    stds.iter()
                        .map(|s| {
                            let z: f64 = StandardNormal.sample(rng);
                            s * z
                        })
                        .collect(),
                )
            })
            .collect()
    }

    #[test]
    fn recovers_known_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = gaussian(&mut rng, 20_000, &[2.0, 1.0]);
        let model = fit_whitening(&data, 2).unwrap();
        assert_abs_diff_eq!(model.eigenvalues()[0], 4.0, epsilon = 0.15);
        assert_abs_diff_eq!(model.eigenvalues()[1], 1.0, epsilon = 0.05);
        let p = model.projection();
        assert!(p[(0, 0)] > 0.99);
        assert!(p[(1, 1)] > 0.99);
    }

    #[test]
    fn full_rank_projection_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let data = gaussian(&mut rng, 200, &[1.0, 3.0, 0.5, 2.0, 1.5]);
        let model = fit_whitening(&data, 5).unwrap();
        let p = model.projection();
        let eye = p.transpose() * p;
        assert!((eye - DMatrix::<f64>::identity(5, 5)).amax() < 1e-6);
        for row in p.row_iter() {
            let lead = row
                .iter()
                .fold(0.0f64, |m, v| if v.abs() > m.abs() { *v } else { m });
            assert!(lead > 0.0);
        }
    }

    #[test]
    fn gram_route_matches_covariance_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        // 6 samples in 10 dims goes through the Gram matrix; compare its
        // spectrum with an explicit covariance eigendecomposition.
        let data = gaussian(&mut rng, 6, &[1.0; 10]);
        let model = fit_whitening(&data, 4).unwrap();
        let n = data.len() as f64;
        let mean: Vec<f64> = (0..10)
            .map(|c| data.iter().map(|d| d.values()[c]).sum::<f64>() / n)
            .collect();
        let x = DMatrix::from_fn(6, 10, |r, c| data[r].values()[c] - mean[c]);
        let cov = (x.transpose() * &x) / (n - 1.0);
        let mut expect: Vec<f64> = cov.symmetric_eigen().eigenvalues.iter().copied().collect();
        expect.sort_by(|a, b| b.total_cmp(a));
        for (a, b) in model.eigenvalues().iter().zip(&expect) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        let p = model.projection();
        assert!((p * p.transpose() - DMatrix::<f64>::identity(4, 4)).amax() < 1e-9);
    }

    #[test]
    fn degenerate_inputs() {
        let same = vec![Descriptor::new(vec![0.6, 0.8]); 5];
        assert!(matches!(fit_whitening(&same, 1), Err(Error::Domain(_))));
        let few = vec![Descriptor::new(vec![1.0, 0.0]); 2];
        assert!(matches!(fit_whitening(&few, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn drops_null_directions() {
        // Points on a line in 3-D: only one non-null component.
        let data: Vec<Descriptor> = (0..10)
            .map(|i| Descriptor::new(vec![i as f64, 2.0 * i as f64, 0.0]))
            .collect();
        let model = fit_whitening(&data, 3).unwrap();
        assert_eq!(model.output_dim(), 1);
    }

    #[test]
    fn apply_examples() {
        let model =
            WhiteningModel::new(vec![0.0, 0.0], DMatrix::identity(2, 2), vec![4.0, 1.0]).unwrap();
        let pre = model.project(&Descriptor::new(vec![2.0, 0.0])).unwrap();
        assert_eq!(pre.values(), &[1.0, 0.0]);
        let out = apply_whitening(&model, &Descriptor::new(vec![2.0, 0.0])).unwrap();
        assert_eq!(out.values(), &[1.0, 0.0]);
        let at_mean = apply_whitening(&model, &Descriptor::new(vec![0.0, 0.0])).unwrap();
        assert!(at_mean.is_zero());
        assert!(apply_whitening(&model, &Descriptor::new(vec![1.0])).is_err());
    }

    #[test]
    fn whitened_fit_set_has_identity_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let k = 4;
        let data = gaussian(&mut rng, 50 * k, &[3.0, 0.2, 1.0, 2.0, 0.7, 1.1]);
        let model = fit_whitening(&data, k).unwrap();
        let outs: Vec<Descriptor> = data.iter().map(|d| model.project(d).unwrap()).collect();
        let n = outs.len() as f64;
        let mut cov = DMatrix::<f64>::zeros(k, k);
        for o in &outs {
            let v = DVector::from_column_slice(o.values());
            cov += &v * v.transpose();
        }
        cov /= n - 1.0;
        let err = (cov - DMatrix::<f64>::identity(k, k)).norm();
        assert!(err < 0.1, "frobenius error {err}");
        for d in &data {
            let w = apply_whitening(&model, d).unwrap();
            assert_abs_diff_eq!(w.norm(), 1.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn fit_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = gaussian(&mut rng, 40, &[1.0, 2.0, 3.0]);
        assert_eq!(
            fit_whitening(&data, 2).unwrap(),
            fit_whitening(&data, 2).unwrap()
        );
    }

    #[test]
    fn model_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = gaussian(&mut rng, 30, &[1.0, 2.0, 3.0]);
        let model = fit_whitening(&data, 2).unwrap();
        let bytes = encode_whitening(&model);
        assert_eq!(&bytes[..5], b"COOW\x01");
        let back = decode_whitening(&bytes).unwrap();
        assert_eq!(back.input_dim(), 3);
        assert_eq!(back.output_dim(), 2);
        assert_eq!(encode_whitening(&back), bytes);
        assert!(decode_whitening(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn multiscale() {
        let a = Descriptor::new(vec![0.6, 0.8]);
        assert_eq!(multiscale_aggregate(std::slice::from_ref(&a)).unwrap(), a);
        let twice = multiscale_aggregate(&[a.clone(), a.clone()]).unwrap();
        assert_abs_diff_eq!(twice.values()[0], 0.6, epsilon = 1e-12);
        let e = multiscale_aggregate(&[
            Descriptor::new(vec![1.0, 0.0]),
            Descriptor::new(vec![0.0, 1.0]),
        ])
        .unwrap();
        assert_abs_diff_eq!(
            e.values()[0],
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            e.values()[1],
            std::f64::consts::FRAC_1_SQRT_2,
            epsilon = 1e-12
        );
        assert!(multiscale_aggregate(&[a, Descriptor::new(vec![1.0])]).is_err());
        assert!(multiscale_aggregate(&[]).is_err());
    }
}
