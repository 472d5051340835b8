use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use super::{ProteinIoError, ProteinStructure};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SasaConfig {
    pub probe_radius: f64,
    pub sphere_points: usize,
}

impl Default for SasaConfig {
    fn default() -> Self {
        Self { probe_radius: 1.4, sphere_points: 92 }
    }
}

/// `n` points on the unit sphere along a golden-angle spiral.
pub fn sphere_points(n: usize) -> Vec<[f64; 3]> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|k| {
            let z = 1.0 - (2.0 * k as f64 + 1.0) / n as f64;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden * k as f64;
            [r * phi.cos(), r * phi.sin(), z]
        })
        .collect()
}

/// Orthonormal frame attached to a point cloud: principal axes, signs fixed by
/// the third moment along each axis. Rotating the cloud rotates the frame with it,
/// so test points laid out in this frame make the result rotation-invariant.
fn body_frame(points: &[[f64; 3]]) -> Matrix3<f64> {
    if points.len() < 3 {
        return Matrix3::identity();
    }
    let n = points.len() as f64;
    let mut mean = Vector3::zeros();
    for p in points {
        mean += Vector3::from(*p);
    }
    mean /= n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = Vector3::from(*p) - mean;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let ev = [eig.eigenvalues[order[0]], eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]];
    let scale = ev[0].abs().max(1e-12);
    if (ev[0] - ev[1]) / scale < 1e-9 || (ev[1] - ev[2]) / scale < 1e-9 {
        // degenerate spectrum: axes are not determined by the cloud
        return Matrix3::identity();
    }
    let mut axes: Vec<Vector3<f64>> = order.iter().map(|&k| eig.eigenvectors.column(k).into_owned()).collect();
    for axis in axes.iter_mut().take(2) {
        let m3: f64 = points.iter().map(|p| (Vector3::from(*p) - mean).dot(axis).powi(3)).sum();
        if m3 < 0.0 {
            *axis = -*axis;
        }
    }
    axes[2] = axes[0].cross(&axes[1]);
    Matrix3::from_columns(&[axes[0], axes[1], axes[2]])
}

/// Per-atom accessible area by the Shrake–Rupley test-point method.
///
/// `frame_points` orients the test-point sphere (typically the Cα trace).
pub fn shrake_rupley(
    centers: &[[f64; 3]],
    radii: &[f64],
    frame_points: &[[f64; 3]],
    cfg: SasaConfig,
) -> Result<Vec<f64>, ProteinIoError> {
    for (i, &r) in radii.iter().enumerate() {
        if !(r > 0.0) {
            return Err(ProteinIoError::BadRadius { index: i, radius: r });
        }
    }
    let n = centers.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let frame = body_frame(frame_points);
    let unit: Vec<Vector3<f64>> = sphere_points(cfg.sphere_points).into_iter().map(|p| frame * Vector3::from(p)).collect();
    let expanded: Vec<f64> = radii.iter().map(|r| r + cfg.probe_radius).collect();
    let max_r = expanded.iter().copied().fold(0.0, f64::max);
    let cell = 2.0 * max_r;

    let key = |p: &[f64; 3]| -> (i64, i64, i64) {
        ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64, (p[2] / cell).floor() as i64)
    };
    let mut grid: std::collections::HashMap<(i64, i64, i64), Vec<usize>> = std::collections::HashMap::new();
    for (i, c) in centers.iter().enumerate() {
        grid.entry(key(c)).or_default().push(i);
    }

    let mut out = vec![0.0; n];
    let mut neighbors = Vec::new();
    for i in 0..n {
        let ci = Vector3::from(centers[i]);
        let (kx, ky, kz) = key(&centers[i]);
        neighbors.clear();
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(list) = grid.get(&(kx + dx, ky + dy, kz + dz)) else { continue };
                    for &j in list {
                        if j == i {
                            continue;
                        }
                        let d = (Vector3::from(centers[j]) - ci).norm();
                        if d < 1e-6 {
                            return Err(ProteinIoError::Degenerate { a: i.min(j), b: i.max(j) });
                        }
                        if d < expanded[i] + expanded[j] {
                            neighbors.push(j);
                        }
                    }
                }
            }
        }
        // nearest first so buried points exit early
        neighbors.sort_by(|&a, &b| {
            let da = (Vector3::from(centers[a]) - ci).norm_squared();
            let db = (Vector3::from(centers[b]) - ci).norm_squared();
            da.total_cmp(&db).then(a.cmp(&b))
        });
        let mut exposed = 0usize;
        for u in &unit {
            let p = ci + u * expanded[i];
            let buried = neighbors.iter().any(|&j| (p - Vector3::from(centers[j])).norm_squared() < expanded[j] * expanded[j]);
            if !buried {
                exposed += 1;
            }
        }
        let area = 4.0 * std::f64::consts::PI * expanded[i] * expanded[i];
        out[i] = area * exposed as f64 / unit.len() as f64;
    }
    Ok(out)
}

/// Fills `sasa` and `rsa` on every residue; returns per-residue `(sasa, rsa)`.
pub fn compute_sasa(s: &mut ProteinStructure, cfg: SasaConfig) -> Result<Vec<(f64, f64)>, ProteinIoError> {
    let centers: Vec<[f64; 3]> = s.atoms.iter().map(|a| a.pos).collect();
    let radii: Vec<f64> = s.atoms.iter().map(|a| a.radius).collect();
    let per_atom = shrake_rupley(&centers, &radii, &s.ca_coords(), cfg)?;
    let mut per_res = vec![0.0; s.residues.len()];
    for (a, v) in s.atoms.iter().zip(per_atom) {
        per_res[a.residue] += v;
    }
    let mut out = Vec::with_capacity(per_res.len());
    for (r, sasa) in s.residues.iter_mut().zip(per_res) {
        r.sasa = sasa;
        r.rsa = (sasa / r.amino_acid.properties().max_sasa).clamp(0.0, 1.0);
        out.push((r.sasa, r.rsa));
    }
    Ok(out)
}
