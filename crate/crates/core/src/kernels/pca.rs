use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Principal axes fit on one set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// `dims` unit-length components, strongest first.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
}

/// Named 2-d coordinates for one projected set.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjection {
    pub set: String,
    pub coordinates: Vec<Vec<f64>>,
}

impl Pca {
    pub fn fit<R: AsRef<[f64]>>(rows: &[R], dims: usize) -> Result<Pca> {
        let n = rows.len();
        if n < dims + 1 {
            return Err(Error::TooFewRows { needed: dims + 1, got: n });
        }
        let d = rows[0].as_ref().len();
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r.as_ref()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);

        let mut cov = DMatrix::<f64>::zeros(d, d);
        let mut c = vec![0.0; d];
        for r in rows {
            for (ci, (v, m)) in c.iter_mut().zip(r.as_ref().iter().zip(&mean)) {
                *ci = v - m;
            }
            for i in 0..d {
                for j in i..d {
                    cov[(i, j)] += c[i] * c[j];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[(i, j)] / (n as f64 - 1.0);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }

        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let top = eig.eigenvalues[order[0]].max(0.0);
        let positive = order.iter().filter(|&&i| eig.eigenvalues[i] > 1e-10 * top.max(f64::MIN_POSITIVE)).count();
        if positive < dims {
            return Err(Error::RankDeficient { positive, needed: dims });
        }

        let mut components = Vec::with_capacity(dims);
        let mut eigenvalues = Vec::with_capacity(dims);
        for &i in &order[..dims] {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let lead = v.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            components.push(v);
            eigenvalues.push(eig.eigenvalues[i]);
        }
        Ok(Pca {
            mean,
            components,
            eigenvalues,
        })
    }

    pub fn project<R: AsRef<[f64]>>(&self, rows: &[R]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                self.components
                    .iter()
                    .map(|c| r.as_ref().iter().zip(&self.mean).zip(c).map(|((v, m), w)| (v - m) * w).sum())
                    .collect()
            })
            .collect()
    }
}

/// Fits two principal components on `fit_on` and projects each named set.
pub fn pca_project<R: AsRef<[f64]>>(fit_on: &[R], project: &[(&str, &[R])]) -> Result<(Pca, Vec<PcaProjection>)> {
    let pca = Pca::fit(fit_on, 2)?;
    let projections = project
        .iter()
        .map(|(name, rows)| PcaProjection {
            set: name.to_string(),
            coordinates: pca.project(rows),
        })
        .collect();
    Ok((pca, projections))
}

/// Writes `set,x,y` rows.
pub fn write_coordinates<W: Write>(writer: W, projections: &[PcaProjection]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["set", "x", "y"])?;
    for p in projections {
        for c in &p.coordinates {
            wtr.write_record([p.set.clone(), c[0].to_string(), c[1].to_string()])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<writer>", e))?;
    Ok(())
}
