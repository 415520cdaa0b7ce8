//! Sampled observables and the trajectory CSV format.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Sample {
    pub t: f64,
    pub rho: Array2<C64>,
    pub ranks: Vec<usize>,
    pub ttn_size: usize,
    pub wall_ms: f64,
}

impl Sample {
    pub fn purity(&self) -> f64 {
        purity(&self.rho)
    }

    pub fn max_rank(&self) -> usize {
        self.ranks.iter().copied().max().unwrap_or(0)
    }
}

pub fn purity(rho: &Array2<C64>) -> f64 {
    // Tr ρ² = Σ ρ_ij ρ_ji
    let m = rho.nrows();
    let mut s = C64::new(0.0, 0.0);
    for i in 0..m {
        for j in 0..m {
            s += rho[[i, j]] * rho[[j, i]];
        }
    }
    s.re
}

pub fn trace(rho: &Array2<C64>) -> C64 {
    (0..rho.nrows()).map(|i| rho[[i, i]]).sum()
}

pub fn hermiticity_defect(rho: &Array2<C64>) -> f64 {
    let m = rho.nrows();
    let mut d: f64 = 0.0;
    for i in 0..m {
        for j in 0..m {
            d = d.max((rho[[i, j]] - rho[[j, i]].conj()).norm());
        }
    }
    d
}

pub fn max_abs_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    /// Largest discarded weight Σσ² of any truncation (PS2 only).
    pub truncation: f64,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    /// Max element-wise difference of ρ over samples at matching times.
    pub fn max_diff(&self, other: &Trajectory) -> f64 {
        let mut d: f64 = 0.0;
        for a in &self.samples {
            if let Some(b) = other.samples.iter().find(|b| (b.t - a.t).abs() < 1e-9) {
                d = d.max(max_abs_diff(&a.rho, &b.rho));
            }
        }
        d
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let m = self.samples.first().map(|s| s.rho.nrows()).unwrap_or(0);
        let mut w = CsvSink::create(path, m)?;
        for s in &self.samples {
            w.push(s)?;
        }
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let headers = rdr.headers()?.clone();
        let n_rho = headers.iter().filter(|h| h.starts_with("re_rho_")).count();
        // n_rho = M(M+1)/2
        let m = ((((8 * n_rho + 1) as f64).sqrt() - 1.0) / 2.0).round() as usize;
        if m * (m + 1) / 2 != n_rho {
            return Err(Error::Invalid(format!("{}: unexpected column set", path.display())));
        }
        let col = |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| Error::Invalid(format!("missing column {name}")));
        let it = col("t_fs")?;
        let is = col("ttn_size")?;
        let iw = col("wall_ms")?;
        let ir = col("max_rank")?;
        let mut idx = vec![];
        for i in 0..m {
            for j in i..m {
                idx.push((i, j, col(&format!("re_rho_{i}{j}"))?, col(&format!("im_rho_{i}{j}"))?));
            }
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Invalid(format!("bad number '{s}': {e}")));
        let mut samples = vec![];
        for rec in rdr.records() {
            let rec = rec?;
            let mut rho = Array2::zeros((m, m));
            for &(i, j, re, im) in &idx {
                let z = C64::new(num(&rec[re])?, num(&rec[im])?);
                rho[[i, j]] = z;
                rho[[j, i]] = z.conj();
            }
            samples.push(Sample {
                t: num(&rec[it])?,
                rho,
                ranks: vec![num(&rec[ir])? as usize],
                ttn_size: num(&rec[is])? as usize,
                wall_ms: num(&rec[iw])?,
            });
        }
        Ok(Self { samples, truncation: 0.0 })
    }
}

/// Row-by-row CSV writer, flushed after every sample so aborted runs keep
/// their partial output.
pub struct CsvSink {
    out: BufWriter<File>,
    m: usize,
}

impl CsvSink {
    pub fn create(path: &Path, m: usize) -> Result<Self> {
        let mut out = BufWriter::new(File::create(path)?);
        let mut cols = vec!["t_fs".to_string()];
        for i in 0..m {
            for j in i..m {
                cols.push(format!("re_rho_{i}{j}"));
                cols.push(format!("im_rho_{i}{j}"));
            }
        }
        cols.extend(["purity", "max_rank", "ttn_size", "wall_ms"].map(String::from));
        writeln!(out, "{}", cols.join(","))?;
        out.flush()?;
        Ok(Self { out, m })
    }

    pub fn push(&mut self, s: &Sample) -> Result<()> {
        let mut row = vec![format!("{:.6}", s.t)];
        for i in 0..self.m {
            for j in i..self.m {
                let z = s.rho[[i, j]];
                row.push(format!("{:.12e}", z.re));
                row.push(format!("{:.12e}", z.im));
            }
        }
        row.push(format!("{:.12e}", s.purity()));
        row.push(s.max_rank().to_string());
        row.push(s.ttn_size.to_string());
        row.push(format!("{:.3}", s.wall_ms));
        writeln!(self.out, "{}", row.join(","))?;
        self.out.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64) -> Sample {
        let rho = Array2::from_shape_vec(
            (2, 2),
            vec![C64::new(0.6, 0.0), C64::new(0.1, -0.2), C64::new(0.1, 0.2), C64::new(0.4, 0.0)],
        )
        .unwrap();
        Sample { t, rho, ranks: vec![4, 7], ttn_size: 123, wall_ms: 1.5 }
    }

    #[test]
    fn csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("traj.csv");
        let tr = Trajectory { samples: vec![sample(0.0), sample(0.5)], truncation: 0.0 };
        tr.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("t_fs,re_rho_00,im_rho_00,re_rho_01,im_rho_01,re_rho_11,im_rho_11,purity,max_rank,ttn_size,wall_ms\n"));
        let back = Trajectory::read_csv(&p).unwrap();
        assert_eq!(back.samples.len(), 2);
        assert!(back.max_diff(&tr) < 1e-12);
        assert_eq!(back.samples[1].max_rank(), 7);
    }

    #[test]
    fn purity_of_pure_and_mixed() {
        let s = sample(0.0);
        // 0.36 + 0.16 + 2·0.05
        assert!((s.purity() - 0.62).abs() < 1e-14);
        assert!(hermiticity_defect(&s.rho) < 1e-15);
        assert!((trace(&s.rho) - C64::new(1.0, 0.0)).norm() < 1e-15);
    }
}
