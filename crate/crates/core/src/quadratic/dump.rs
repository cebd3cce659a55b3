use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DMatrix;

use super::QuadraticRecursion;
use crate::Result;

/// Dense CSV, one matrix row per line, full precision.
pub fn write_matrix_csv<W: Write>(m: &DMatrix<f64>, mut out: W) -> Result<()> {
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|x| format!("{x:e}")).collect();
        writeln!(out, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Writes `M_k.csv` (padded reduced) and `Mbar_k.csv` for every level into `dir`.
pub fn write_recursion_csv(rec: &QuadraticRecursion, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for lv in &rec.levels {
        for (name, m) in [("M", &lv.m), ("Mbar", &lv.m_bar)] {
            let f = File::create(dir.join(format!("{name}_{}.csv", lv.level)))?;
            write_matrix_csv(m, BufWriter::new(f))?;
        }
    }
    Ok(())
}
