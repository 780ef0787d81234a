//! CSV grids and 8-bit PGM heatmaps of solution fields.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::problem::Evaluation;

/// `res` lines of `res` comma-separated values; line `i` is `y_i`.
pub fn grid_csv(values: &[f64], res: usize) -> Result<String> {
    if values.len() != res * res {
        return Err(Error::size(format!("{} values for a {res}x{res} grid", values.len())));
    }
    let mut out = String::with_capacity(values.len() * 24);
    for row in values.chunks(res) {
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            write!(out, "{v}").unwrap();
        }
        out.push('\n');
    }
    Ok(out)
}

/// Min-max normalization used for a heatmap.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Normalization {
    pub min: f64,
    pub max: f64,
}

/// Binary PGM (P5) with the top image row at `y = 1`. A constant field maps
/// to all zeros.
pub fn pgm(values: &[f64], res: usize) -> Result<(Vec<u8>, Normalization)> {
    if values.len() != res * res {
        return Err(Error::size(format!("{} values for a {res}x{res} grid", values.len())));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let mut out = format!("P5\n{res} {res}\n255\n").into_bytes();
    for row in values.chunks(res).rev() {
        out.extend(row.iter().map(|v| if span > 0.0 { ((v - min) / span * 255.0).round() as u8 } else { 0 }));
    }
    Ok((out, Normalization { min, max }))
}

/// Writes `pred`, `truth` and `abserr` as CSV grids and PGM heatmaps, plus
/// `normalization.txt` recording each heatmap's value range.
pub fn write_fields(eval: &Evaluation, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let res = eval.resolution;
    let mut sidecar = String::from("# file min max (gray = round(255 * (v - min) / (max - min)))\n");
    for (name, values) in [("pred", &eval.prediction), ("truth", &eval.truth), ("abserr", &eval.abs_error)] {
        std::fs::write(dir.join(format!("{name}.csv")), grid_csv(values, res)?)?;
        let (image, norm) = pgm(values, res)?;
        std::fs::write(dir.join(format!("{name}.pgm")), image)?;
        writeln!(sidecar, "{name}.pgm {:e} {:e}", norm.min, norm.max).unwrap();
    }
    std::fs::write(dir.join("normalization.txt"), sidecar)?;
    Ok(())
}
