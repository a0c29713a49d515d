//! Atomic file output and deterministic number formatting.

use std::fs;
use std::io;
use std::path::Path;

/// Format a float with 17 significant digits so the decimal round-trips
/// to the exact same bits; output files are byte-comparable across runs.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Write via a temporary file in the same directory plus rename, so a
/// partial run never leaves a truncated file behind.
pub fn atomic_write(path: &Path, contents: &[u8]) -> io::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp_path = Path::new(&tmp);
    fs::write(tmp_path, contents)?;
    fs::rename(tmp_path, path)?;
    Ok(())
}

/// Rows of `(t, mean, median, q05, q95, frac_below)` in the fixed column
/// order of the summary file.
pub fn summary_csv(per_step: &[sgdlab_core::analysis::StepStats]) -> String {
    let mut out = String::from("t,mean_f,median_f,q05,q95,frac_below_threshold\n");
    for s in per_step {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.t,
            fmt_f64(s.mean_f),
            fmt_f64(s.median_f),
            fmt_f64(s.q05),
            fmt_f64(s.q95),
            fmt_f64(s.frac_below),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatted_floats_round_trip() {
        for v in [0.1, 2.0 / 3.0, 1e-300, 123456.789, f64::MIN_POSITIVE] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = std::env::temp_dir().join("sgdlab_output_test");
        let path = dir.join("file.csv");
        atomic_write(&path, b"one").unwrap();
        atomic_write(&path, b"two").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"two");
        fs::remove_dir_all(&dir).ok();
    }
}
