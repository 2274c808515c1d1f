//! Weight persistence: a small little-endian binary format plus CSV for
//! tiny fixtures (chosen by the `.csv` extension).
//!
//! Binary layout: 16-byte header (4-byte magic `GSW1`, u32 version, u32 rows,
//! u32 cols, all little-endian) followed by `rows * cols` f32 values in
//! row-major order.

use std::fs;
use std::path::Path;

use anyhow::{bail, Context};

use gemmsample::matrix::{ElementPrecision, LmHeadWeights, Matrix};

const MAGIC: [u8; 4] = *b"GSW1";
const VERSION: u32 = 1;

pub fn save(path: &Path, weights: &LmHeadWeights<f64>) -> anyhow::Result<()> {
    if path.extension().is_some_and(|e| e == "csv") {
        return save_csv(path, weights);
    }
    let (rows, cols) = (weights.vocab(), weights.dim());
    let mut buf = Vec::with_capacity(16 + rows * cols * 4);
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&u32::try_from(rows).context("row count exceeds u32")?.to_le_bytes());
    buf.extend_from_slice(&u32::try_from(cols).context("col count exceeds u32")?.to_le_bytes());
    for &x in weights.matrix().data() {
        buf.extend_from_slice(&(x as f32).to_le_bytes());
    }
    fs::write(path, buf).with_context(|| format!("writing {}", path.display()))
}

pub fn load(path: &Path) -> anyhow::Result<LmHeadWeights<f64>> {
    if path.extension().is_some_and(|e| e == "csv") {
        return load_csv(path);
    }
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.len() < 16 || bytes[..4] != MAGIC {
        bail!("{} is not a weight file (bad magic)", path.display());
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != VERSION {
        bail!("unsupported weight file version {version}");
    }
    let rows = word(8) as usize;
    let cols = word(12) as usize;
    let expected = 16 + rows * cols * 4;
    if bytes.len() != expected {
        bail!(
            "{}: expected {expected} bytes for {rows}x{cols}, found {}",
            path.display(),
            bytes.len()
        );
    }
    let data: Vec<f64> = bytes[16..]
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    Ok(LmHeadWeights::new(Matrix::new(rows, cols, data)?, ElementPrecision::Full)?)
}

fn save_csv(path: &Path, weights: &LmHeadWeights<f64>) -> anyhow::Result<()> {
    let mut out = String::new();
    for r in 0..weights.vocab() {
        let row: Vec<String> = weights.row(r).iter().map(|x| format!("{x}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn load_csv(path: &Path) -> anyhow::Result<LmHeadWeights<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .with_context(|| format!("{}:{}", path.display(), lineno + 1))?;
        match cols {
            None => cols = Some(values.len()),
            Some(c) if c != values.len() => {
                bail!("{}:{}: ragged row", path.display(), lineno + 1)
            }
            _ => {}
        }
        data.extend(values);
        rows += 1;
    }
    let cols = cols.context("empty weight file")?;
    Ok(LmHeadWeights::new(Matrix::new(rows, cols, data)?, ElementPrecision::Full)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gemmsample::synth;

    #[test]
    fn binary_round_trip_is_f32_exact() {
        let dir = std::env::temp_dir().join("gemmsample-weights-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("w.bin");
        let w = synth::lm_head_weights::<f64>(5, 7, 3);
        save(&path, &w).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.vocab(), 7);
        assert_eq!(loaded.dim(), 3);
        for (a, b) in w.matrix().data().iter().zip(loaded.matrix().data()) {
            assert_eq!(*a as f32, *b as f32);
        }
        let header = fs::read(&path).unwrap();
        assert_eq!(&header[..4], b"GSW1");
        assert_eq!(header.len(), 16 + 7 * 3 * 4);
    }

    #[test]
    fn csv_round_trip() {
        let dir = std::env::temp_dir().join("gemmsample-weights-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("w.csv");
        let w = synth::lm_head_weights::<f64>(6, 3, 2);
        save(&path, &w).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(loaded.vocab(), 3);
        assert_eq!(loaded.dim(), 2);
        for (a, b) in w.matrix().data().iter().zip(loaded.matrix().data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_corrupt_files() {
        let dir = std::env::temp_dir().join("gemmsample-weights-test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.bin");
        fs::write(&path, b"nope").unwrap();
        assert!(load(&path).is_err());
    }
}
