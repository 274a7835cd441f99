//! Node feature storage with cached mean-centered unit rows, synthetic
//! feature generators, and the text/binary feature file formats.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{input_err, Result};

/// Centered rows with a norm below this are treated as degenerate.
pub const EPS_NORM: f64 = 1e-12;

const BINARY_MAGIC: &[u8; 4] = b"HLPF";

/// Dense `n × F` feature matrix.
///
/// Construction computes the column mean over all nodes and caches every row
/// as `(x_v - mean) / ‖x_v - mean‖`, or a zero row when the centered norm is
/// below [`EPS_NORM`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: Array2<f64>,
    mean: Array1<f64>,
    centered_unit: Array2<f64>,
    degenerate: Vec<bool>,
}

impl FeatureMatrix {
    pub fn new(rows: Array2<f64>) -> Result<Self> {
        let (n, f) = rows.dim();
        if n == 0 || f == 0 {
            return Err(input_err!("feature matrix must be non-empty, got {n}x{f}"));
        }
        if let Some(pos) = rows.iter().position(|x| !x.is_finite()) {
            return Err(input_err!(
                "non-finite feature value at row {}, column {}",
                pos / f,
                pos % f
            ));
        }
        let mean = rows.mean_axis(Axis(0)).expect("n >= 1");
        let mut centered_unit = &rows - &mean;
        let mut degenerate = vec![false; n];
        for (v, mut row) in centered_unit.axis_iter_mut(Axis(0)).enumerate() {
            let norm = row.dot(&row).sqrt();
            if norm < EPS_NORM {
                row.fill(0.0);
                degenerate[v] = true;
            } else {
                row /= norm;
            }
        }
        Ok(Self {
            rows,
            mean,
            centered_unit,
            degenerate,
        })
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }

    pub fn row(&self, v: usize) -> ArrayView1<'_, f64> {
        self.rows.row(v)
    }

    pub fn mean(&self) -> ArrayView1<'_, f64> {
        self.mean.view()
    }

    pub fn centered_unit(&self) -> ArrayView2<'_, f64> {
        self.centered_unit.view()
    }

    pub fn centered_unit_row(&self, v: usize) -> ArrayView1<'_, f64> {
        self.centered_unit.row(v)
    }

    /// True when node `v`'s centered feature vanished (norm < [`EPS_NORM`]).
    pub fn is_degenerate(&self, v: usize) -> bool {
        self.degenerate[v]
    }

    /// Mean-centered rows, `x_v - mean`, without normalization.
    pub fn centered(&self) -> Array2<f64> {
        &self.rows - &self.mean
    }

    /// Loads either format, detected by the leading magic bytes.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = BufReader::new(File::open(path)?);
        let is_binary = reader.fill_buf()?.starts_with(BINARY_MAGIC);
        if is_binary {
            Self::read_binary(reader)
        } else {
            Self::read_text(reader)
        }
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_text(BufWriter::new(File::create(path)?))
    }

    pub fn save_binary(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_binary(BufWriter::new(File::create(path)?))
    }

    /// Text format: `feat <n> <F>` then `n` lines of `F` floats.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "feat {} {}", self.n(), self.dim())?;
        for row in self.rows.axis_iter(Axis(0)) {
            let line: Vec<String> = row.iter().map(|x| format!("{x:?}")).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_text<R: BufRead>(reader: R) -> Result<Self> {
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| input_err!("empty feature file"))??;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let (n, f) = match parts.as_slice() {
            ["feat", n, f] => (
                n.parse::<usize>().map_err(|_| input_err!("bad row count in header"))?,
                f.parse::<usize>().map_err(|_| input_err!("bad dimension in header"))?,
            ),
            _ => return Err(input_err!("expected header `feat <n> <F>`, got `{header}`")),
        };
        let mut data = Vec::with_capacity(n * f);
        let mut seen = 0usize;
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            seen += 1;
            if seen > n {
                return Err(input_err!("more than {n} feature rows"));
            }
            let before = data.len();
            for tok in line.split_whitespace() {
                let x: f64 = tok
                    .parse()
                    .map_err(|_| input_err!("row {seen}: cannot parse `{tok}`"))?;
                data.push(x);
            }
            if data.len() - before != f {
                return Err(input_err!(
                    "row {seen}: expected {f} values, found {}",
                    data.len() - before
                ));
            }
        }
        if seen != n {
            return Err(input_err!("header declares {n} rows but file has {seen}"));
        }
        let rows = Array2::from_shape_vec((n, f), data).expect("shape checked");
        Self::new(rows)
    }

    /// Binary format: magic `HLPF`, `n` and `F` as u64 LE, then `n·F` f32 LE
    /// values row-major.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(BINARY_MAGIC)?;
        w.write_all(&(self.n() as u64).to_le_bytes())?;
        w.write_all(&(self.dim() as u64).to_le_bytes())?;
        for x in self.rows.iter() {
            w.write_all(&(*x as f32).to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(input_err!("bad magic bytes in binary feature file"));
        }
        let mut word = [0u8; 8];
        r.read_exact(&mut word)?;
        let n = u64::from_le_bytes(word) as usize;
        r.read_exact(&mut word)?;
        let f = u64::from_le_bytes(word) as usize;
        let count = n
            .checked_mul(f)
            .ok_or_else(|| input_err!("header size overflow: {n} x {f}"))?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != count * 4 {
            return Err(input_err!(
                "header declares {n}x{f} values but payload holds {} bytes",
                bytes.len()
            ));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Self::new(Array2::from_shape_vec((n, f), data).expect("shape checked"))
    }
}

/// I.i.d. standard normal features, deterministic in `seed`.
pub fn gaussian_features(n: usize, dim: usize, seed: u64) -> Result<FeatureMatrix> {
    if n == 0 || dim == 0 {
        return Err(input_err!("gaussian features need n, F >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    FeatureMatrix::new(Array2::from_shape_vec((n, dim), data).expect("shape"))
}

/// Two-dimensional unit features `(cos θ_v, sin θ_v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitCircleFeatures {
    angles: Vec<f64>,
}

impl UnitCircleFeatures {
    pub fn new(angles: Vec<f64>) -> Result<Self> {
        if angles.iter().any(|t| !t.is_finite()) {
            return Err(input_err!("angles must be finite"));
        }
        Ok(Self { angles })
    }

    pub fn angles(&self) -> &[f64] {
        &self.angles
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn row(&self, v: usize) -> [f64; 2] {
        let (s, c) = self.angles[v].sin_cos();
        [c, s]
    }

    /// Raw (uncentered) similarity `cos(θ_u − θ_v)` between unit rows.
    pub fn cosine(&self, u: usize, v: usize) -> f64 {
        (self.angles[u] - self.angles[v]).cos()
    }

    pub fn to_array(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.angles.len(), 2));
        for (v, mut row) in out.axis_iter_mut(Axis(0)).enumerate() {
            let [c, s] = self.row(v);
            row[0] = c;
            row[1] = s;
        }
        out
    }

    pub fn to_feature_matrix(&self) -> Result<FeatureMatrix> {
        FeatureMatrix::new(self.to_array())
    }
}
