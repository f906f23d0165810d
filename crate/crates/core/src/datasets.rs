//! Paired datasets, synthetic generators, and CSV / IDX ingestion.
//!
//! Finite labels are stored as one-dimensional integer codes. One-hot
//! vectors are produced only where a consumer needs them (network inputs
//! and non-delta kernels), via [`PairedDataset::x_features`] and friends.

use std::borrow::Cow;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::kernels::{label_code, one_hot};
use crate::{rng_from_seed, Error, KernelSpec, Result, Samples};

/// Domain of one side of a paired dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Domain {
    Continuous { dim: usize },
    Finite { num_classes: usize },
}

impl Domain {
    /// Width of the feature vector handed to networks and non-delta kernels.
    pub fn feature_dim(&self) -> usize {
        match *self {
            Domain::Continuous { dim } => dim,
            Domain::Finite { num_classes } => num_classes,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Domain::Finite { .. })
    }

    fn storage_dim(&self) -> usize {
        match *self {
            Domain::Continuous { dim } => dim,
            Domain::Finite { .. } => 1,
        }
    }

    fn check(&self, s: &Samples, side: &str) -> Result<()> {
        if s.dim() != self.storage_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.storage_dim(),
                got: s.dim(),
            });
        }
        match *self {
            Domain::Continuous { .. } => {
                if !s.all_finite() {
                    return Err(Error::invalid(format!(
                        "{side} contains NaN or infinite values"
                    )));
                }
            }
            Domain::Finite { num_classes } => {
                for r in s.rows() {
                    let c = label_code(r)?;
                    if c as usize >= num_classes {
                        return Err(Error::InvalidLabel(format!(
                            "{side} label {c} outside [0, {num_classes})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    fn features(&self, s: &Samples) -> Samples {
        match *self {
            Domain::Continuous { .. } => s.clone(),
            Domain::Finite { num_classes } => {
                let mut data = Vec::with_capacity(s.len() * num_classes);
                for r in s.rows() {
                    data.extend(one_hot(r[0] as u32, num_classes));
                }
                Samples::new(num_classes, data).expect("one-hot width is positive")
            }
        }
    }

    fn kernel_input<'a>(&self, s: &'a Samples, k: &KernelSpec) -> Result<Cow<'a, Samples>> {
        match (self, k.is_delta()) {
            (Domain::Finite { .. }, true) => Ok(Cow::Borrowed(s)),
            (Domain::Finite { .. }, false) => Ok(Cow::Owned(self.features(s))),
            (Domain::Continuous { .. }, true) => Err(Error::invalid(
                "delta kernel applies only to finite-label data",
            )),
            (Domain::Continuous { .. }, false) => Ok(Cow::Borrowed(s)),
        }
    }
}

/// Aligned `(x, y)` sample pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDataset {
    x: Samples,
    y: Samples,
    x_kind: Domain,
    y_kind: Domain,
    provenance: String,
}

impl PairedDataset {
    pub fn new(
        x: Samples,
        y: Samples,
        x_kind: Domain,
        y_kind: Domain,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::invalid(format!(
                "x has {} samples but y has {}",
                x.len(),
                y.len()
            )));
        }
        x_kind.check(&x, "x")?;
        y_kind.check(&y, "y")?;
        Ok(Self {
            x,
            y,
            x_kind,
            y_kind,
            provenance: provenance.into(),
        })
    }

    /// Both sides continuous with dimensions taken from the samples.
    pub fn continuous(x: Samples, y: Samples, provenance: impl Into<String>) -> Result<Self> {
        let (dx, dy) = (x.dim(), y.dim());
        Self::new(
            x,
            y,
            Domain::Continuous { dim: dx },
            Domain::Continuous { dim: dy },
            provenance,
        )
    }

    pub fn x(&self) -> &Samples {
        &self.x
    }

    pub fn y(&self) -> &Samples {
        &self.y
    }

    pub fn x_kind(&self) -> Domain {
        self.x_kind
    }

    pub fn y_kind(&self) -> Domain {
        self.y_kind
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            x: self.x.select(indices),
            y: self.y.select(indices),
            x_kind: self.x_kind,
            y_kind: self.y_kind,
            provenance: self.provenance.clone(),
        }
    }

    /// Replaces the responses, keeping the conditioning inputs.
    pub fn with_y(&self, y: Samples) -> Result<Self> {
        Self::new(
            self.x.clone(),
            y,
            self.x_kind,
            self.y_kind,
            self.provenance.clone(),
        )
    }

    /// Exchanges the roles of `x` and `y`.
    pub fn swapped(&self) -> Self {
        Self {
            x: self.y.clone(),
            y: self.x.clone(),
            x_kind: self.y_kind,
            y_kind: self.x_kind,
            provenance: format!("{} (swapped)", self.provenance),
        }
    }

    /// `x` as network input (one-hot for finite labels).
    pub fn x_features(&self) -> Samples {
        self.x_kind.features(&self.x)
    }

    /// `y` as network output space (one-hot for finite labels).
    pub fn y_features(&self) -> Samples {
        self.y_kind.features(&self.y)
    }

    /// `x` in the form kernel `k` expects: codes for delta, features otherwise.
    pub fn x_for_kernel(&self, k: &KernelSpec) -> Result<Cow<'_, Samples>> {
        self.x_kind.kernel_input(&self.x, k)
    }

    pub fn y_for_kernel(&self, k: &KernelSpec) -> Result<Cow<'_, Samples>> {
        self.y_kind.kernel_input(&self.y, k)
    }
}

fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// `x ~ U[-1, 1]`, `y ~ N(slope·x, noise_sd²)`.
pub fn gen_conditional_gaussian(
    n: usize,
    slope: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<PairedDataset> {
    if n == 0 {
        return Err(Error::EmptyInput("conditional gaussian size"));
    }
    if !(noise_sd >= 0.0) {
        return Err(Error::invalid("noise_sd must be nonnegative"));
    }
    let mut rng = rng_from_seed(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random_range(-1.0..=1.0);
        let e = normal(&mut rng);
        xs.push(x);
        ys.push(slope * x + noise_sd * e);
    }
    PairedDataset::continuous(
        Samples::from_scalars(&xs),
        Samples::from_scalars(&ys),
        format!("conditional_gaussian(n={n}, slope={slope}, noise_sd={noise_sd}, seed={seed})"),
    )
}

/// Number of points in the cubic toy problem.
pub const CUBIC_TOY_SIZE: usize = 20;
/// Half-width of the cubic toy input interval.
pub const CUBIC_TOY_RANGE: f64 = 4.0;
/// Noise standard deviation of the cubic toy (variance 9).
pub const CUBIC_TOY_NOISE_SD: f64 = 3.0;

/// `n` points with `x ~ U[-4, 4]` and `y = x³ + ε`, `ε ~ N(0, 9)`.
pub fn gen_cubic(n: usize, seed: u64) -> Result<PairedDataset> {
    if n == 0 {
        return Err(Error::EmptyInput("cubic size"));
    }
    let mut rng = rng_from_seed(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.random_range(-CUBIC_TOY_RANGE..=CUBIC_TOY_RANGE);
        xs.push(x);
        ys.push(x.powi(3) + CUBIC_TOY_NOISE_SD * normal(&mut rng));
    }
    PairedDataset::continuous(
        Samples::from_scalars(&xs),
        Samples::from_scalars(&ys),
        format!("cubic(n={n}, seed={seed})"),
    )
}

/// The 20-point cubic toy regression set.
pub fn gen_cubic_toy(seed: u64) -> Result<PairedDataset> {
    gen_cubic(CUBIC_TOY_SIZE, seed)
}

/// Radius of the circle carrying the mixture class centers.
pub const MIXTURE_RADIUS: f64 = 2.0;
/// Per-coordinate standard deviation around each mixture center.
pub const MIXTURE_SD: f64 = 0.3;

/// Center of class `c` among `num_classes` evenly spaced on a circle.
pub fn mixture_center(c: usize, num_classes: usize) -> [f64; 2] {
    let t = 2.0 * PI * c as f64 / num_classes as f64;
    [MIXTURE_RADIUS * t.cos(), MIXTURE_RADIUS * t.sin()]
}

/// Label `c ~ U{0..num_classes}`, `y ~ N(center(c), MIXTURE_SD² I₂)`.
///
/// The label is the conditioning variable `x`.
pub fn gen_label_conditional_mixture(
    n: usize,
    num_classes: usize,
    seed: u64,
) -> Result<PairedDataset> {
    if n == 0 || num_classes == 0 {
        return Err(Error::EmptyInput("mixture size"));
    }
    let mut rng = rng_from_seed(seed);
    let mut labels = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(2 * n);
    for _ in 0..n {
        let c = rng.random_range(0..num_classes);
        let [cx, cy] = mixture_center(c, num_classes);
        labels.push(c as f64);
        ys.push(cx + MIXTURE_SD * normal(&mut rng));
        ys.push(cy + MIXTURE_SD * normal(&mut rng));
    }
    PairedDataset::new(
        Samples::from_scalars(&labels),
        Samples::new(2, ys)?,
        Domain::Finite { num_classes },
        Domain::Continuous { dim: 2 },
        format!("label_mixture(n={n}, classes={num_classes}, seed={seed})"),
    )
}

/// Which side of a CSV holds finite labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    #[default]
    None,
    X,
    Y,
}

fn cell_value(record: &csv::StringRecord, col: usize, line: u64, name: &str) -> Result<f64> {
    let raw = record.get(col).unwrap_or("");
    raw.trim().parse::<f64>().map_err(|_| {
        Error::Parse(format!(
            "non-numeric cell {raw:?} at row {line}, column {} ({name})",
            col + 1
        ))
    })
}

fn finite_side(values: Samples, side: &str) -> Result<(Samples, Domain)> {
    let mut codes = Vec::with_capacity(values.len());
    for (i, r) in values.rows().enumerate() {
        let c = label_code(r)
            .map_err(|e| Error::Parse(format!("{side} label in data row {}: {e}", i + 1)))?;
        codes.push(c as f64);
    }
    let num_classes = if values.dim() > 1 {
        values.dim()
    } else {
        codes.iter().fold(0.0f64, |m, &c| m.max(c)) as usize + 1
    };
    Ok((
        Samples::from_scalars(&codes),
        Domain::Finite { num_classes },
    ))
}

fn open_csv(path: &Path) -> Result<(csv::Reader<std::fs::File>, csv::StringRecord)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse(format!("{}: {other:?}", path.display())),
        })?;
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse(format!("{}: malformed header: {e}", path.display())))?
        .clone();
    Ok((rdr, headers))
}

/// Column names from the header row of a CSV file.
pub fn csv_header(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let (_, headers) = open_csv(path.as_ref())?;
    Ok(headers.iter().map(|h| h.trim().to_string()).collect())
}

/// Reads the named column groups of a CSV; returns one row-major buffer per group.
fn read_column_groups(path: &Path, groups: &[&[String]]) -> Result<Vec<Vec<f64>>> {
    let (mut rdr, headers) = open_csv(path)?;
    let find = |name: &String| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| {
                Error::Parse(format!("{}: header has no column {name:?}", path.display()))
            })
    };
    let idx: Vec<Vec<usize>> = groups
        .iter()
        .map(|g| g.iter().map(find).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let mut out = vec![Vec::new(); groups.len()];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        for ((cols, names), buf) in idx.iter().zip(groups).zip(out.iter_mut()) {
            for (&c, name) in cols.iter().zip(names.iter()) {
                buf.push(cell_value(&rec, c, line, name)?);
            }
        }
    }
    Ok(out)
}

/// Reads the named columns of a CSV as a sample list; an empty `cols`
/// takes every column.
pub fn load_samples_csv(path: impl AsRef<Path>, cols: &[String]) -> Result<Samples> {
    let path = path.as_ref();
    let cols = if cols.is_empty() {
        csv_header(path)?
    } else {
        cols.to_vec()
    };
    if cols.is_empty() {
        return Err(Error::EmptyInput("csv columns"));
    }
    let data = read_column_groups(path, &[&cols])?.remove(0);
    if data.is_empty() {
        return Err(Error::EmptyInput("csv data rows"));
    }
    Samples::new(cols.len(), data)
}

/// Writes a header row followed by one CSV row per entry of `rows`.
pub fn write_table<R: AsRef<[f64]>>(
    path: impl AsRef<Path>,
    header: &[String],
    rows: &[R],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())
        .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    w.write_record(header).map_err(io)?;
    for r in rows {
        let r = r.as_ref();
        if r.len() != header.len() {
            return Err(Error::DimensionMismatch {
                expected: header.len(),
                got: r.len(),
            });
        }
        w.write_record(r.iter().map(|v| format_float(*v)))
            .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a CSV with a header row, taking `x_cols` and `y_cols` by name.
///
/// A finite side given as one column holds integer codes; given as several
/// columns it is a one-hot encoding and is decoded here.
pub fn load_csv(
    path: impl AsRef<Path>,
    x_cols: &[String],
    y_cols: &[String],
    label_mode: LabelMode,
) -> Result<PairedDataset> {
    let path = path.as_ref();
    if x_cols.is_empty() || y_cols.is_empty() {
        return Err(Error::invalid("x and y column lists must be nonempty"));
    }
    let mut groups = read_column_groups(path, &[x_cols, y_cols])?;
    let ys = groups.pop().unwrap_or_default();
    let xs = groups.pop().unwrap_or_default();
    if xs.is_empty() {
        return Err(Error::EmptyInput("csv data rows"));
    }
    let x = Samples::new(x_cols.len(), xs)?;
    let y = Samples::new(y_cols.len(), ys)?;
    let (x, x_kind) = match label_mode {
        LabelMode::X => finite_side(x, "x")?,
        _ => {
            let d = x.dim();
            (x, Domain::Continuous { dim: d })
        }
    };
    let (y, y_kind) = match label_mode {
        LabelMode::Y => finite_side(y, "y")?,
        _ => {
            let d = y.dim();
            (y, Domain::Continuous { dim: d })
        }
    };
    PairedDataset::new(x, y, x_kind, y_kind, path.display().to_string())
}

/// Column names used by [`write_csv`].
pub fn column_names(prefix: &str, kind: Domain) -> Vec<String> {
    match kind {
        Domain::Finite { .. } => vec![format!("{prefix}_label")],
        Domain::Continuous { dim: 1 } => vec![prefix.to_string()],
        Domain::Continuous { dim } => (0..dim).map(|i| format!("{prefix}{i}")).collect(),
    }
}

/// Writes `x` then `y` columns with a header row.
pub fn write_csv(data: &PairedDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut header = column_names("x", data.x_kind);
    header.extend(column_names("y", data.y_kind));
    let rows: Vec<Vec<f64>> = data
        .x
        .rows()
        .zip(data.y.rows())
        .map(|(xr, yr)| xr.iter().chain(yr).copied().collect())
        .collect();
    write_table(path, &header, &rows)
}

/// Shortest round-trip decimal form.
pub fn format_float(v: f64) -> String {
    format!("{v:?}")
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_u32_be(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Parse(format!("{what}: truncated header at byte offset {offset}")))
}

/// Reads the first `max_n` records of an IDX image/label file pair.
///
/// Pixels are scaled to `[0, 1]`; `downscale` applies 2×2 mean pooling
/// (odd trailing rows/columns are dropped).
pub fn load_idx_subset(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    max_n: usize,
    downscale: bool,
) -> Result<PairedDataset> {
    let img = fs::read(images_path.as_ref())?;
    let lab = fs::read(labels_path.as_ref())?;
    let magic = read_u32_be(&img, 0, "images")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Parse(format!(
            "images: bad magic number {magic:#010x} at byte offset 0"
        )));
    }
    let n_img = read_u32_be(&img, 4, "images")? as usize;
    let rows = read_u32_be(&img, 8, "images")? as usize;
    let cols = read_u32_be(&img, 12, "images")? as usize;
    let magic = read_u32_be(&lab, 0, "labels")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Parse(format!(
            "labels: bad magic number {magic:#010x} at byte offset 0"
        )));
    }
    let n_lab = read_u32_be(&lab, 4, "labels")? as usize;
    if n_img != n_lab {
        return Err(Error::Parse(format!(
            "image count {n_img} differs from label count {n_lab} (byte offset 4)"
        )));
    }
    let n = n_img.min(max_n);
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::EmptyInput("idx records"));
    }
    let px = rows * cols;
    let need = 16 + n * px;
    if img.len() < need {
        return Err(Error::Parse(format!(
            "images: truncated pixel data at byte offset {}",
            img.len()
        )));
    }
    if lab.len() < 8 + n {
        return Err(Error::Parse(format!(
            "labels: truncated label data at byte offset {}",
            lab.len()
        )));
    }
    let (out_r, out_c) = if downscale {
        (rows / 2, cols / 2)
    } else {
        (rows, cols)
    };
    if out_r == 0 || out_c == 0 {
        return Err(Error::invalid("image too small to downscale"));
    }
    let mut xs = Vec::with_capacity(n * out_r * out_c);
    for i in 0..n {
        let base = 16 + i * px;
        let pixel = |r: usize, c: usize| img[base + r * cols + c] as f64 / 255.0;
        for r in 0..out_r {
            for c in 0..out_c {
                let v = if downscale {
                    0.25 * (pixel(2 * r, 2 * c)
                        + pixel(2 * r, 2 * c + 1)
                        + pixel(2 * r + 1, 2 * c)
                        + pixel(2 * r + 1, 2 * c + 1))
                } else {
                    pixel(r, c)
                };
                xs.push(v);
            }
        }
    }
    let labels: Vec<f64> = lab[8..8 + n].iter().map(|&b| b as f64).collect();
    let num_classes = lab[8..8 + n].iter().copied().max().unwrap_or(0) as usize + 1;
    PairedDataset::new(
        Samples::new(out_r * out_c, xs)?,
        Samples::from_scalars(&labels),
        Domain::Continuous { dim: out_r * out_c },
        Domain::Finite { num_classes },
        format!(
            "idx({}, {}, n={n}, downscale={downscale})",
            images_path.as_ref().display(),
            labels_path.as_ref().display()
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn conditional_gaussian_noiseless_is_exact() {
        let d = gen_conditional_gaussian(50, 2.0, 0.0, 3).unwrap();
        for (x, y) in d.x().rows().zip(d.y().rows()) {
            assert_eq!(y[0], 2.0 * x[0]);
            assert!((-1.0..=1.0).contains(&x[0]));
        }
        assert!(gen_conditional_gaussian(0, 2.0, 0.1, 3).is_err());
    }

    #[test]
    fn conditional_gaussian_slope_by_least_squares() {
        let d = gen_conditional_gaussian(5000, 2.0, 0.5, 17).unwrap();
        let (mut sxy, mut sxx, mx, my) = (0.0, 0.0, d.x().mean()[0], d.y().mean()[0]);
        for (x, y) in d.x().rows().zip(d.y().rows()) {
            sxy += (x[0] - mx) * (y[0] - my);
            sxx += (x[0] - mx) * (x[0] - mx);
        }
        let slope = sxy / sxx;
        assert!((slope - 2.0).abs() < 0.02 * 2.0, "slope {slope}");
    }

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(
            gen_conditional_gaussian(30, 1.5, 0.2, 9).unwrap(),
            gen_conditional_gaussian(30, 1.5, 0.2, 9).unwrap()
        );
        assert_eq!(gen_cubic_toy(4).unwrap(), gen_cubic_toy(4).unwrap());
        assert_eq!(
            gen_label_conditional_mixture(40, 3, 1).unwrap(),
            gen_label_conditional_mixture(40, 3, 1).unwrap()
        );
        assert_ne!(gen_cubic_toy(4).unwrap(), gen_cubic_toy(5).unwrap());
    }

    #[test]
    fn cubic_toy_recipe() {
        let d = gen_cubic_toy(0).unwrap();
        assert_eq!(d.len(), 20);
        assert!(d.x().as_slice().iter().all(|x| (-4.0..=4.0).contains(x)));
        let big = gen_cubic(10_000, 1).unwrap();
        let resid: Vec<f64> = big
            .x()
            .rows()
            .zip(big.y().rows())
            .map(|(x, y)| y[0] - x[0].powi(3))
            .collect();
        let m = resid.iter().sum::<f64>() / resid.len() as f64;
        let v = resid.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (resid.len() - 1) as f64;
        assert!(m.abs() < 0.1, "mean {m}");
        assert!((v - 9.0).abs() < 0.5, "var {v}");
    }

    #[test]
    fn mixture_counts_and_centers() {
        let (n, k) = (4000, 4);
        let d = gen_label_conditional_mixture(n, k, 5).unwrap();
        assert_eq!(d.x_kind(), Domain::Finite { num_classes: 4 });
        for c in 0..k {
            let idx: Vec<usize> = (0..n).filter(|&i| d.x().row(i)[0] == c as f64).collect();
            let expect = n as f64 / k as f64;
            assert!((idx.len() as f64 - expect).abs() <= 5.0 * expect.sqrt());
            let ys = d.y().select(&idx);
            let m = ys.mean();
            let center = mixture_center(c, k);
            let tol = 3.0 * MIXTURE_SD / (idx.len() as f64).sqrt();
            assert!((m[0] - center[0]).abs() < tol && (m[1] - center[1]).abs() < tol);
        }
        let one = gen_label_conditional_mixture(500, 1, 5).unwrap();
        assert!(one.x().as_slice().iter().all(|&c| c == 0.0));
    }

    #[test]
    fn finite_features_are_one_hot() {
        let d = gen_label_conditional_mixture(10, 3, 2).unwrap();
        let f = d.x_features();
        assert_eq!(f.dim(), 3);
        for (code, row) in d.x().rows().zip(f.rows()) {
            assert_eq!(row, one_hot(code[0] as u32, 3).as_slice());
        }
        assert_eq!(d.x_for_kernel(&KernelSpec::Delta).unwrap().dim(), 1);
        assert_eq!(d.x_for_kernel(&KernelSpec::Linear).unwrap().dim(), 3);
        assert!(d.y_for_kernel(&KernelSpec::Delta).is_err());
    }

    #[test]
    fn construction_rejects_bad_values() {
        let x = Samples::from_scalars(&[0.0, f64::NAN]);
        let y = Samples::from_scalars(&[0.0, 1.0]);
        assert!(PairedDataset::continuous(x, y.clone(), "t").is_err());
        let labels = Samples::from_scalars(&[0.0, 3.0]);
        assert!(PairedDataset::new(
            labels,
            y.clone(),
            Domain::Finite { num_classes: 3 },
            Domain::Continuous { dim: 1 },
            "t"
        )
        .is_err());
        assert!(PairedDataset::continuous(Samples::from_scalars(&[1.0]), y, "t").is_err());
    }

    #[test]
    fn csv_round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(&p, "a,b,c\n0.125,-3,1e-3\n2.5,7.75,0\n").unwrap();
        let d = load_csv(
            &p,
            &["a".into(), "c".into()],
            &["b".into()],
            LabelMode::None,
        )
        .unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.x().as_slice(), &[0.125, 1e-3, 2.5, 0.0]);
        assert_eq!(d.y().as_slice(), &[-3.0, 7.75]);

        let q = dir.path().join("e.csv");
        let data = gen_label_conditional_mixture(25, 3, 8).unwrap();
        write_csv(&data, &q).unwrap();
        let back = load_csv(
            &q,
            &["x_label".into()],
            &["y0".into(), "y1".into()],
            LabelMode::X,
        )
        .unwrap();
        assert_eq!(back.x(), data.x());
        assert_eq!(back.y(), data.y());
    }

    #[test]
    fn csv_errors_name_location() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "a,b\n1,2\n3,oops\n").unwrap();
        let e = load_csv(&p, &["a".into()], &["b".into()], LabelMode::None).unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("row 3") && msg.contains("column 2"), "{msg}");
        let e = load_csv(&p, &["zz".into()], &["b".into()], LabelMode::None).unwrap_err();
        assert!(e.to_string().contains("zz"));
    }

    #[test]
    fn csv_one_hot_labels_decoded() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("oh.csv");
        fs::write(&p, "c0,c1,c2,v\n0,1,0,1.5\n0,0,1,2.5\n").unwrap();
        let d = load_csv(
            &p,
            &["c0".into(), "c1".into(), "c2".into()],
            &["v".into()],
            LabelMode::X,
        )
        .unwrap();
        assert_eq!(d.x().as_slice(), &[1.0, 2.0]);
        assert_eq!(d.x_kind(), Domain::Finite { num_classes: 3 });
    }

    fn write_idx(
        dir: &Path,
        n: usize,
        rows: usize,
        cols: usize,
    ) -> (std::path::PathBuf, std::path::PathBuf) {
        let ip = dir.join("img.idx");
        let lp = dir.join("lab.idx");
        let mut f = fs::File::create(&ip).unwrap();
        for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
            f.write_all(&v.to_be_bytes()).unwrap();
        }
        let pixels: Vec<u8> = (0..n * rows * cols).map(|i| (i * 37 % 256) as u8).collect();
        f.write_all(&pixels).unwrap();
        let mut g = fs::File::create(&lp).unwrap();
        for v in [IDX_LABELS_MAGIC, n as u32] {
            g.write_all(&v.to_be_bytes()).unwrap();
        }
        g.write_all(&(0..n).map(|i| (i % 10) as u8).collect::<Vec<_>>())
            .unwrap();
        (ip, lp)
    }

    #[test]
    fn idx_parse_and_downscale() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx(dir.path(), 12, 4, 6);
        let d = load_idx_subset(&ip, &lp, 5, false).unwrap();
        assert_eq!(d.len(), 5);
        assert_eq!(d.x().dim(), 24);
        assert!(d.x().as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(d.x().row(0)[1], 37.0 / 255.0);
        assert_eq!(d.y().as_slice(), &[0.0, 1.0, 2.0, 3.0, 4.0]);

        let s = load_idx_subset(&ip, &lp, 100, true).unwrap();
        assert_eq!(s.len(), 12);
        assert_eq!(s.x().dim(), 6);
        let px = |i: usize| (i * 37 % 256) as f64 / 255.0;
        let expect = (px(0) + px(1) + px(6) + px(7)) / 4.0;
        assert!((s.x().row(0)[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn idx_bad_magic_reports_offset() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = write_idx(dir.path(), 3, 2, 2);
        let e = load_idx_subset(&lp, &ip, 3, false).unwrap_err();
        assert!(e.to_string().contains("byte offset 0"));
        let mut bytes = fs::read(&ip).unwrap();
        bytes.truncate(20);
        fs::write(&ip, bytes).unwrap();
        let e = load_idx_subset(&ip, &lp, 3, false).unwrap_err();
        assert!(e.to_string().contains("truncated"));
    }
}
