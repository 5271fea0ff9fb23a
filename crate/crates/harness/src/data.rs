//! Dataset loading: synthetic blobs, IDX image files and CSV tables.

use std::fs;
use std::path::{Path, PathBuf};

use lap_core::{Matrix, Rng};

use crate::config::{BlobSpec, DatasetConfig};
use crate::error::{HarnessError, Result};

/// Row-major features with integer class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Matrix,
    pub labels: Vec<usize>,
    pub n_classes: usize,
    /// Per-item shape of a feature row, e.g. `[28, 28]` for IDX images.
    pub input_shape: Vec<usize>,
}

impl Dataset {
    pub fn new(
        x: Matrix,
        labels: Vec<usize>,
        n_classes: usize,
        input_shape: Vec<usize>,
    ) -> Result<Self> {
        if x.rows() != labels.len() {
            return Err(HarnessError::config(
                "dataset",
                format!("{} rows but {} labels", x.rows(), labels.len()),
            ));
        }
        if input_shape.iter().product::<usize>() != x.cols() {
            return Err(HarnessError::config(
                "dataset",
                format!(
                    "input shape {input_shape:?} does not match {} features",
                    x.cols()
                ),
            ));
        }
        Ok(Self {
            x,
            labels,
            n_classes,
            input_shape,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn features(&self) -> usize {
        self.x.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            n_classes: self.n_classes,
            input_shape: self.input_shape.clone(),
        }
    }

    /// Splits off a random `fraction` of rows: returns `(rest, held_out)`.
    pub fn hold_out(&self, fraction: f64, rng: &mut Rng) -> (Dataset, Dataset) {
        let n = self.len();
        let k = (fraction * n as f64).round() as usize;
        let perm = rng.permutation(n);
        let (held, rest) = perm.split_at(k);
        let mut held = held.to_vec();
        let mut rest = rest.to_vec();
        held.sort_unstable();
        rest.sort_unstable();
        (self.subset(&rest), self.subset(&held))
    }
}

/// Training pool and clean test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub pool: Dataset,
    pub test: Dataset,
}

pub fn load_dataset(config: &DatasetConfig, rng: &mut Rng) -> Result<Splits> {
    match config {
        DatasetConfig::Blobs(spec) => Ok(Splits {
            pool: make_blobs(spec, spec.n_per_class, &mut rng.fork_named("pool"))?,
            test: make_blobs(spec, spec.test_per_class, &mut rng.fork_named("test"))?,
        }),
        DatasetConfig::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            test_fraction,
        } => {
            let train = load_idx(train_images, train_labels)?;
            match (test_images, test_labels) {
                (Some(ti), Some(tl)) => {
                    let mut test = load_idx(ti, tl)?;
                    if test.input_shape != train.input_shape {
                        return Err(HarnessError::Format {
                            path: ti.clone(),
                            message: format!(
                                "image shape {:?} differs from training shape {:?}",
                                test.input_shape, train.input_shape
                            ),
                        });
                    }
                    let n_classes = train.n_classes.max(test.n_classes);
                    test.n_classes = n_classes;
                    let mut pool = train;
                    pool.n_classes = n_classes;
                    Ok(Splits { pool, test })
                }
                (None, None) => {
                    let (pool, test) = train.hold_out(*test_fraction, rng);
                    Ok(Splits { pool, test })
                }
                _ => Err(HarnessError::config(
                    "dataset.test_images",
                    "test_images and test_labels must be given together",
                )),
            }
        }
        DatasetConfig::Csv {
            path,
            label_column,
            test_path,
            test_fraction,
        } => {
            let train = load_csv(path, label_column)?;
            match test_path {
                Some(tp) => {
                    let mut test = load_csv(tp, label_column)?;
                    if test.features() != train.features() {
                        return Err(HarnessError::Format {
                            path: tp.clone(),
                            message: format!(
                                "{} feature columns, training file has {}",
                                test.features(),
                                train.features()
                            ),
                        });
                    }
                    let n_classes = train.n_classes.max(test.n_classes);
                    test.n_classes = n_classes;
                    let mut pool = train;
                    pool.n_classes = n_classes;
                    Ok(Splits { pool, test })
                }
                None => {
                    let (pool, test) = train.hold_out(*test_fraction, rng);
                    Ok(Splits { pool, test })
                }
            }
        }
    }
}

/// `per_class` points around each center with independent `N(0, spread²)`
/// offsets per axis. Rows are grouped by class.
pub fn make_blobs(spec: &BlobSpec, per_class: usize, rng: &mut Rng) -> Result<Dataset> {
    spec.validate()?;
    let centers = spec.resolved_centers();
    let dim = centers[0].len();
    let n = per_class * centers.len();
    let mut data = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for (class, c) in centers.iter().enumerate() {
        for _ in 0..per_class {
            data.extend(c.iter().map(|&m| m + spec.spread * rng.normal()));
            labels.push(class);
        }
    }
    let x = Matrix::from_vec(n, dim, data)?;
    Dataset::new(x, labels, centers.len(), vec![dim])
}

fn format_err(path: &Path, message: impl Into<String>) -> HarnessError {
    HarnessError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Reads an IDX image file (unsigned bytes, three dimensions) and its label
/// file. Pixels are scaled to `[0, 1]`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let img = fs::read(images).map_err(|e| HarnessError::io(images, e))?;
    let lab = fs::read(labels).map_err(|e| HarnessError::io(labels, e))?;

    if img.len() < 16 {
        return Err(format_err(images, "file shorter than the 16-byte header"));
    }
    let magic = be_u32(&img, 0);
    if magic != IDX_IMAGES {
        return Err(format_err(
            images,
            format!("magic {magic:#010x}, expected {IDX_IMAGES:#010x}"),
        ));
    }
    let n = be_u32(&img, 4) as usize;
    let rows = be_u32(&img, 8) as usize;
    let cols = be_u32(&img, 12) as usize;
    let pixels = rows * cols;
    let expected = 16 + n * pixels;
    if img.len() != expected {
        return Err(format_err(
            images,
            format!("{} bytes, header implies {expected}", img.len()),
        ));
    }

    if lab.len() < 8 {
        return Err(format_err(labels, "file shorter than the 8-byte header"));
    }
    let magic = be_u32(&lab, 0);
    if magic != IDX_LABELS {
        return Err(format_err(
            labels,
            format!("magic {magic:#010x}, expected {IDX_LABELS:#010x}"),
        ));
    }
    let n_labels = be_u32(&lab, 4) as usize;
    if n_labels != n {
        return Err(format_err(
            labels,
            format!("{n_labels} labels for {n} images"),
        ));
    }
    if lab.len() != 8 + n {
        return Err(format_err(
            labels,
            format!("{} bytes, header implies {}", lab.len(), 8 + n),
        ));
    }
    if n == 0 || pixels == 0 {
        return Err(format_err(images, "no images"));
    }

    let data = img[16..].iter().map(|&b| b as f64 / 255.0).collect();
    let labels_v: Vec<usize> = lab[8..].iter().map(|&b| b as usize).collect();
    let n_classes = labels_v.iter().max().map_or(0, |m| m + 1);
    let x = Matrix::from_vec(n, pixels, data)?;
    Dataset::new(x, labels_v, n_classes, vec![rows, cols])
}

/// Writes IDX image and label files; pixel values are clamped to `[0, 255]`.
pub fn write_idx(
    images: &Path,
    labels: &Path,
    rows: usize,
    cols: usize,
    pixels: &[u8],
    label_bytes: &[u8],
) -> Result<()> {
    let n = label_bytes.len();
    assert_eq!(pixels.len(), n * rows * cols, "pixel count mismatch");
    let mut img = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES, n as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + n);
    for v in [IDX_LABELS, n as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(label_bytes);
    fs::write(images, img).map_err(|e| HarnessError::io(images, e))?;
    fs::write(labels, lab).map_err(|e| HarnessError::io(labels, e))?;
    Ok(())
}

/// Reads a CSV with a header row. `label_column` holds non-negative integer
/// classes; every other column is a numeric feature.
pub fn load_csv(path: &Path, label_column: &str) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let headers = reader.headers().map_err(|e| csv_err(path, e))?.clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| format_err(path, format!("no `{label_column}` column")))?;
    let cols = headers.len() - 1;
    if cols == 0 {
        return Err(format_err(path, "no feature columns"));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        for (j, field) in record.iter().enumerate() {
            let field = field.trim();
            if j == label_idx {
                let y: usize = field.parse().map_err(|_| {
                    format_err(
                        path,
                        format!("row {}: label `{field}` is not a class index", line + 1),
                    )
                })?;
                labels.push(y);
            } else {
                let v: f64 = field.parse().map_err(|_| {
                    format_err(path, format!("row {}: `{field}` is not a number", line + 1))
                })?;
                if !v.is_finite() {
                    return Err(format_err(
                        path,
                        format!("row {}: non-finite value", line + 1),
                    ));
                }
                data.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(format_err(path, "no data rows"));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let x = Matrix::from_vec(labels.len(), cols, data)?;
    Dataset::new(x, labels, n_classes, vec![cols])
}

fn csv_err(path: &Path, e: csv::Error) -> HarnessError {
    match e.kind() {
        csv::ErrorKind::Io(_) => {
            let kind = match e.into_kind() {
                csv::ErrorKind::Io(io) => io,
                _ => unreachable!(),
            };
            HarnessError::io(PathBuf::from(path), kind)
        }
        _ => format_err(path, e.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blobs_are_grouped_and_centered() {
        let spec = BlobSpec {
            spread: 0.5,
            ..BlobSpec::default()
        };
        let d = make_blobs(&spec, 400, &mut Rng::new(3)).unwrap();
        assert_eq!(d.len(), 1200);
        assert_eq!(d.n_classes, 3);
        let centers = spec.resolved_centers();
        for (k, c) in centers.iter().enumerate() {
            let rows: Vec<usize> = (0..d.len()).filter(|&i| d.labels[i] == k).collect();
            assert_eq!(rows.len(), 400);
            for (axis, &center) in c.iter().enumerate() {
                let m = rows.iter().map(|&i| d.x.get(i, axis)).sum::<f64>() / 400.0;
                // standard error 0.5 / 20 = 0.025
                assert!((m - center).abs() < 0.1, "class {k} axis {axis}: {m}");
            }
        }
    }

    #[test]
    fn hold_out_partitions_rows() {
        let d = make_blobs(&BlobSpec::default(), 10, &mut Rng::new(0)).unwrap();
        let (rest, held) = d.hold_out(0.2, &mut Rng::new(1));
        assert_eq!(held.len(), 6);
        assert_eq!(rest.len(), 24);
    }
}
