use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{BlobSpec, DatasetSpec};
use crate::distill::LabeledInstance;
use crate::error::{Error, Result};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<LabeledInstance>,
    pub val: Vec<LabeledInstance>,
    /// Held out for reward measurement only.
    pub probe: Vec<LabeledInstance>,
    pub classes: usize,
    pub input_dim: usize,
}

pub fn generate_blobs<R: Rng + ?Sized>(
    spec: &BlobSpec,
    rng: &mut R,
) -> Result<Vec<LabeledInstance>> {
    let centre = Normal::new(0.0, spec.center_spread).map_err(|e| Error::Config(e.to_string()))?;
    let noise = Normal::new(0.0, spec.noise).map_err(|e| Error::Config(e.to_string()))?;
    let centres: Vec<Vec<f64>> = (0..spec.classes)
        .map(|_| (0..spec.dim).map(|_| centre.sample(rng)).collect())
        .collect();
    Ok((0..spec.n)
        .map(|i| {
            let label = i % spec.classes;
            let features = centres[label]
                .iter()
                .map(|c| c + noise.sample(rng))
                .collect();
            LabeledInstance::new(features, label)
        })
        .collect())
}

fn parse_err(path: &Path, location: String, message: impl Into<String>) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        location,
        message: message.into(),
    }
}

pub fn read_csv(path: &Path) -> Result<Vec<LabeledInstance>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.len() < 2 || &headers[headers.len() - 1] != "label" {
        return Err(parse_err(
            path,
            "line 1".into(),
            "header must be feature columns followed by `label`",
        ));
    }
    let dim = headers.len() - 1;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        let at = || format!("line {line}");
        let features = (0..dim)
            .map(|j| {
                let v: f64 = record[j].trim().parse().map_err(|_| {
                    parse_err(
                        path,
                        at(),
                        format!("column {j}: {:?} is not a number", &record[j]),
                    )
                })?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(parse_err(path, at(), format!("column {j} is not finite")))
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let label: usize = record[dim].trim().parse().map_err(|_| {
            parse_err(
                path,
                at(),
                format!("label {:?} is not a class index", &record[dim]),
            )
        })?;
        out.push(LabeledInstance::new(features, label));
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let location = e
        .position()
        .map_or_else(|| "start".to_string(), |p| format!("line {}", p.line()));
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => parse_err(path, location, format!("{kind:?}")),
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| parse_err(path, format!("byte {offset}"), "unexpected end of file"))
}

fn read_idx(path: &Path, magic: u32) -> Result<(Vec<usize>, Vec<u8>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let found = read_u32(&bytes, 0, path)?;
    if found != magic {
        return Err(parse_err(
            path,
            "byte 0".into(),
            format!("magic number {found:#010x}, expected {magic:#010x}"),
        ));
    }
    let ndims = (magic & 0xff) as usize;
    let dims = (0..ndims)
        .map(|d| read_u32(&bytes, 4 + 4 * d, path).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let start = 4 + 4 * ndims;
    let expected: usize = dims.iter().product();
    let body = &bytes[start.min(bytes.len())..];
    if body.len() != expected {
        return Err(parse_err(
            path,
            format!("byte {start}"),
            format!(
                "payload has {} bytes, header implies {expected}",
                body.len()
            ),
        ));
    }
    Ok((dims, body.to_vec()))
}

/// Unsigned-byte image tensor `[count, rows, cols]` with a matching label
/// vector. Pixels are divided by 255.
pub fn read_idx_pair(images: &Path, labels: &Path) -> Result<Vec<LabeledInstance>> {
    let (idims, pixels) = read_idx(images, IDX_IMAGES_MAGIC)?;
    let (ldims, label_bytes) = read_idx(labels, IDX_LABELS_MAGIC)?;
    if idims[0] != ldims[0] {
        return Err(parse_err(
            labels,
            "byte 4".into(),
            format!("{} labels for {} images", ldims[0], idims[0]),
        ));
    }
    let per_image = idims[1] * idims[2];
    Ok(pixels
        .chunks(per_image.max(1))
        .zip(&label_bytes)
        .map(|(img, &l)| {
            LabeledInstance::new(
                img.iter().map(|&p| f64::from(p) / 255.0).collect(),
                l as usize,
            )
        })
        .collect())
}

/// Rescales every feature column to [0, 1]; constant columns become 0.
pub fn min_max_scale(data: &mut [LabeledInstance]) {
    let Some(dim) = data.first().map(|d| d.features.len()) else {
        return;
    };
    for j in 0..dim {
        let (lo, hi) = data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), d| {
                (lo.min(d.features[j]), hi.max(d.features[j]))
            });
        let span = hi - lo;
        for d in data.iter_mut() {
            d.features[j] = if span > 0.0 {
                ((d.features[j] - lo) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
        }
    }
}

/// Shuffles, then takes the probe set, the validation set and leaves the rest
/// for training.
pub fn split<R: Rng + ?Sized>(
    mut data: Vec<LabeledInstance>,
    probe_size: usize,
    val_fraction: f64,
    rng: &mut R,
) -> Result<Dataset> {
    let dim = data
        .first()
        .map(|d| d.features.len())
        .ok_or_else(|| Error::Config("dataset is empty".into()))?;
    if let Some(i) = data.iter().position(|d| d.features.len() != dim) {
        return Err(Error::Shape {
            context: "instance feature count",
            expected: dim,
            actual: data[i].features.len(),
        });
    }
    let classes = data.iter().map(|d| d.label).max().unwrap_or(0) + 1;
    if classes < 2 {
        return Err(Error::Config("dataset has fewer than two classes".into()));
    }
    data.shuffle(rng);
    let n = data.len();
    let n_val = (val_fraction * n as f64).floor() as usize;
    if probe_size + n_val >= n {
        return Err(Error::Config(format!(
            "{n} instances leave nothing for training after {probe_size} probe and {n_val} validation"
        )));
    }
    let train = data.split_off(probe_size + n_val);
    let val = data.split_off(probe_size);
    Ok(Dataset {
        train,
        val,
        probe: data,
        classes,
        input_dim: dim,
    })
}

/// Reads or synthesises the raw instances, scales them and splits.
pub fn load_dataset<R: Rng + ?Sized>(
    spec: &DatasetSpec,
    probe_size: usize,
    val_fraction: f64,
    rng: &mut R,
) -> Result<Dataset> {
    let mut data = match spec {
        DatasetSpec::Blobs(b) => generate_blobs(b, rng)?,
        DatasetSpec::Csv { path } => read_csv(path)?,
        DatasetSpec::Idx {
            images,
            labels,
            subsample,
        } => {
            let mut all = read_idx_pair(images, labels)?;
            if all.len() > *subsample {
                all.shuffle(rng);
                all.truncate(*subsample);
            }
            all
        }
    };
    min_max_scale(&mut data);
    split(data, probe_size, val_fraction, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::io::Write;

    #[test]
    fn blobs_are_seeded() {
        let spec = BlobSpec {
            classes: 3,
            ..BlobSpec::default()
        };
        let a = generate_blobs(&spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = generate_blobs(&spec, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3000);
    }

    #[test]
    fn split_is_disjoint_and_scaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ds = load_dataset(&DatasetSpec::default(), 256, 0.2, &mut rng).unwrap();
        assert_eq!(ds.probe.len(), 256);
        assert_eq!(ds.val.len(), 600);
        assert_eq!(ds.train.len(), 3000 - 856);
        assert_eq!((ds.classes, ds.input_dim), (5, 4));
        for d in ds.train.iter().chain(&ds.val).chain(&ds.probe) {
            assert!(d.features.iter().all(|x| (0.0..=1.0).contains(x)));
        }
        // Blob points are continuous, so equal features mean the same instance.
        for p in &ds.probe {
            assert!(ds.train.iter().all(|t| t.features != p.features));
        }
    }

    #[test]
    fn csv_reports_line() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "f0,f1,label\n0.5,1,0\n0.1,x,1").unwrap();
        let err = read_csv(f.path()).unwrap_err();
        assert_eq!(err.kind(), "parse");
        assert!(err.to_string().contains("line 3"), "{err}");
    }

    #[test]
    fn csv_needs_label_header() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "a,b\n1,2").unwrap();
        assert_eq!(read_csv(f.path()).unwrap_err().kind(), "parse");
    }

    #[test]
    fn idx_wrong_magic() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(&[0, 0, 8, 3, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0])
            .unwrap();
        let err = read_idx(f.path(), IDX_LABELS_MAGIC).unwrap_err();
        assert_eq!(err.kind(), "parse");
        assert!(err.to_string().contains("byte 0"));
    }

    #[test]
    fn idx_truncated_payload() {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(&[0, 0, 8, 1, 0, 0, 0, 3, 1, 2]).unwrap();
        let err = read_idx(f.path(), IDX_LABELS_MAGIC).unwrap_err();
        assert!(err.to_string().contains("byte 8"), "{err}");
    }
}
