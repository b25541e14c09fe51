//! IDX image/label pairs: big-endian header, u8 pixels scaled to `[0, 1]`.

use std::fs;
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::{DataError, Dataset};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC_U8: u32 = 0x0000_0801;
/// Labels as big-endian i32, for datasets with more than 256 classes.
pub const LABELS_MAGIC_I32: u32 = 0x0000_0C01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub path_images: PathBuf,
    pub path_labels: PathBuf,
    pub image_side: usize,
    pub n_classes: usize,
}

struct Cursor<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], DataError> {
        if self.bytes.len() - self.at < n {
            return Err(DataError::Truncated {
                path: self.path.to_path_buf(),
                offset: self.at,
                needed: n - (self.bytes.len() - self.at),
            });
        }
        let s = &self.bytes[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, DataError> {
        Ok(BigEndian::read_u32(self.take(4)?))
    }
}

fn read(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads an image file and its row-aligned label file.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset, DataError> {
    let bytes = read(images)?;
    let mut c = Cursor {
        path: images,
        bytes: &bytes,
        at: 0,
    };
    let magic = c.u32()?;
    if magic != IMAGES_MAGIC {
        return Err(DataError::Magic {
            path: images.to_path_buf(),
            found: magic,
        });
    }
    let count = c.u32()? as usize;
    let rows = c.u32()? as usize;
    let cols = c.u32()? as usize;
    let dim = rows * cols;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        samples.push(c.take(dim)?.iter().map(|&p| f64::from(p) / 255.0).collect());
    }

    let bytes = read(labels)?;
    let mut c = Cursor {
        path: labels,
        bytes: &bytes,
        at: 0,
    };
    let magic = c.u32()?;
    let n_labels = c.u32()? as usize;
    if n_labels != count {
        return Err(DataError::LabelCount {
            images: count,
            labels: n_labels,
        });
    }
    let label_values: Vec<u32> = match magic {
        LABELS_MAGIC_U8 => c.take(count)?.iter().map(|&b| u32::from(b)).collect(),
        LABELS_MAGIC_I32 => c.take(4 * count)?.chunks(4).map(BigEndian::read_u32).collect(),
        found => {
            return Err(DataError::Magic {
                path: labels.to_path_buf(),
                found,
            })
        }
    };
    Dataset::new(samples, label_values, vec![rows, cols])
}

/// Writes a dataset with values in `[0, 1]` as an IDX pair; labels use the
/// u8 layout when every label fits.
pub fn write_idx(dataset: &Dataset, images: &Path, labels: &Path) -> Result<(), DataError> {
    let (rows, cols) = match dataset.shape.as_slice() {
        [r, c] => (*r, *c),
        [d] => (1, *d),
        _ => return Err(DataError::Argument("IDX images must be 2-D".into())),
    };
    let mut buf = Vec::with_capacity(16 + dataset.len() * dataset.dim);
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DataError::Io { path, source }
    };
    buf.write_u32::<BigEndian>(IMAGES_MAGIC).map_err(io(images))?;
    for v in [dataset.len(), rows, cols] {
        buf.write_u32::<BigEndian>(v as u32).map_err(io(images))?;
    }
    for s in &dataset.samples {
        buf.extend(s.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    }
    fs::write(images, &buf).map_err(io(images))?;

    let wide = dataset.labels.iter().any(|&l| l > 255);
    let mut buf = Vec::new();
    let magic = if wide { LABELS_MAGIC_I32 } else { LABELS_MAGIC_U8 };
    buf.write_u32::<BigEndian>(magic).map_err(io(labels))?;
    buf.write_u32::<BigEndian>(dataset.len() as u32).map_err(io(labels))?;
    for &l in &dataset.labels {
        if wide {
            buf.write_u32::<BigEndian>(l).map_err(io(labels))?;
        } else {
            buf.push(l as u8);
        }
    }
    fs::write(labels, &buf).map_err(io(labels))
}

/// Loads the IDX pair named by a JSON manifest; relative paths resolve
/// against the manifest's directory.
pub fn load_manifest(path: &Path) -> Result<Dataset, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let m: DatasetManifest =
        serde_json::from_str(&text).map_err(|e| DataError::Manifest(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let d = load_idx(&base.join(&m.path_images), &base.join(&m.path_labels))?;
    if d.shape != [m.image_side, m.image_side] && !d.is_empty() {
        return Err(DataError::Manifest(format!(
            "images are {:?}, manifest says side {}",
            d.shape, m.image_side
        )));
    }
    if d.n_classes() != m.n_classes {
        return Err(DataError::Manifest(format!(
            "found {} classes, manifest says {}",
            d.n_classes(),
            m.n_classes
        )));
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(magic: u32, dims: &[u32]) -> Vec<u8> {
        let mut v = Vec::new();
        v.write_u32::<BigEndian>(magic).unwrap();
        for &d in dims {
            v.write_u32::<BigEndian>(d).unwrap();
        }
        v
    }

    #[test]
    fn empty_file_loads_empty_dataset() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&i, header(IMAGES_MAGIC, &[0, 28, 28])).unwrap();
        fs::write(&l, header(LABELS_MAGIC_U8, &[0])).unwrap();
        let d = load_idx(&i, &l).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.shape, vec![28, 28]);
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = (dir.path().join("i"), dir.path().join("l"));
        let mut img = header(IMAGES_MAGIC, &[3, 2, 2]);
        img.extend([0u8, 255, 17, 128, 1, 2, 3, 4, 250, 251, 252, 253]);
        let mut lab = header(LABELS_MAGIC_U8, &[3]);
        lab.extend([4u8, 0, 4]);
        fs::write(&i, &img).unwrap();
        fs::write(&l, &lab).unwrap();
        let d = load_idx(&i, &l).unwrap();
        assert_eq!(d.samples[0][1], 1.0);
        assert_eq!(d.labels, vec![4, 0, 4]);
        let (i2, l2) = (dir.path().join("i2"), dir.path().join("l2"));
        write_idx(&d, &i2, &l2).unwrap();
        assert_eq!(fs::read(&i2).unwrap(), img);
        assert_eq!(fs::read(&l2).unwrap(), lab);
    }

    #[test]
    fn wide_labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dataset::new(vec![vec![0.0; 4], vec![1.0; 4]], vec![1000, 3], vec![2, 2]).unwrap();
        let (i, l) = (dir.path().join("i"), dir.path().join("l"));
        write_idx(&d, &i, &l).unwrap();
        assert_eq!(load_idx(&i, &l).unwrap(), d);
    }

    #[test]
    fn malformed_files_report_offsets() {
        let dir = tempfile::tempdir().unwrap();
        let (i, l) = (dir.path().join("i"), dir.path().join("l"));
        fs::write(&i, header(0x0000_0804, &[0, 1, 1])).unwrap();
        fs::write(&l, header(LABELS_MAGIC_U8, &[0])).unwrap();
        assert!(matches!(load_idx(&i, &l), Err(DataError::Magic { found: 0x804, .. })));

        let mut img = header(IMAGES_MAGIC, &[2, 2, 2]);
        img.extend([1u8, 2, 3, 4, 5]);
        fs::write(&i, &img).unwrap();
        match load_idx(&i, &l) {
            Err(DataError::Truncated { offset, needed, .. }) => {
                assert_eq!(offset, 20);
                assert_eq!(needed, 3);
            }
            other => panic!("{other:?}"),
        }

        img.extend([6u8, 7, 8]);
        fs::write(&i, &img).unwrap();
        assert!(matches!(load_idx(&i, &l), Err(DataError::LabelCount { images: 2, labels: 0 })));
        assert!(matches!(
            load_idx(&dir.path().join("missing"), &l),
            Err(DataError::Io { .. })
        ));
    }

    #[test]
    fn manifest_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let d = Dataset::new(vec![vec![0.0; 4], vec![1.0; 4]], vec![0, 1], vec![2, 2]).unwrap();
        write_idx(&d, &dir.path().join("i.idx"), &dir.path().join("l.idx")).unwrap();
        let m = dir.path().join("m.json");
        fs::write(
            &m,
            r#"{"path_images": "i.idx", "path_labels": "l.idx", "image_side": 2, "n_classes": 2}"#,
        )
        .unwrap();
        assert_eq!(load_manifest(&m).unwrap(), d);
        fs::write(
            &m,
            r#"{"path_images": "i.idx", "path_labels": "l.idx", "image_side": 2, "n_classes": 2, "extra": 1}"#,
        )
        .unwrap();
        assert!(matches!(load_manifest(&m), Err(DataError::Manifest(_))));
    }
}
