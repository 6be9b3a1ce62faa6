//! Dataset manifests: CSV with header `path,mos[,ref_path]`. Relative
//! paths resolve against the manifest's directory.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use crate::buffer::ImageBuffer;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub path: PathBuf,
    pub mos: f64,
    pub ref_path: Option<PathBuf>,
}

/// One training or evaluation item held in memory.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub image: ImageBuffer,
    pub mos: f64,
    pub reference: Option<ImageBuffer>,
    /// Items sharing a reference share a content id.
    pub content_id: usize,
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Manifest(format!("cannot read {}: {e}", path.display())))?;
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let with_ref = match headers.iter().map(String::as_str).collect::<Vec<_>>().as_slice() {
        ["path", "mos"] => false,
        ["path", "mos", "ref_path"] => true,
        _ => {
            return Err(Error::Manifest(format!(
                "header must be `path,mos` or `path,mos,ref_path`, got `{}`",
                headers.join(",")
            )))
        }
    };
    let resolve = |p: &str| {
        let p = PathBuf::from(p);
        if p.is_absolute() {
            p
        } else {
            base.join(p)
        }
    };
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let mos: f64 = rec[1]
            .parse()
            .map_err(|_| Error::Manifest(format!("line {line}: mos `{}` is not a number", &rec[1])))?;
        if !mos.is_finite() {
            return Err(Error::Manifest(format!("line {line}: mos must be finite")));
        }
        let ref_path = if with_ref && !rec.get(2).unwrap_or("").is_empty() {
            Some(resolve(&rec[2]))
        } else {
            None
        };
        rows.push(ManifestRow {
            path: resolve(&rec[0]),
            mos,
            ref_path,
        });
    }
    Ok(rows)
}

pub fn write_manifest(path: &Path, rows: &[(String, f64, Option<String>)]) -> Result<()> {
    let with_ref = rows.iter().any(|r| r.2.is_some());
    let mut w = csv::Writer::from_writer(Vec::new());
    if with_ref {
        w.write_record(["path", "mos", "ref_path"])?;
    } else {
        w.write_record(["path", "mos"])?;
    }
    for (p, mos, r) in rows {
        let mos = mos.to_string();
        if with_ref {
            w.write_record([p.as_str(), mos.as_str(), r.as_deref().unwrap_or("")])?;
        } else {
            w.write_record([p.as_str(), mos.as_str()])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Manifest(e.to_string()))?;
    crate::trainer::checkpoint::write_atomic(path, &bytes)
}

/// Loads every image of a manifest. References are decoded once each.
pub fn load_samples(rows: &[ManifestRow]) -> Result<Vec<Sample>> {
    let mut refs: HashMap<PathBuf, (usize, ImageBuffer)> = HashMap::new();
    let mut out = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let image = ImageBuffer::load(&row.path)
            .map_err(|e| Error::Manifest(format!("{}: {e}", row.path.display())))?;
        let (reference, content_id) = match &row.ref_path {
            Some(rp) => {
                let next = refs.len();
                if !refs.contains_key(rp) {
                    let img = ImageBuffer::load(rp).map_err(|e| Error::Manifest(format!("{}: {e}", rp.display())))?;
                    refs.insert(rp.clone(), (next, img));
                }
                let (id, img) = &refs[rp];
                image.check_same_shape(img)?;
                (Some(img.clone()), *id)
            }
            None => (None, rows.len() + i),
        };
        out.push(Sample {
            id: row.path.display().to_string(),
            image,
            mos: row.mos,
            reference,
            content_id,
        });
    }
    Ok(out)
}

/// In-memory samples from the synthetic toy dataset.
pub fn samples_from_toy(rows: &[crate::toy::ToyRow]) -> Vec<Sample> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| Sample {
            id: format!("toy_{i:04}"),
            image: r.image.clone(),
            mos: r.mos,
            reference: Some(r.reference.clone()),
            content_id: r.content_id,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_round_trip_and_header_check() {
        let dir = tempfile::tempdir().unwrap();
        let m = dir.path().join("m.csv");
        write_manifest(&m, &[("a.png".into(), 4.5, Some("r.png".into())), ("b.png".into(), 2.0, None)]).unwrap();
        let rows = read_manifest(&m).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].path, dir.path().join("a.png"));
        assert_eq!(rows[0].ref_path, Some(dir.path().join("r.png")));
        assert_eq!(rows[1].ref_path, None);
        std::fs::write(&m, "file,score\nx.png,1\n").unwrap();
        assert!(read_manifest(&m).is_err());
        std::fs::write(&m, "path,mos\nx.png,high\n").unwrap();
        assert!(read_manifest(&m).unwrap_err().to_string().contains("line 2"));
    }
}
