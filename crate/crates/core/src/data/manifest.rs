//! Dataset manifest: one `image,label[,mask]` line per sample. Relative
//! paths resolve against the manifest's directory. Blank lines and lines
//! starting with `#` are ignored.

use std::fs;
use std::path::{Path, PathBuf};

use super::fundus::{load_sample, FundusSample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub image: PathBuf,
    pub label: PathBuf,
    pub mask: Option<PathBuf>,
}

impl ManifestEntry {
    /// Short name for reports: the image file stem.
    pub fn name(&self) -> String {
        self.image
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| self.image.display().to_string())
    }
}

pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestEntry>> {
    let resolve = |p: &str| {
        let p = Path::new(p.trim());
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    };
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if !(2..=3).contains(&fields.len()) || fields.iter().any(|f| f.trim().is_empty()) {
            return Err(Error::Config(format!(
                "manifest line {}: expected `image,label[,mask]`, got `{line}`",
                lineno + 1
            )));
        }
        entries.push(ManifestEntry {
            image: resolve(fields[0]),
            label: resolve(fields[1]),
            mask: fields.get(2).map(|m| resolve(m)),
        });
    }
    Ok(entries)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_manifest(&text, base)
}

/// Write entries with paths relative to `base` where possible.
pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
    let mut text = String::new();
    for e in entries {
        text.push_str(&rel(&e.image));
        text.push(',');
        text.push_str(&rel(&e.label));
        if let Some(m) = &e.mask {
            text.push(',');
            text.push_str(&rel(m));
        }
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Read a manifest and load every sample it lists.
pub fn load_manifest(path: &Path) -> Result<Vec<(ManifestEntry, FundusSample)>> {
    read_manifest(path)?
        .into_iter()
        .map(|e| {
            let s = load_sample(&e.image, &e.label, e.mask.as_deref())?;
            Ok((e, s))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_relative_and_absolute() {
        let entries = parse_manifest(
            "# comment\n\nimg/a.png,lab/a.png\n/abs/b.png, lab/b.png ,mask/b.png\n",
            Path::new("/data/set"),
        )
        .unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].image, PathBuf::from("/data/set/img/a.png"));
        assert_eq!(entries[0].mask, None);
        assert_eq!(entries[1].image, PathBuf::from("/abs/b.png"));
        assert_eq!(entries[1].label, PathBuf::from("/data/set/lab/b.png"));
        assert_eq!(entries[1].mask, Some(PathBuf::from("/data/set/mask/b.png")));
        assert_eq!(entries[0].name(), "a");
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(parse_manifest("only_one_field.png\n", Path::new(".")).is_err());
        assert!(parse_manifest("a,b,c,d\n", Path::new(".")).is_err());
        assert!(parse_manifest("a,,c\n", Path::new(".")).is_err());
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.txt");
        let entries = vec![ManifestEntry {
            image: dir.path().join("images/x.png"),
            label: dir.path().join("labels/x.png"),
            mask: None,
        }];
        write_manifest(&path, &entries).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "images/x.png,labels/x.png\n");
        assert_eq!(read_manifest(&path).unwrap(), entries);
    }
}
