//! JSON and stream files on disk.
//!
//! Reads map every deserialization failure to [`Error::Schema`] with the
//! path of the offending field. Writes go through a temporary file in the
//! destination directory and are renamed into place, so a failed command
//! never leaves a truncated file behind.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sim::PhotonStream;

/// Parses `text` as `T`, naming the failing field.
pub fn parse_json<T: DeserializeOwned>(text: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let value = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Schema {
            path: if path == "." { "$".into() } else { format!("$.{path}") },
            message: e.into_inner().to_string(),
        }
    })?;
    Ok(value)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    parse_json(&fs::read_to_string(path)?)
}

pub fn to_json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

/// Writes `bytes` to `path` atomically, creating parent directories.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Io(std::io::Error::other(format!("not a file path: {}", path.display()))))?;
    let tmp = dir.join(format!(".{}.partial", name.to_string_lossy()));
    let result = (|| {
        let mut w = BufWriter::new(fs::File::create(&tmp)?);
        w.write_all(bytes)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, to_json_pretty(value).as_bytes())
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

/// Sidecar written next to a stream file: `<file>.meta.json`.
pub fn meta_path(stream_path: &Path) -> PathBuf {
    let mut s = stream_path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

/// Writes the binary stream and its metadata sidecar.
pub fn write_stream(path: &Path, stream: &PhotonStream) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + 8 * stream.len());
    stream.write_binary(&mut buf)?;
    write_atomic(path, &buf)?;
    write_json(&meta_path(path), &stream.meta())
}

pub fn read_stream(path: &Path) -> Result<PhotonStream> {
    PhotonStream::read_binary(BufReader::new(fs::File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::Measured;

    #[test]
    fn schema_errors_name_the_field() {
        let e = parse_json::<Measured>(r#"{"value": 1.0, "sigma": "x"}"#).unwrap_err();
        match e {
            Error::Schema { path, .. } => assert_eq!(path, "$.sigma"),
            other => panic!("{other:?}"),
        }
        assert_eq!(parse_json::<Measured>("{").unwrap_err().exit_code(), 2);
        assert!(matches!(parse_json::<Measured>(r#"{"value": 1, "sigma": 0, "x": 2}"#), Err(Error::Schema { .. })));
    }

    #[test]
    fn atomic_write_and_stream_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/m.json");
        write_json(&p, &Measured::new(1.0, 0.5)).unwrap();
        assert_eq!(read_json::<Measured>(&p).unwrap(), Measured::new(1.0, 0.5));
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);

        let s = PhotonStream::from_ticks(vec![1, 5, 9], 20, 1).unwrap();
        let sp = dir.path().join("s.bin");
        write_stream(&sp, &s).unwrap();
        assert_eq!(read_stream(&sp).unwrap(), s);
        assert!(meta_path(&sp).exists());
    }
}
