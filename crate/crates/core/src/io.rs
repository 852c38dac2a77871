//! File-output helpers shared by every exporter: 17-significant-digit float
//! formatting and atomic writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serializer;
use serde_json::value::RawValue;

use crate::error::{Error, Result};

/// Format a float with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

fn raw17(x: f64) -> Box<RawValue> {
    // Only finite values reach serialization; the JSON grammar has no NaN.
    RawValue::from_string(fmt17(x)).expect("finite float formats as a JSON number")
}

/// `serialize_with` adaptor for `Vec<f64>`.
pub fn ser_f64_slice<S: Serializer>(values: &[f64], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(values.iter().map(|&v| raw17(v)))
}

/// `serialize_with` adaptor for point lists, written as `[[x, y], ...]`.
pub fn ser_points<S: Serializer>(points: &[crate::Vec2], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(points.iter().map(|p| [raw17(p.x), raw17(p.y)]))
}

/// `serialize_with` adaptor for a single float.
pub fn ser_f64<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_some(&raw17(*value))
}

/// Write `contents` to `path` via a sibling temp file and rename, so readers
/// never observe a partially written file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp_name = path
        .file_name()
        .ok_or_else(|| Error::Input(format!("not a file path: {}", path.display())))?
        .to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(contents).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json_atomic<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_digits_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 123456.789, 0.0] {
            let s = fmt17(x);
            let mantissa = s.split('e').next().unwrap().replace(['-', '.'], "");
            assert_eq!(mantissa.len(), 17, "{s}");
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn raw_floats_are_valid_json() {
        #[derive(serde::Serialize)]
        struct T {
            #[serde(serialize_with = "ser_f64_slice")]
            v: Vec<f64>,
        }
        let text = serde_json::to_string(&T { v: vec![0.1, -3.0] }).unwrap();
        assert_eq!(text, r#"{"v":[1.0000000000000001e-1,-3.0000000000000000e0]}"#);
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["v"][0].as_f64(), Some(0.1));
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = std::env::temp_dir().join(format!("zapfield-io-{}", std::process::id()));
        let path = dir.join("a/b.txt");
        write_atomic(&path, b"one").unwrap();
        write_atomic(&path, b"two").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "two");
        let leftovers = fs::read_dir(path.parent().unwrap()).unwrap().count();
        assert_eq!(leftovers, 1);
        fs::remove_dir_all(dir).unwrap();
    }
}
