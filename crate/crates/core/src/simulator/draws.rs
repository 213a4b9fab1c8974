//! Binary draw log: `FNMD`, a `u32` version, then one entry per draw:
//! `round`, `client`, `step` as `u32`, a `u64` length and that many `f64`,
//! all little-endian, in `(round, client, step)` order.

use std::fs;
use std::path::Path;

use crate::algorithms::DrawTable;
use crate::error::{Error, Result};
use crate::rng::Lane;
use crate::vector::ModelVector;

pub const DRAW_MAGIC: &[u8; 4] = b"FNMD";
pub const DRAW_VERSION: u32 = 1;

pub fn encode_draws(table: &DrawTable) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(DRAW_MAGIC);
    out.extend_from_slice(&DRAW_VERSION.to_le_bytes());
    for (lane, g) in table.iter() {
        for v in [lane.round, lane.client, lane.step] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&(g.len() as u64).to_le_bytes());
        for x in g {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

pub fn decode_draws(bytes: &[u8], path: &Path) -> Result<DrawTable> {
    let truncated = |detail: String| Error::Truncated {
        path: path.to_path_buf(),
        detail,
    };
    if bytes.len() < 8 {
        return Err(truncated("missing header".into()));
    }
    if &bytes[..4] != DRAW_MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: u32::from_be_bytes(*DRAW_MAGIC),
            found: u32::from_be_bytes(bytes[..4].try_into().unwrap()),
        });
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != DRAW_VERSION {
        return Err(Error::InvalidInput(format!("unsupported draw log version {version}")));
    }
    let mut table = DrawTable::new();
    let mut pos = 8;
    while pos < bytes.len() {
        if bytes.len() - pos < 20 {
            return Err(truncated(format!("entry header at byte {pos}")));
        }
        let word = |k: usize| u32::from_le_bytes(bytes[pos + 4 * k..pos + 4 * k + 4].try_into().unwrap());
        let lane = Lane {
            round: word(0),
            client: word(1),
            step: word(2),
        };
        let len = u64::from_le_bytes(bytes[pos + 12..pos + 20].try_into().unwrap()) as usize;
        pos += 20;
        let need = len.checked_mul(8).ok_or_else(|| truncated("length overflow".into()))?;
        if bytes.len() - pos < need {
            return Err(truncated(format!("draw of {len} values at byte {pos}")));
        }
        let g = ModelVector::from_iter(
            bytes[pos..pos + need]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap())),
        );
        pos += need;
        table.insert(lane, g);
    }
    Ok(table)
}

pub fn write_draws(path: impl AsRef<Path>, table: &DrawTable) -> Result<()> {
    fs::write(path, encode_draws(table))?;
    Ok(())
}

pub fn read_draws(path: impl AsRef<Path>) -> Result<DrawTable> {
    let path = path.as_ref();
    decode_draws(&fs::read(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample() -> DrawTable {
        let mut t = DrawTable::new();
        t.insert(Lane::new(1, 0, 2), array![1.5, -2.0]);
        t.insert(Lane::new(0, 3, 0), array![f64::MIN_POSITIVE, 0.0]);
        t.insert(Lane::new(0, 0, 0), array![]);
        t
    }

    #[test]
    fn round_trip() {
        let t = sample();
        let bytes = encode_draws(&t);
        assert_eq!(&bytes[..4], b"FNMD");
        assert_eq!(decode_draws(&bytes, Path::new("mem")).unwrap(), t);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.bin");
        write_draws(&p, &t).unwrap();
        assert_eq!(read_draws(&p).unwrap(), t);
    }

    #[test]
    fn layout_is_little_endian() {
        let mut t = DrawTable::new();
        t.insert(Lane::new(2, 1, 3), array![1.0]);
        let b = encode_draws(&t);
        assert_eq!(&b[4..8], &[1, 0, 0, 0]);
        assert_eq!(&b[8..20], &[1, 0, 0, 0, 2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(&b[20..28], &[1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&b[28..36], &1.0f64.to_le_bytes());
    }

    #[test]
    fn rejects_bad_input() {
        let p = Path::new("mem");
        assert!(matches!(
            decode_draws(b"XXXX\x01\0\0\0", p),
            Err(Error::BadMagic { .. })
        ));
        assert!(matches!(decode_draws(b"FNM", p), Err(Error::Truncated { .. })));
        let mut b = encode_draws(&sample());
        b.pop();
        assert!(matches!(decode_draws(&b, p), Err(Error::Truncated { .. })));
        let mut v2 = encode_draws(&sample());
        v2[4] = 2;
        assert!(decode_draws(&v2, p).is_err());
    }
}
