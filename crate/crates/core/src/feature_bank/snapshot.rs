//! Little-endian binary dump of a bank.
//!
//! ```text
//! "AFBK" | version u32 | key_dim u32 | value_dim u32 | entry_count u32
//! entry_count × ( id u64 | birth u64 | cnt f64 | key f32[key_dim] | value f32[value_dim] )
//! ```

use std::io::{Read, Write};

use super::{BankConfig, FeatureBank, FeatureEntry};
use crate::error::{Error, Result};
use crate::numerics::Vec32;

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"AFBK";
pub const SNAPSHOT_VERSION: u32 = 1;

pub fn write_snapshot<W: Write>(bank: &FeatureBank, mut w: W) -> Result<()> {
    let cfg = bank.config();
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&(cfg.key_dim as u32).to_le_bytes())?;
    w.write_all(&(cfg.value_dim as u32).to_le_bytes())?;
    w.write_all(&(bank.len() as u32).to_le_bytes())?;
    for e in bank.entries() {
        w.write_all(&e.id.to_le_bytes())?;
        w.write_all(&e.birth.to_le_bytes())?;
        w.write_all(&e.cnt.to_le_bytes())?;
        for &x in e.key.iter().chain(e.value.iter()) {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

struct Cursor<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Cursor<R> {
    fn take<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Snapshot(format!("reading {what} at offset {}: {e}", self.offset)))?;
        self.offset += N as u64;
        Ok(buf)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.take::<4>(what).map(u32::from_le_bytes)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        self.take::<8>(what).map(u64::from_le_bytes)
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        self.take::<8>(what).map(f64::from_le_bytes)
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        (0..n).map(|_| self.take::<4>(what).map(f32::from_le_bytes)).collect()
    }
}

/// Loads a snapshot. Dimensions must agree with `config`; the bank's
/// current frame becomes the newest birth frame and stats start at zero.
pub fn read_snapshot<R: Read>(r: R, config: BankConfig) -> Result<FeatureBank> {
    let mut c = Cursor { inner: r, offset: 0 };
    if &c.take::<4>("magic")? != SNAPSHOT_MAGIC {
        return Err(Error::Snapshot("bad magic".into()));
    }
    let version = c.u32("version")?;
    if version != SNAPSHOT_VERSION {
        return Err(Error::Snapshot(format!("unsupported version {version}")));
    }
    let key_dim = c.u32("key_dim")? as usize;
    let value_dim = c.u32("value_dim")? as usize;
    if key_dim != config.key_dim || value_dim != config.value_dim {
        return Err(Error::Snapshot(format!(
            "dims {key_dim}/{value_dim} do not match config {}/{}",
            config.key_dim, config.value_dim
        )));
    }
    let count = c.u32("entry_count")? as usize;
    if count > config.budget {
        return Err(Error::Snapshot(format!(
            "{count} entries exceed budget {}",
            config.budget
        )));
    }
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let id = c.u64("id")?;
        let birth = c.u64("birth")?;
        let cnt = c.f64("cnt")?;
        if !(cnt >= 0.0) {
            return Err(Error::Snapshot(format!("entry {id} has invalid cnt {cnt}")));
        }
        let key = Vec32::new(c.f32s(key_dim, "key")?).map_err(|e| Error::Snapshot(format!("entry {id} key: {e}")))?;
        let value =
            Vec32::new(c.f32s(value_dim, "value")?).map_err(|e| Error::Snapshot(format!("entry {id} value: {e}")))?;
        entries.push(FeatureEntry {
            id,
            key,
            value,
            cnt,
            birth,
        });
    }
    FeatureBank::from_entries(config, entries)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bank() -> FeatureBank {
        let cfg = BankConfig::new(3, 2).with_budget(8);
        let feats = (0..4)
            .map(|i| {
                let a = i as f32;
                (
                    Vec32::new(vec![a.cos(), a.sin(), 0.5]).unwrap(),
                    Vec32::new(vec![a, -a]).unwrap(),
                )
            })
            .collect();
        let mut b = FeatureBank::init(cfg, feats, 2).unwrap();
        b.record_usage(&[3, 0, 7, 1]).unwrap();
        b
    }

    #[test]
    fn layout_is_bit_exact() {
        let b = bank();
        let mut buf = Vec::new();
        write_snapshot(&b, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"AFBK");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(buf[16..20].try_into().unwrap()), 4);
        assert_eq!(buf.len(), 20 + 4 * (8 + 8 + 8 + 4 * 5));
        // second entry: id 1, birth 2
        let off = 20 + 44;
        assert_eq!(u64::from_le_bytes(buf[off..off + 8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(buf[off + 8..off + 16].try_into().unwrap()), 2);
    }

    #[test]
    fn round_trip() {
        let b = bank();
        let mut buf = Vec::new();
        write_snapshot(&b, &mut buf).unwrap();
        let loaded = read_snapshot(&buf[..], b.config().clone()).unwrap();
        assert_eq!(loaded.entries(), b.entries());
        assert_eq!(loaded.current_frame(), 2);
    }

    #[test]
    fn rejects_truncation_and_dim_mismatch() {
        let b = bank();
        let mut buf = Vec::new();
        write_snapshot(&b, &mut buf).unwrap();
        let err = read_snapshot(&buf[..buf.len() - 3], b.config().clone()).unwrap_err();
        assert!(err.to_string().contains("offset"), "{err}");
        assert!(read_snapshot(&buf[..], BankConfig::new(4, 2)).is_err());
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_snapshot(&bad[..], b.config().clone()).is_err());
    }
}
