//! Weight checkpoints.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! ```text
//! "RPUW"            4 bytes magic
//! version           u16
//! layer count       u32
//! per layer:
//!   rows            u32
//!   cols            u32
//!   v_cap           rows * cols f64, row-major
//! ```

use crate::cell::WeightMapping;
use std::io::{self, Read, Write};
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"RPUW";
pub const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a weight checkpoint (magic {0:02x?})")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u16),
    #[error("layer {layer}: {rows}x{cols} does not fit in memory")]
    Oversized { layer: usize, rows: u32, cols: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Capacitor voltages of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerVoltages {
    pub rows: usize,
    pub cols: usize,
    pub v_cap: Vec<f64>,
}

pub fn write_checkpoint<W: Write>(mut w: W, layers: &[LayerVoltages]) -> Result<(), CheckpointError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(layers.len() as u32).to_le_bytes())?;
    for l in layers {
        assert_eq!(l.v_cap.len(), l.rows * l.cols, "layer voltage count mismatch");
        w.write_all(&(l.rows as u32).to_le_bytes())?;
        w.write_all(&(l.cols as u32).to_le_bytes())?;
        for v in &l.v_cap {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<LayerVoltages>, CheckpointError> {
    let magic: [u8; 4] = read_array(&mut r)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = u16::from_le_bytes(read_array(&mut r)?);
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let count = u32::from_le_bytes(read_array(&mut r)?) as usize;
    let mut layers = Vec::new();
    for layer in 0..count {
        let rows = u32::from_le_bytes(read_array(&mut r)?);
        let cols = u32::from_le_bytes(read_array(&mut r)?);
        let n = (rows as usize)
            .checked_mul(cols as usize)
            .filter(|n| *n <= (1 << 31))
            .ok_or(CheckpointError::Oversized { layer, rows, cols })?;
        let mut v_cap = Vec::with_capacity(n);
        for _ in 0..n {
            v_cap.push(f64::from_le_bytes(read_array(&mut r)?));
        }
        layers.push(LayerVoltages { rows: rows as usize, cols: cols as usize, v_cap });
    }
    Ok(layers)
}

/// CSV dump `row,col,v_cap,weight` of one layer.
pub fn write_weights_csv<W: Write>(mut w: W, layer: &LayerVoltages, mapping: &WeightMapping) -> io::Result<()> {
    writeln!(w, "row,col,v_cap,weight")?;
    for i in 0..layer.rows {
        for j in 0..layer.cols {
            let v = layer.v_cap[i * layer.cols + j];
            writeln!(w, "{i},{j},{v},{}", mapping.weight_at(v))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        let l = LayerVoltages { rows: 1, cols: 2, v_cap: vec![0.4, 0.25] };
        write_checkpoint(&mut buf, &[l]).unwrap();
        assert_eq!(&buf[..4], b"RPUW");
        assert_eq!(&buf[4..6], &[1, 0]);
        assert_eq!(&buf[6..10], &[1, 0, 0, 0]);
        assert_eq!(&buf[10..14], &[1, 0, 0, 0]);
        assert_eq!(&buf[14..18], &[2, 0, 0, 0]);
        assert_eq!(&buf[18..26], &0.4f64.to_le_bytes());
        assert_eq!(buf.len(), 18 + 16);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let err = read_checkpoint(&b"RPUX\x01\x00\x00\x00\x00\x00"[..]).unwrap_err();
        assert!(matches!(err, CheckpointError::BadMagic(_)));
        let err = read_checkpoint(&b"RPUW\x02\x00\x00\x00\x00\x00"[..]).unwrap_err();
        assert!(matches!(err, CheckpointError::UnsupportedVersion(2)));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[LayerVoltages { rows: 2, cols: 2, v_cap: vec![0.1; 4] }]).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(read_checkpoint(&buf[..]).unwrap_err(), CheckpointError::Io(_)));
    }

    #[test]
    fn csv_dump_has_weights() {
        let l = LayerVoltages { rows: 1, cols: 2, v_cap: vec![0.4, 0.28] };
        let mut out = Vec::new();
        write_weights_csv(&mut out, &l, &WeightMapping::default()).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "row,col,v_cap,weight");
        assert_eq!(lines[1], "0,0,0.4,0");
        let fields: Vec<f64> = lines[2].split(',').map(|f| f.parse().unwrap()).collect();
        assert_eq!(&fields[..3], &[0.0, 1.0, 0.28]);
        assert!((fields[3] - 1.2).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn round_trip(shapes in proptest::collection::vec((1usize..5, 1usize..5), 0..4), seed in any::<u64>()) {
            let layers: Vec<LayerVoltages> = shapes.iter().enumerate().map(|(k, &(r, c))| LayerVoltages {
                rows: r,
                cols: c,
                v_cap: (0..r * c).map(|i| ((seed.wrapping_add((k * 31 + i) as u64)) % 1000) as f64 * 8e-4).collect(),
            }).collect();
            let mut buf = Vec::new();
            write_checkpoint(&mut buf, &layers).unwrap();
            prop_assert_eq!(read_checkpoint(&buf[..]).unwrap(), layers);
        }
    }
}
