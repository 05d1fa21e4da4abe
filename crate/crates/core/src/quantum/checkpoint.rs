//! Flat binary checkpoints of wave functions.
//!
//! Layout, all fields little endian: the magic `MFQ1`, then `d`, `N`, `M` as
//! `u64`, then `L`, `scale`, `t` as `f64`, then `M^N` amplitudes as
//! interleaved `(re, im)` pairs of `f64` in row-major particle-axis order.

use std::io::{Read, Write};

use num_complex::Complex64;

use super::{SpatialGrid, WaveFunction};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MFQ1";

pub fn write_checkpoint(psi: &WaveFunction, mut out: impl Write) -> Result<()> {
    out.write_all(CHECKPOINT_MAGIC)?;
    for v in [1u64, psi.particles() as u64, psi.grid().len() as u64] {
        out.write_all(&v.to_le_bytes())?;
    }
    for v in [psi.grid().box_length(), psi.scale(), psi.t] {
        out.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(16 * psi.amplitudes().len());
    for a in psi.amplitudes() {
        buf.extend_from_slice(&a.re.to_le_bytes());
        buf.extend_from_slice(&a.im.to_le_bytes());
    }
    out.write_all(&buf)?;
    Ok(())
}

/// Reads a checkpoint, refusing bad magic, unsupported dimension, sizes above
/// `cap` amplitudes and states that are not normalized.
pub fn read_checkpoint(mut input: impl Read, cap: usize) -> Result<WaveFunction> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Artifact("not a wave function checkpoint".into()));
    }
    let mut word = [0u8; 8];
    let mut next_u64 = |input: &mut dyn Read| -> Result<u64> {
        input.read_exact(&mut word)?;
        Ok(u64::from_le_bytes(word))
    };
    let d = next_u64(&mut input)?;
    let n = next_u64(&mut input)? as usize;
    let m = next_u64(&mut input)? as usize;
    let next_f64 = |input: &mut dyn Read| -> Result<f64> {
        let mut w = [0u8; 8];
        input.read_exact(&mut w)?;
        Ok(f64::from_le_bytes(w))
    };
    let l = next_f64(&mut input)?;
    let scale = next_f64(&mut input)?;
    let t = next_f64(&mut input)?;
    if d != 1 {
        return Err(Error::Unsupported(format!("checkpoint has spatial dimension {d}")));
    }
    let grid = SpatialGrid::new(m, l)?;
    let len = grid.check_cap(n, cap)?;
    let mut raw = vec![0u8; 16 * len];
    input.read_exact(&mut raw)?;
    let amps = raw
        .chunks_exact(16)
        .map(|c| {
            let re = f64::from_le_bytes(c[..8].try_into().unwrap());
            let im = f64::from_le_bytes(c[8..].try_into().unwrap());
            Complex64::new(re, im)
        })
        .collect();
    let mut psi = WaveFunction::new(grid, n, amps, scale)?;
    psi.t = t;
    Ok(psi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let g = SpatialGrid::new(8, 5.0).unwrap();
        let a = WaveFunction::gaussian_packet(g, 0.5, 0.2, 1.0, 0.7).unwrap();
        let mut psi = WaveFunction::tensor_power(&a, 2, 1 << 24).unwrap();
        psi.t = 0.25;
        let mut buf = Vec::new();
        write_checkpoint(&psi, &mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 48 + 16 * 64);
        assert_eq!(&buf[..4], b"MFQ1");
        let back = read_checkpoint(&buf[..], 1 << 24).unwrap();
        assert_eq!(back, psi);
    }

    #[test]
    fn refuses_bad_input() {
        let g = SpatialGrid::new(8, 5.0).unwrap();
        let psi = WaveFunction::plane_wave(g, 1.0, 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&psi, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_checkpoint(&bad[..], 1 << 24), Err(Error::Artifact(_))));
        assert!(read_checkpoint(&buf[..buf.len() - 1], 1 << 24).is_err());
        assert!(matches!(read_checkpoint(&buf[..], 4), Err(Error::CapExceeded { .. })));
    }
}
