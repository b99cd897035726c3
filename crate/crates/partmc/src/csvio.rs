//! CSV serialization shared by chain traces and sample banks.
//!
//! Schema: `chain_id,region_id,step,x0,...,x{d-1},accepted`, one row per
//! state, deterministic row order. Floats are printed with 17 significant
//! digits so that parsing the file back reproduces every value bit-exactly.

use std::io::Write;

use crate::error::Result;

/// Render a float with 17 significant digits (round-trip exact).
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_header<W: Write>(w: &mut W, dimension: usize) -> Result<()> {
    write!(w, "chain_id,region_id,step")?;
    for j in 0..dimension {
        write!(w, ",x{j}")?;
    }
    writeln!(w, ",accepted")?;
    Ok(())
}

pub fn write_row<W: Write>(
    w: &mut W,
    chain_id: u32,
    region_id: Option<u32>,
    step: usize,
    state: &[f64],
    accepted: bool,
) -> Result<()> {
    match region_id {
        Some(r) => write!(w, "{chain_id},{r},{step}")?,
        None => write!(w, "{chain_id},,{step}")?,
    }
    for v in state {
        write!(w, ",{}", format_float(*v))?;
    }
    writeln!(w, ",{}", u8::from(accepted))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trips() {
        for &x in &[0.1, -1.0 / 3.0, 1e-300, 2.5e300, std::f64::consts::PI] {
            let s = format_float(x);
            let back: f64 = s.parse().unwrap();
            assert_eq!(back.to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn row_layout() {
        let mut buf = Vec::new();
        write_header(&mut buf, 2).unwrap();
        write_row(&mut buf, 1, Some(0), 3, &[1.0, -2.0], true).unwrap();
        write_row(&mut buf, 1, None, 4, &[0.5, 0.25], false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "chain_id,region_id,step,x0,x1,accepted");
        assert!(lines.next().unwrap().starts_with("1,0,3,"));
        assert!(lines.next().unwrap().starts_with("1,,4,"));
    }
}
