//! Fixed-width big-endian bit packing.

/// Packs each value into `bits` bits, most significant bit first, and pads
/// the final byte with zeros.
pub fn pack(values: &[u32], bits: u32) -> Vec<u8> {
    assert!((1..=32).contains(&bits), "bit width {bits} out of range");
    let total = values.len() as u64 * bits as u64;
    let mut out = vec![0u8; total.div_ceil(8) as usize];
    let mut acc: u64 = 0;
    let mut filled = 0u32;
    let mut pos = 0;
    for &v in values {
        debug_assert!(bits == 32 || v >> bits == 0, "value {v} wider than {bits} bits");
        acc = (acc << bits) | v as u64;
        filled += bits;
        while filled >= 8 {
            filled -= 8;
            out[pos] = (acc >> filled) as u8;
            pos += 1;
        }
        acc &= (1u64 << filled) - 1;
    }
    if filled > 0 {
        out[pos] = (acc << (8 - filled)) as u8;
    }
    out
}

/// Reads `count` values of `bits` bits. Returns `None` when `bytes` is not
/// exactly the packed size or the padding bits are not zero.
pub fn unpack(bytes: &[u8], count: usize, bits: u32) -> Option<Vec<u32>> {
    if !(1..=32).contains(&bits) {
        return None;
    }
    let total = (count as u64).checked_mul(bits as u64)?;
    if total.div_ceil(8) != bytes.len() as u64 {
        return None;
    }
    let mut out = Vec::with_capacity(count);
    let mut acc: u64 = 0;
    let mut filled = 0u32;
    let mut iter = bytes.iter();
    let mask = if bits == 32 { u32::MAX as u64 } else { (1u64 << bits) - 1 };
    for _ in 0..count {
        while filled < bits {
            acc = (acc << 8) | *iter.next()? as u64;
            filled += 8;
        }
        filled -= bits;
        out.push(((acc >> filled) & mask) as u32);
        acc &= (1u64 << filled) - 1;
    }
    (acc == 0).then_some(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn msb_first_layout() {
        assert_eq!(pack(&[1, 2, 3], 4), vec![0x12, 0x30]);
        assert_eq!(pack(&[0b101], 3), vec![0b1010_0000]);
        assert_eq!(pack(&[0x3FF, 0], 10), vec![0xFF, 0xC0, 0x00]);
    }

    #[test]
    fn round_trip_and_padding() {
        let v = vec![5, 0, 7, 1, 6];
        let p = pack(&v, 3);
        assert_eq!(p.len(), 2);
        assert_eq!(unpack(&p, 5, 3).unwrap(), v);
        let mut dirty = p.clone();
        *dirty.last_mut().unwrap() |= 1;
        assert!(unpack(&dirty, 5, 3).is_none());
        assert!(unpack(&p[..1], 5, 3).is_none());
    }

    #[test]
    fn full_width_values() {
        let v = vec![u32::MAX, 0, 0xDEAD_BEEF];
        assert_eq!(unpack(&pack(&v, 32), 3, 32).unwrap(), v);
    }
}
