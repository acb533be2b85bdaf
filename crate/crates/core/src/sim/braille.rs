use crate::error::{Error, Result};

/// The 27 task characters in label order.
pub const BRAILLE_CHARSET: [char; 27] = [
    'A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'J', 'K', 'L', 'M', 'N', 'O', 'P', 'Q', 'R', 'S',
    'T', 'U', 'V', 'W', 'X', 'Y', 'Z', '#',
];

// Dot n is bit n-1; dots 1-3 run down the left column, 4-6 down the right.
const DOTS: [&[u8]; 27] = [
    &[1],
    &[1, 2],
    &[1, 4],
    &[1, 4, 5],
    &[1, 5],
    &[1, 2, 4],
    &[1, 2, 4, 5],
    &[1, 2, 5],
    &[2, 4],
    &[2, 4, 5],
    &[1, 3],
    &[1, 2, 3],
    &[1, 3, 4],
    &[1, 3, 4, 5],
    &[1, 3, 5],
    &[1, 2, 3, 4],
    &[1, 2, 3, 4, 5],
    &[1, 2, 3, 5],
    &[2, 3, 4],
    &[2, 3, 4, 5],
    &[1, 3, 6],
    &[1, 2, 3, 6],
    &[2, 4, 5, 6],
    &[1, 3, 4, 6],
    &[1, 3, 4, 5, 6],
    &[1, 3, 5, 6],
    &[3, 4, 5, 6],
];

/// Six-bit dot mask for an upper-case letter or the number sign.
pub fn braille_pattern(ch: char) -> Result<u8> {
    let idx = braille_label(ch)?;
    Ok(DOTS[idx].iter().fold(0u8, |m, &d| m | 1 << (d - 1)))
}

/// Position of `ch` in [`BRAILLE_CHARSET`].
pub fn braille_label(ch: char) -> Result<usize> {
    BRAILLE_CHARSET
        .iter()
        .position(|&c| c == ch)
        .ok_or_else(|| Error::Domain(format!("no braille cell for {ch:?}")))
}

/// Dot numbers (1-6) set in `mask`.
pub fn mask_dots(mask: u8) -> Vec<u8> {
    (1..=6).filter(|d| mask & (1 << (d - 1)) != 0).collect()
}
