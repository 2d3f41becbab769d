//! The 96 single-base-substitution channels in trinucleotide context.
//!
//! Canonical order: substitution (C>A, C>G, C>T, T>A, T>C, T>G), then the
//! 5' flanking base, then the 3' flanking base, each in A, C, G, T order.

use crate::error::{PpfError, Result};

pub const N_CHANNELS: usize = 96;

const BASES: [char; 4] = ['A', 'C', 'G', 'T'];
const SUBSTITUTIONS: [(char, char); 6] = [
    ('C', 'A'),
    ('C', 'G'),
    ('C', 'T'),
    ('T', 'A'),
    ('T', 'C'),
    ('T', 'G'),
];

fn base_index(c: char) -> Option<usize> {
    BASES.iter().position(|&b| b == c)
}

fn channel_error(label: &str, token: impl Into<String>, msg: &str) -> PpfError {
    PpfError::Channel {
        label: label.to_string(),
        token: token.into(),
        msg: msg.to_string(),
    }
}

/// Parse a label such as `T[C>A]G` into its canonical index.
pub fn parse_channel(label: &str) -> Result<usize> {
    let chars: Vec<char> = label.trim().chars().collect();
    if chars.len() != 7 {
        return Err(channel_error(label, label, "expected 7 characters, X[R>A]Y"));
    }
    if chars[1] != '[' {
        return Err(channel_error(label, chars[1], "expected '['"));
    }
    if chars[3] != '>' {
        return Err(channel_error(label, chars[3], "expected '>'"));
    }
    if chars[5] != ']' {
        return Err(channel_error(label, chars[5], "expected ']'"));
    }
    let five = base_index(chars[0]).ok_or_else(|| channel_error(label, chars[0], "5' base not in ACGT"))?;
    let three = base_index(chars[6]).ok_or_else(|| channel_error(label, chars[6], "3' base not in ACGT"))?;
    let (reference, alternate) = (chars[2], chars[4]);
    if reference != 'C' && reference != 'T' {
        return Err(channel_error(
            label,
            reference,
            "reference base must be a pyrimidine (C or T)",
        ));
    }
    let sub = SUBSTITUTIONS
        .iter()
        .position(|&(r, a)| r == reference && a == alternate)
        .ok_or_else(|| channel_error(label, format!("{reference}>{alternate}"), "not a valid substitution"))?;
    Ok(sub * 16 + five * 4 + three)
}

/// Inverse of [`parse_channel`].
pub fn format_channel(index: usize) -> String {
    assert!(index < N_CHANNELS, "channel index {index} out of range");
    let (r, a) = SUBSTITUTIONS[index / 16];
    let five = BASES[(index / 4) % 4];
    let three = BASES[index % 4];
    format!("{five}[{r}>{a}]{three}")
}

/// All 96 labels in canonical order.
pub fn channel_labels() -> Vec<String> {
    (0..N_CHANNELS).map(format_channel).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_endpoints() {
        assert_eq!(parse_channel("A[C>A]A").unwrap(), 0);
        assert_eq!(parse_channel("T[T>G]T").unwrap(), 95);
        assert_eq!(parse_channel("A[C>G]A").unwrap(), 16);
    }

    #[test]
    fn exhaustive_round_trip() {
        // Enumerate labels independently of the formatter.
        let mut seen = Vec::new();
        for (r, a) in [('C', 'A'), ('C', 'G'), ('C', 'T'), ('T', 'A'), ('T', 'C'), ('T', 'G')] {
            for x in ['A', 'C', 'G', 'T'] {
                for y in ['A', 'C', 'G', 'T'] {
                    let label = format!("{x}[{r}>{a}]{y}");
                    let idx = parse_channel(&label).unwrap();
                    assert_eq!(format_channel(idx), label);
                    seen.push(idx);
                }
            }
        }
        assert_eq!(seen, (0..96).collect::<Vec<_>>());
    }

    #[test]
    fn malformed_labels_name_the_token() {
        let err = parse_channel("A[G>A]A").unwrap_err().to_string();
        assert!(err.contains("'G'") || err.contains("\"G\""), "{err}");
        let err = parse_channel("A[C>C]A").unwrap_err().to_string();
        assert!(err.contains("C>C"), "{err}");
        let err = parse_channel("N[C>A]A").unwrap_err().to_string();
        assert!(err.contains("N"), "{err}");
        assert!(parse_channel("AC>AA").is_err());
    }
}
