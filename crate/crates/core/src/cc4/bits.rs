use std::fmt;
use std::str::FromStr;

/// Fixed-width bit vector packed into 64-bit words. Bits past `len` in the
/// last word are always zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BitVec {
    words: Vec<u64>,
    len: usize,
}

impl BitVec {
    pub fn zeros(len: usize) -> Self {
        BitVec { words: vec![0; len.div_ceil(64)], len }
    }

    pub fn from_bools(bits: &[bool]) -> Self {
        let mut v = BitVec::zeros(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            v.set(i, b);
        }
        v
    }

    /// Low `len` bits of `value`, bit 0 first.
    pub fn from_u64(value: u64, len: usize) -> Self {
        assert!(len <= 64);
        let mask = if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
        BitVec { words: vec![value & mask], len }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn set(&mut self, i: usize, on: bool) {
        assert!(i < self.len, "bit {i} out of range {}", self.len);
        let m = 1u64 << (i % 64);
        if on {
            self.words[i / 64] |= m;
        } else {
            self.words[i / 64] &= !m;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn hamming(&self, other: &BitVec) -> usize {
        assert_eq!(self.len, other.len);
        self.words.iter().zip(&other.words).map(|(a, b)| (a ^ b).count_ones() as usize).sum()
    }

    /// Ones in `self & other` and in `self & !other`.
    pub(crate) fn overlap(&self, other: &BitVec) -> (usize, usize) {
        let (mut both, mut only) = (0, 0);
        for (a, b) in self.words.iter().zip(&other.words) {
            both += (a & b).count_ones() as usize;
            only += (a & !b).count_ones() as usize;
        }
        (both, only)
    }

    pub fn extend(&mut self, other: &BitVec) {
        let base = self.len;
        self.len += other.len;
        self.words.resize(self.len.div_ceil(64), 0);
        for i in 0..other.len {
            if other.get(i) {
                self.set(base + i, true);
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.get(i))
    }
}

/// Bit 0 is printed first.
impl fmt::Display for BitVec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for BitVec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(format!("invalid bit {other:?}")),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(BitVec::from_bools(&bits))
    }
}
