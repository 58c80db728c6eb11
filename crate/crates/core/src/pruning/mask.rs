use std::fmt;

use crate::error::{Error, Result};
use crate::snn::Network;

/// Retain/prune bits for the filters of one convolution layer. Never all zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Segment(Vec<bool>);

impl Segment {
    /// Returns `None` if no bit is set.
    pub fn new(bits: Vec<bool>) -> Option<Self> {
        bits.iter().any(|&b| b).then_some(Self(bits))
    }

    pub fn ones(len: usize) -> Self {
        assert!(len > 0, "segment length must be positive");
        Self(vec![true; len])
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn kept_indices(&self) -> Vec<usize> {
        self.0.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect()
    }

    pub fn parse(line: &str) -> Option<Self> {
        let bits = line
            .chars()
            .map(|c| match c {
                '1' => Some(true),
                '0' => Some(false),
                _ => None,
            })
            .collect::<Option<Vec<_>>>()?;
        Self::new(bits)
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.0 {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

/// One segment per prunable layer, bound to the architecture it was built for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilterMask {
    segments: Vec<Segment>,
    fingerprint: u64,
}

impl FilterMask {
    pub fn all_ones(net: &Network) -> Self {
        let specs = net.specs();
        let segments = net
            .prunable_layers()
            .into_iter()
            .map(|l| Segment::ones(specs[l].outputs()))
            .collect();
        Self {
            segments,
            fingerprint: net.architecture().fingerprint(),
        }
    }

    pub fn from_segments(net: &Network, segments: Vec<Segment>) -> Result<Self> {
        let mask = Self {
            segments,
            fingerprint: net.architecture().fingerprint(),
        };
        mask.check(net)?;
        Ok(mask)
    }

    /// Builds a mask from raw bit vectors, reporting the first empty layer.
    pub fn from_bits(net: &Network, bits: Vec<Vec<bool>>) -> Result<Self> {
        let segments = bits
            .into_iter()
            .enumerate()
            .map(|(i, b)| Segment::new(b).ok_or(Error::EmptyLayer(i)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_segments(net, segments)
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, i: usize) -> &Segment {
        &self.segments[i]
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn count_ones(&self) -> usize {
        self.segments.iter().map(Segment::count_ones).sum()
    }

    pub fn is_all_ones(&self) -> bool {
        self.segments.iter().all(|s| s.count_ones() == s.len())
    }

    /// Rejects a mask built for a different architecture.
    pub fn check(&self, net: &Network) -> Result<()> {
        let specs = net.specs();
        let layers = net.prunable_layers();
        if layers.len() != self.segments.len() {
            return Err(Error::MaskMismatch(format!(
                "{} segments for {} prunable layers",
                self.segments.len(),
                layers.len()
            )));
        }
        for (seg, &l) in self.segments.iter().zip(&layers) {
            if seg.len() != specs[l].outputs() {
                return Err(Error::MaskMismatch(format!(
                    "layer {l} has {} filters, segment has {}",
                    specs[l].outputs(),
                    seg.len()
                )));
            }
        }
        if self.fingerprint != net.architecture().fingerprint() {
            return Err(Error::MaskMismatch("architecture fingerprint differs".into()));
        }
        Ok(())
    }

    /// Copy of this mask with segment `i` swapped for `seg`.
    pub fn with_segment(&self, i: usize, seg: Segment) -> Result<Self> {
        let cur = self
            .segments
            .get(i)
            .ok_or_else(|| Error::MaskMismatch(format!("no segment {i}")))?;
        if cur.len() != seg.len() {
            return Err(Error::SegmentLengthMismatch {
                expected: cur.len(),
                got: seg.len(),
            });
        }
        let mut out = self.clone();
        out.segments[i] = seg;
        Ok(out)
    }

    /// One line of `0`/`1` characters per prunable layer.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for seg in &self.segments {
            s.push_str(&seg.to_string());
            s.push('\n');
        }
        s
    }

    pub fn from_text(net: &Network, text: &str) -> Result<Self> {
        let mut bits = Vec::new();
        for (i, line) in text.lines().map(str::trim).filter(|l| !l.is_empty()).enumerate() {
            let seg: Vec<bool> = line
                .chars()
                .map(|c| match c {
                    '1' => Ok(true),
                    '0' => Ok(false),
                    other => Err(Error::MaskMismatch(format!("line {i}: unexpected character {other:?}"))),
                })
                .collect::<Result<_>>()?;
            bits.push(seg);
        }
        Self::from_bits(net, bits)
    }
}
