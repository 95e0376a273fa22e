use serde::{Deserialize, Serialize};

use super::{BitVec, Cc4Error, PacketClass};

/// Three-layer corner-classification network. Hidden neuron `i` has input
/// weight `+1` where training vector `i` has a one and `-1` elsewhere, and
/// bias `r - s_i + 1` with `s_i` the vector's weight; it therefore fires
/// exactly on probes within Hamming distance `r`. Only the training vectors
/// are stored; weights are rebuilt from them.
#[derive(Debug, Clone, PartialEq)]
pub struct Cc4Network {
    radius: usize,
    width: usize,
    vectors: Vec<BitVec>,
    classes: Vec<PacketClass>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Classification {
    pub class: PacketClass,
    /// No neuron fired, or the winning score was tied.
    pub ambiguous: bool,
    /// Indexed Known, Unknown, Attack.
    pub scores: [i64; 3],
    pub fired: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetworkDoc {
    r: usize,
    vectors: Vec<String>,
    classes: Vec<PacketClass>,
}

impl Cc4Network {
    pub fn train(samples: &[(BitVec, PacketClass)], radius: usize) -> Result<Self, Cc4Error> {
        let first = samples.first().ok_or(Cc4Error::EmptyTrainingSet)?;
        let width = first.0.len();
        if let Some((v, _)) = samples.iter().find(|(v, _)| v.len() != width) {
            return Err(Cc4Error::WidthMismatch { expected: width, found: v.len() });
        }
        Ok(Cc4Network {
            radius,
            width,
            vectors: samples.iter().map(|(v, _)| v.clone()).collect(),
            classes: samples.iter().map(|(_, c)| *c).collect(),
        })
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn hidden_count(&self) -> usize {
        self.vectors.len()
    }

    pub fn class_of(&self, neuron: usize) -> PacketClass {
        self.classes[neuron]
    }

    pub fn weights(&self, neuron: usize) -> Vec<i64> {
        self.vectors[neuron].iter().map(|b| if b { 1 } else { -1 }).collect()
    }

    pub fn bias(&self, neuron: usize) -> i64 {
        self.radius as i64 - self.vectors[neuron].count_ones() as i64 + 1
    }

    /// Weighted input plus bias for `neuron`.
    pub fn activation(&self, neuron: usize, probe: &BitVec) -> i64 {
        // With ±1 weights and a binary probe the dot product is the number
        // of shared ones minus the probe's ones where the weight is -1.
        let (shared, probe_only) = probe.overlap(&self.vectors[neuron]);
        shared as i64 - probe_only as i64 + self.bias(neuron)
    }

    pub fn fires(&self, neuron: usize, probe: &BitVec) -> bool {
        self.activation(neuron, probe) > 0
    }

    pub fn classify(&self, probe: &BitVec) -> Result<Classification, Cc4Error> {
        if probe.len() != self.width {
            return Err(Cc4Error::WidthMismatch { expected: self.width, found: probe.len() });
        }
        let mut scores = [0i64; 3];
        let mut fired = 0;
        for (i, class) in self.classes.iter().enumerate() {
            if self.fires(i, probe) {
                fired += 1;
                for c in PacketClass::ALL {
                    scores[c.index()] += if c == *class { 1 } else { -1 };
                }
            }
        }
        if fired == 0 {
            return Ok(Classification { class: PacketClass::Unknown, ambiguous: true, scores, fired });
        }
        let best = scores.iter().copied().max().expect("three scores");
        let mut winners = PacketClass::TIE_ORDER.into_iter().filter(|c| scores[c.index()] == best);
        let class = winners.next().expect("max is attained");
        Ok(Classification { class, ambiguous: winners.next().is_some(), scores, fired })
    }

    pub fn to_json(&self) -> String {
        let doc = NetworkDoc {
            r: self.radius,
            vectors: self.vectors.iter().map(BitVec::to_string).collect(),
            classes: self.classes.clone(),
        };
        serde_json::to_string(&doc).expect("network serialization cannot fail")
    }

    pub fn from_json(s: &str) -> Result<Self, Cc4Error> {
        let doc: NetworkDoc = serde_json::from_str(s).map_err(|e| Cc4Error::Format(e.to_string()))?;
        if doc.vectors.len() != doc.classes.len() {
            return Err(Cc4Error::Format("vectors and classes differ in length".into()));
        }
        let vectors = doc
            .vectors
            .iter()
            .map(|v| v.parse::<BitVec>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(Cc4Error::Format)?;
        let samples: Vec<(BitVec, PacketClass)> = vectors.into_iter().zip(doc.classes).collect();
        Cc4Network::train(&samples, doc.r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bv(s: &str) -> BitVec {
        s.parse().unwrap()
    }

    #[test]
    fn single_sample_weights() {
        let net = Cc4Network::train(&[(bv("101"), PacketClass::Known)], 0).unwrap();
        assert_eq!(net.weights(0), vec![1, -1, 1]);
        assert_eq!(net.bias(0), -1);
        assert_eq!(net.activation(0, &bv("101")), 1);
    }

    #[test]
    fn memorizes_training_set_at_radius_zero() {
        let samples = vec![
            (bv("1100"), PacketClass::Known),
            (bv("0011"), PacketClass::Attack),
            (bv("1111"), PacketClass::Unknown),
            (bv("0000"), PacketClass::Attack),
        ];
        let net = Cc4Network::train(&samples, 0).unwrap();
        for (v, c) in &samples {
            let out = net.classify(v).unwrap();
            assert_eq!((out.class, out.ambiguous), (*c, false));
        }
    }

    #[test]
    fn no_fire_is_unknown() {
        let net = Cc4Network::train(&[(bv("110000"), PacketClass::Known), (bv("000011"), PacketClass::Attack)], 1).unwrap();
        // Distance 2 from both.
        let out = net.classify(&bv("100001")).unwrap();
        assert_eq!((out.class, out.ambiguous, out.fired), (PacketClass::Unknown, true, 0));
    }

    #[test]
    fn tie_prefers_known() {
        let net = Cc4Network::train(&[(bv("1100"), PacketClass::Attack), (bv("1010"), PacketClass::Known)], 1).unwrap();
        let out = net.classify(&bv("1000")).unwrap();
        assert_eq!(out.fired, 2);
        assert_eq!((out.class, out.ambiguous), (PacketClass::Known, true));
    }

    #[test]
    fn errors() {
        assert_eq!(Cc4Network::train(&[], 1), Err(Cc4Error::EmptyTrainingSet));
        let mixed = [(bv("10"), PacketClass::Known), (bv("101"), PacketClass::Known)];
        assert_eq!(Cc4Network::train(&mixed, 1), Err(Cc4Error::WidthMismatch { expected: 2, found: 3 }));
        let net = Cc4Network::train(&mixed[..1], 0).unwrap();
        assert!(matches!(net.classify(&bv("1")), Err(Cc4Error::WidthMismatch { .. })));
    }

    #[test]
    fn json_rebuilds_identical_network() {
        let net = Cc4Network::train(&[(bv("1011"), PacketClass::Attack), (bv("0001"), PacketClass::Known)], 2).unwrap();
        let text = net.to_json();
        assert_eq!(text, r#"{"r":2,"vectors":["1011","0001"],"classes":["Attack","Known"]}"#);
        assert_eq!(Cc4Network::from_json(&text).unwrap(), net);
    }

    #[test]
    fn radius_lemma_exhaustive_width_10() {
        let width = 10;
        let train: Vec<BitVec> = [0b0000000000u64, 0b1111111111, 0b1010011001, 0b0000010000].iter().map(|&x| BitVec::from_u64(x, width)).collect();
        for r in 0..=3 {
            let samples: Vec<_> = train.iter().map(|v| (v.clone(), PacketClass::Known)).collect();
            let net = Cc4Network::train(&samples, r).unwrap();
            for probe in 0..1u64 << width {
                let p = BitVec::from_u64(probe, width);
                for (i, v) in train.iter().enumerate() {
                    let dot: i64 = net.weights(i).iter().zip(p.iter()).map(|(w, b)| if b { *w } else { 0 }).sum();
                    let fires = dot + net.bias(i) > 0;
                    assert_eq!(fires, v.hamming(&p) <= r);
                    assert_eq!(net.fires(i, &p), fires);
                }
            }
        }
    }
}
