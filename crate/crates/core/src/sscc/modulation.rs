//! BPSK and Gray-mapped 16-QAM with soft LLR demodulation.
//!
//! Complex baseband is represented as interleaved real I/Q components
//! (BPSK uses one real component per symbol). 16-QAM factors into two
//! independent Gray-coded 4-PAM axes with levels {-3,-1,+1,+3}/sqrt(10),
//! giving unit average symbol energy. The demodulator equalizes by the
//! (per-codeword constant) fading coefficient and computes bit LLRs with
//! the exact sum-exp rule by default or a max-log fast path.
//!
//! SNR convention: Eb/N0 per *coded* bit with Es = 1, so
//! N0 = 1/(bits_per_symbol * 10^(EbN0/10)) and each real component carries
//! noise of variance N0/2. LLR sign: positive means bit 0.

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Modulation {
    Bpsk,
    Qam16,
}

/// Gray-coded 4-PAM: level and the two bits it carries.
const PAM4: [(f64, (u8, u8)); 4] = [
    (-3.0, (0, 0)),
    (-1.0, (0, 1)),
    (1.0, (1, 1)),
    (3.0, (1, 0)),
];

/// 1/sqrt(10): unit average energy for 16-QAM.
const QAM16_SCALE: f64 = 0.31622776601683794;

impl Modulation {
    pub fn bits_per_symbol(&self) -> usize {
        match self {
            Modulation::Bpsk => 1,
            Modulation::Qam16 => 4,
        }
    }

    /// Real components per channel symbol (I/Q for QAM).
    pub fn components_per_symbol(&self) -> usize {
        match self {
            Modulation::Bpsk => 1,
            Modulation::Qam16 => 2,
        }
    }

    /// Noise variance per real component at the given Eb/N0 (per coded bit).
    pub fn component_noise_variance(&self, ebn0_db: f64) -> f64 {
        let gamma = 10f64.powf(ebn0_db / 10.0);
        1.0 / (2.0 * self.bits_per_symbol() as f64 * gamma)
    }

    /// Maps bits to interleaved real components. Bit count must be a
    /// multiple of bits_per_symbol.
    pub fn modulate(&self, bits: &[u8]) -> Vec<f64> {
        assert!(
            bits.len() % self.bits_per_symbol() == 0,
            "modulate: {} bits not a multiple of {}",
            bits.len(),
            self.bits_per_symbol()
        );
        match self {
            Modulation::Bpsk => bits.iter().map(|&b| if b == 0 { 1.0 } else { -1.0 }).collect(),
            Modulation::Qam16 => {
                let mut out = Vec::with_capacity(bits.len() / 2);
                for chunk in bits.chunks(4) {
                    out.push(pam_level(chunk[0], chunk[1]) * QAM16_SCALE);
                    out.push(pam_level(chunk[2], chunk[3]) * QAM16_SCALE);
                }
                out
            }
        }
    }

    /// Equalizes received components by `h` and returns per-bit LLRs for
    /// the given per-component noise variance.
    pub fn demodulate_llr(
        &self,
        components: &[f64],
        sigma2_component: f64,
        h: f64,
        max_log: bool,
    ) -> Vec<f64> {
        assert!(h > 0.0, "demodulate: fading coefficient must be positive");
        let sigma2 = sigma2_component / (h * h);
        match self {
            Modulation::Bpsk => components.iter().map(|&y| 2.0 * (y / h) / sigma2).collect(),
            Modulation::Qam16 => {
                let mut out = Vec::with_capacity(components.len() * 2);
                for &y in components {
                    let y = y / h;
                    let (l0, l1) = pam_llrs(y, sigma2, max_log);
                    out.push(l0);
                    out.push(l1);
                }
                out
            }
        }
    }

    /// Hard-decision demodulation (nearest constellation point).
    pub fn demodulate_hard(&self, components: &[f64], h: f64) -> Vec<u8> {
        self.demodulate_llr(components, 1.0, h, true)
            .iter()
            .map(|&l| if l < 0.0 { 1 } else { 0 })
            .collect()
    }
}

fn pam_level(b0: u8, b1: u8) -> f64 {
    PAM4
        .iter()
        .find(|(_, bits)| *bits == (b0 & 1, b1 & 1))
        .expect("two bits always map to a level")
        .0
}

/// LLRs of the two bits carried by one 4-PAM component.
fn pam_llrs(y: f64, sigma2: f64, max_log: bool) -> (f64, f64) {
    let metric = |level: f64| -> f64 {
        let d = y - level * QAM16_SCALE;
        -d * d / (2.0 * sigma2)
    };
    let mut llr = [0.0f64; 2];
    for bit in 0..2 {
        let pick = |val: u8| -> Vec<f64> {
            PAM4
                .iter()
                .filter(|(_, bits)| (if bit == 0 { bits.0 } else { bits.1 }) == val)
                .map(|&(level, _)| metric(level))
                .collect()
        };
        let zeros = pick(0);
        let ones = pick(1);
        llr[bit] = if max_log {
            zeros.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - ones.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        } else {
            log_sum_exp(&zeros) - log_sum_exp(&ones)
        };
    }
    (llr[0], llr[1])
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let mx = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    mx + xs.iter().map(|&x| (x - mx).exp()).sum::<f64>().ln()
}
