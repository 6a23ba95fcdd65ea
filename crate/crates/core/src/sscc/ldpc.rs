//! Rate-1/2 quasi-cyclic LDPC codes with systematic encoding and
//! sum-product belief-propagation decoding.
//!
//! The (648, 324) code expands the IEEE 802.11 rate-1/2 base matrix with
//! lifting factor Z = 27. The (1200, 600) profile re-expands the same base
//! matrix at Z = 50 (every base shift is below 50, and the dual-diagonal
//! parity structure is lifting-independent); it stands in for the n=1200
//! near-rate-1/2 configuration, which has no standard QC construction at
//! exactly k = 601.
//!
//! Encoding solves H_p * p = H_m * m over GF(2) with a precomputed inverse
//! of the parity submatrix, so every emitted codeword satisfies H c = 0 by
//! construction. LLR convention: positive LLR means bit 0 is more likely.

/// IEEE 802.11 rate-1/2 base matrix, 12 x 24 blocks; -1 marks an empty
/// block, other entries are cyclic shifts of the identity.
#[rustfmt::skip]
const BASE_RATE_HALF: [[i8; 24]; 12] = [
    [ 0, -1, -1, -1,  0,  0, -1, -1,  0, -1, -1,  0,  1,  0, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [22,  0, -1, -1, 17, -1,  0,  0, 12, -1, -1, -1, -1,  0,  0, -1, -1, -1, -1, -1, -1, -1, -1, -1],
    [ 6, -1,  0, -1, 10, -1, -1, -1, 24, -1,  0, -1, -1, -1,  0,  0, -1, -1, -1, -1, -1, -1, -1, -1],
    [ 2, -1, -1,  0, 20, -1, -1, -1, 25,  0, -1, -1, -1, -1, -1,  0,  0, -1, -1, -1, -1, -1, -1, -1],
    [23, -1, -1, -1,  3, -1, -1, -1,  0, -1,  9, 11, -1, -1, -1, -1,  0,  0, -1, -1, -1, -1, -1, -1],
    [24, -1, 23,  1, 17, -1,  3, -1, 10, -1, -1, -1, -1, -1, -1, -1, -1,  0,  0, -1, -1, -1, -1, -1],
    [25, -1, -1, -1,  8, -1, -1, -1,  7, 18, -1, -1,  0, -1, -1, -1, -1, -1,  0,  0, -1, -1, -1, -1],
    [13, 24, -1, -1,  0, -1,  8, -1,  6, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1,  0,  0, -1, -1, -1],
    [ 7, 20, -1, 16, 22, 10, -1, -1, 23, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1,  0,  0, -1, -1],
    [11, -1, -1, -1, 19, -1, -1, -1, 13, -1,  3, 17, -1, -1, -1, -1, -1, -1, -1, -1, -1,  0,  0, -1],
    [25, -1,  8, -1, 23, 18, -1, 14,  9, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1,  0,  0],
    [ 3, -1, -1, -1, 16, -1, -1,  2, 25,  5, -1, -1,  1, -1, -1, -1, -1, -1, -1, -1, -1, -1, -1,  0],
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LdpcProfile {
    /// (648, 324): 802.11 base matrix at Z = 27.
    N648,
    /// (1200, 600): same base matrix at Z = 50.
    N1200,
}

impl LdpcProfile {
    pub fn lifting(&self) -> usize {
        match self {
            LdpcProfile::N648 => 27,
            LdpcProfile::N1200 => 50,
        }
    }

    /// Default BP iteration budget for this profile.
    pub fn default_iterations(&self) -> usize {
        match self {
            LdpcProfile::N648 => 20,
            LdpcProfile::N1200 => 80,
        }
    }
}

pub struct LdpcCode {
    pub n: usize,
    pub k: usize,
    pub profile: LdpcProfile,
    /// Variable indices per check row.
    check_neighbors: Vec<Vec<usize>>,
    /// Check indices per variable column.
    var_neighbors: Vec<Vec<usize>>,
    /// Rows of H_p^{-1} * H_m over the k message bits, bit-packed; row i
    /// gives parity bit i as a parity of message bits.
    parity_gen: Vec<Vec<u64>>,
}

fn words(bits: usize) -> usize {
    bits.div_ceil(64)
}

fn get_bit(row: &[u64], i: usize) -> bool {
    row[i / 64] >> (i % 64) & 1 == 1
}

fn set_bit(row: &mut [u64], i: usize) {
    row[i / 64] |= 1 << (i % 64);
}

fn xor_rows(dst: &mut [u64], src: &[u64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d ^= s;
    }
}

impl LdpcCode {
    pub fn new(profile: LdpcProfile) -> LdpcCode {
        let z = profile.lifting();
        let n = 24 * z;
        let m = 12 * z;
        let k = n - m;

        let mut check_neighbors: Vec<Vec<usize>> = vec![Vec::new(); m];
        let mut var_neighbors: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (br, base_row) in BASE_RATE_HALF.iter().enumerate() {
            for (bc, &shift) in base_row.iter().enumerate() {
                if shift < 0 {
                    continue;
                }
                let s = shift as usize % z;
                for r in 0..z {
                    let check = br * z + r;
                    let var = bc * z + (r + s) % z;
                    check_neighbors[check].push(var);
                    var_neighbors[var].push(check);
                }
            }
        }
        for row in &mut check_neighbors {
            row.sort_unstable();
        }

        // dense parity solve: invert H_p (columns k..n) and fold in H_m
        let w_m = words(m);
        let w_k = words(k);
        let mut hp: Vec<Vec<u64>> = vec![vec![0; w_m]; m]; // row r: parity columns as bits
        let mut hm: Vec<Vec<u64>> = vec![vec![0; w_k]; m];
        for (r, neigh) in check_neighbors.iter().enumerate() {
            for &v in neigh {
                if v < k {
                    set_bit(&mut hm[r], v);
                } else {
                    set_bit(&mut hp[r], v - k);
                }
            }
        }
        // Gauss-Jordan on [hp | hm]: afterwards hp = I and hm = H_p^{-1} H_m
        for col in 0..m {
            let pivot = (col..m)
                .find(|&r| get_bit(&hp[r], col))
                .expect("parity submatrix is invertible for the supported liftings");
            hp.swap(col, pivot);
            hm.swap(col, pivot);
            let (hp_col, hm_col) = (hp[col].clone(), hm[col].clone());
            for r in 0..m {
                if r != col && get_bit(&hp[r], col) {
                    xor_rows(&mut hp[r], &hp_col);
                    xor_rows(&mut hm[r], &hm_col);
                }
            }
        }

        LdpcCode {
            n,
            k,
            profile,
            check_neighbors,
            var_neighbors,
            parity_gen: hm,
        }
    }

    /// Systematic encoding: codeword = [message | parity].
    pub fn encode(&self, message: &[u8]) -> Vec<u8> {
        assert_eq!(message.len(), self.k, "ldpc: message must have k={} bits", self.k);
        let w_k = words(self.k);
        let mut m_bits = vec![0u64; w_k];
        for (i, &b) in message.iter().enumerate() {
            if b != 0 {
                set_bit(&mut m_bits, i);
            }
        }
        let mut codeword = Vec::with_capacity(self.n);
        codeword.extend_from_slice(message);
        for row in &self.parity_gen {
            let parity = row
                .iter()
                .zip(&m_bits)
                .fold(0u64, |acc, (a, b)| acc ^ (a & b))
                .count_ones()
                & 1;
            codeword.push(parity as u8);
        }
        codeword
    }

    /// H c^T == 0 check.
    pub fn parity_ok(&self, bits: &[u8]) -> bool {
        self.check_neighbors
            .iter()
            .all(|neigh| neigh.iter().fold(0u8, |acc, &v| acc ^ (bits[v] & 1)) == 0)
    }

    /// Sum-product decoding from channel LLRs (positive = bit 0). Returns
    /// the recovered message bits and whether parity converged within the
    /// iteration budget.
    pub fn decode(&self, llrs: &[f64], max_iterations: usize) -> (Vec<u8>, bool) {
        assert_eq!(llrs.len(), self.n, "ldpc: need n={} LLRs", self.n);
        const LLR_CLAMP: f64 = 30.0;

        let hard = |posterior: &[f64]| -> Vec<u8> {
            posterior.iter().map(|&l| if l < 0.0 { 1 } else { 0 }).collect()
        };

        let channel: Vec<f64> = llrs.iter().map(|&l| l.clamp(-LLR_CLAMP, LLR_CLAMP)).collect();
        let mut decision = hard(&channel);
        if self.parity_ok(&decision) {
            return (decision[..self.k].to_vec(), true);
        }

        // edge storage: per check, messages to/from its neighbor variables
        let mut var_to_check: Vec<Vec<f64>> = self
            .check_neighbors
            .iter()
            .map(|neigh| neigh.iter().map(|&v| channel[v]).collect())
            .collect();
        let mut check_to_var: Vec<Vec<f64>> = self
            .check_neighbors
            .iter()
            .map(|neigh| vec![0.0; neigh.len()])
            .collect();
        // position of (check, var) within the check's neighbor list, per var
        let edge_pos: Vec<Vec<usize>> = self
            .var_neighbors
            .iter()
            .enumerate()
            .map(|(v, checks)| {
                checks
                    .iter()
                    .map(|&c| self.check_neighbors[c].binary_search(&v).unwrap())
                    .collect()
            })
            .collect();

        for _iter in 0..max_iterations {
            // check update: tanh rule with exclusion of the target edge
            for (c, neigh) in self.check_neighbors.iter().enumerate() {
                let tanhs: Vec<f64> = var_to_check[c].iter().map(|&x| (x / 2.0).tanh()).collect();
                for (e, _) in neigh.iter().enumerate() {
                    let mut prod = 1.0;
                    for (e2, &t) in tanhs.iter().enumerate() {
                        if e2 != e {
                            prod *= t;
                        }
                    }
                    let msg = 2.0 * prod.clamp(-0.999_999_999_999_9, 0.999_999_999_999_9).atanh();
                    check_to_var[c][e] = msg.clamp(-LLR_CLAMP, LLR_CLAMP);
                }
            }
            // variable update and posterior
            let mut posterior = channel.clone();
            for (v, checks) in self.var_neighbors.iter().enumerate() {
                for (j, &c) in checks.iter().enumerate() {
                    posterior[v] += check_to_var[c][edge_pos[v][j]];
                }
            }
            for (v, checks) in self.var_neighbors.iter().enumerate() {
                for (j, &c) in checks.iter().enumerate() {
                    let msg = posterior[v] - check_to_var[c][edge_pos[v][j]];
                    var_to_check[c][edge_pos[v][j]] = msg.clamp(-LLR_CLAMP, LLR_CLAMP);
                }
            }
            decision = hard(&posterior);
            if self.parity_ok(&decision) {
                return (decision[..self.k].to_vec(), true);
            }
        }
        (decision[..self.k].to_vec(), false)
    }
}
