use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::share::ShareVec;
use crate::{Error, Result};

/// Exported traffic summary.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ChannelStats {
    pub bytes_p0_to_p1: u64,
    pub bytes_p1_to_p0: u64,
    pub rounds: u64,
    pub est_latency_s: f64,
}

impl ChannelStats {
    pub fn total_bytes(&self) -> u64 {
        self.bytes_p0_to_p1 + self.bytes_p1_to_p0
    }
}

/// Simulated two-party link. Every transfer is booked on the sender and on
/// the receiver so the two ledgers can be checked against each other.
#[derive(Debug, Clone)]
pub struct Channel {
    sent: [u64; 2],
    received: [u64; 2],
    rounds: u64,
    messages: u64,
    pub bandwidth_bps: f64,
    pub rtt_s: f64,
}

impl Default for Channel {
    fn default() -> Self {
        Channel::new(1e9, 1e-3)
    }
}

impl Channel {
    pub fn new(bandwidth_bps: f64, rtt_s: f64) -> Self {
        Channel { sent: [0; 2], received: [0; 2], rounds: 0, messages: 0, bandwidth_bps, rtt_s }
    }

    fn book(&mut self, from: usize, n: u64) {
        self.sent[from] += n;
        self.received[1 - from] += n;
        self.messages += 1;
    }

    /// Deliver a message; one flight.
    pub fn send(&mut self, from: usize, payload: &[u8]) -> Vec<u8> {
        self.book(from, payload.len() as u64);
        self.rounds += 1;
        payload.to_vec()
    }

    /// Ship a share vector through its wire form.
    pub fn send_shares(&mut self, s: &ShareVec) -> Result<ShareVec> {
        let bytes = self.send(s.party as usize, &s.to_bytes());
        ShareVec::from_bytes(&bytes, s.modulus, s.scale, s.party)
    }

    /// Both parties send a share vector to each other in the same flight.
    pub fn exchange(&mut self, a: &ShareVec, b: &ShareVec) -> Result<(ShareVec, ShareVec)> {
        let ba = a.to_bytes();
        let bb = b.to_bytes();
        self.book(a.party as usize, ba.len() as u64);
        self.book(b.party as usize, bb.len() as u64);
        self.rounds += 1;
        Ok((
            ShareVec::from_bytes(&ba, a.modulus, a.scale, a.party)?,
            ShareVec::from_bytes(&bb, b.modulus, b.scale, b.party)?,
        ))
    }

    /// Book `nbytes` of a message whose payload is not materialized here
    /// (ciphertexts, dealer-backed sub-protocols). Adds no round.
    pub fn transfer(&mut self, from: usize, nbytes: u64) {
        self.book(from, nbytes);
    }

    pub fn add_rounds(&mut self, r: u64) {
        self.rounds += r;
    }

    /// Both endpoints agree on what crossed the wire.
    pub fn check_balance(&self) -> Result<()> {
        if self.sent[0] != self.received[1] || self.sent[1] != self.received[0] {
            return Err(Error::ShareAlgebra(alloc::format!(
                "channel ledgers disagree: sent {:?}, received {:?}",
                self.sent,
                self.received
            )));
        }
        Ok(())
    }

    pub fn messages(&self) -> u64 {
        self.messages
    }

    pub fn stats(&self) -> ChannelStats {
        let bytes = self.sent[0] + self.sent[1];
        ChannelStats {
            bytes_p0_to_p1: self.sent[0],
            bytes_p1_to_p0: self.sent[1],
            rounds: self.rounds,
            est_latency_s: self.rounds as f64 * self.rtt_s + 8.0 * bytes as f64 / self.bandwidth_bps,
        }
    }

    /// Traffic since an earlier snapshot.
    pub fn since(&self, earlier: &ChannelStats) -> ChannelStats {
        let now = self.stats();
        let b0 = now.bytes_p0_to_p1 - earlier.bytes_p0_to_p1;
        let b1 = now.bytes_p1_to_p0 - earlier.bytes_p1_to_p0;
        let r = now.rounds - earlier.rounds;
        ChannelStats {
            bytes_p0_to_p1: b0,
            bytes_p1_to_p0: b1,
            rounds: r,
            est_latency_s: r as f64 * self.rtt_s + 8.0 * (b0 + b1) as f64 / self.bandwidth_bps,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mpc::share::{share, Modulus};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn bytes_match_serialized_sizes_on_both_ends() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let mut ch = Channel::new(8e6, 0.01);
        let (a, b) = share(&[1.0; 10], Modulus::Ring(43), 13, &mut rng).unwrap();
        let a2 = ch.send_shares(&a).unwrap();
        let b2 = ch.send_shares(&b).unwrap();
        assert_eq!((a2, b2), (a, b));
        ch.transfer(1, 1000);
        ch.check_balance().unwrap();
        let st = ch.stats();
        assert_eq!(st.bytes_p0_to_p1, 60);
        assert_eq!(st.bytes_p1_to_p0, 1060);
        assert_eq!(st.rounds, 2);
        assert!((st.est_latency_s - (0.02 + 8.0 * 1120.0 / 8e6)).abs() < 1e-12);
    }
}
