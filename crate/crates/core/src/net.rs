//! Synchronous collectives among simulated PEs with volume accounting.

use crate::counters::{Phase, PhaseCounters};
use crate::error::{Error, Result};

/// `s[i][j]`: elements PE `i` sent to PE `j`.
pub type XferMatrix = Vec<Vec<u64>>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Collective {
    AllToAll,
    Gather,
}

/// One collective call as seen by the transcript.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub phase: Phase,
    pub kind: Collective,
    pub volume: XferMatrix,
}

#[derive(Debug)]
pub struct Net {
    pes: usize,
    counters: PhaseCounters,
    transcript: Vec<TranscriptEntry>,
}

impl Net {
    pub fn new(pes: usize) -> Self {
        Net {
            pes,
            counters: PhaseCounters::new(pes, 0),
            transcript: Vec::new(),
        }
    }

    pub fn pes(&self) -> usize {
        self.pes
    }

    fn check_participation<T>(&self, rows: &[T]) -> Result<()> {
        if rows.len() != self.pes {
            return Err(Error::Protocol(format!(
                "{} of {} PEs reached the barrier",
                rows.len(),
                self.pes
            )));
        }
        Ok(())
    }

    /// `payloads[i][j]` is what PE `i` sends to PE `j`. Returns `recv` with
    /// `recv[j][i]` the sequence PE `j` got from PE `i`.
    pub fn all_to_all_v<T>(
        &mut self,
        payloads: Vec<Vec<Vec<T>>>,
        phase: Phase,
    ) -> Result<Vec<Vec<Vec<T>>>> {
        self.check_participation(&payloads)?;
        for (i, row) in payloads.iter().enumerate() {
            if row.len() != self.pes {
                return Err(Error::Protocol(format!(
                    "PE {i} addressed {} destinations, expected {}",
                    row.len(),
                    self.pes
                )));
            }
        }
        let p = self.pes;
        let mut volume = vec![vec![0u64; p]; p];
        let mut recv: Vec<Vec<Vec<T>>> = (0..p)
            .map(|_| (0..p).map(|_| Vec::new()).collect())
            .collect();
        for (i, row) in payloads.into_iter().enumerate() {
            for (j, msg) in row.into_iter().enumerate() {
                let n = msg.len() as u64;
                volume[i][j] = n;
                if i == j {
                    self.counters.pe_mut(phase, i).elements_local += n;
                } else {
                    self.counters.pe_mut(phase, i).elements_sent += n;
                    self.counters.pe_mut(phase, j).elements_received += n;
                }
                recv[j][i] = msg;
            }
        }
        self.transcript.push(TranscriptEntry {
            phase,
            kind: Collective::AllToAll,
            volume,
        });
        Ok(recv)
    }

    /// Every PE contributes a few values; every PE gets the concatenation in
    /// PE order. Counted as control traffic.
    pub fn gather_splitters(
        &mut self,
        local: Vec<Vec<u64>>,
        phase: Phase,
    ) -> Result<Vec<Vec<u64>>> {
        self.check_participation(&local)?;
        let p = self.pes;
        let mut volume = vec![vec![0u64; p]; p];
        for (i, vals) in local.iter().enumerate() {
            let n = vals.len() as u64;
            for (j, cell) in volume[i].iter_mut().enumerate() {
                if i != j {
                    *cell = n;
                    self.counters.pe_mut(phase, i).control_sent += n;
                    self.counters.pe_mut(phase, j).control_received += n;
                }
            }
        }
        let all: Vec<u64> = local.into_iter().flatten().collect();
        self.transcript.push(TranscriptEntry {
            phase,
            kind: Collective::Gather,
            volume,
        });
        Ok(vec![all; p])
    }

    /// Point-to-point control message of `n` elements.
    pub fn control(&mut self, from: usize, to: usize, n: u64, phase: Phase) {
        if from != to {
            self.counters.pe_mut(phase, from).control_sent += n;
            self.counters.pe_mut(phase, to).control_received += n;
        }
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        &self.transcript
    }

    pub fn snapshot_counters(&self) -> PhaseCounters {
        self.counters.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_pes_one_direction() {
        let mut net = Net::new(2);
        let out = net
            .all_to_all_v(
                vec![vec![vec![], vec!['a', 'b']], vec![vec![], vec![]]],
                Phase::AllToAll,
            )
            .unwrap();
        assert_eq!(out[1][0], vec!['a', 'b']);
        assert_eq!(net.snapshot_counters().sent(Phase::AllToAll), 2);
        assert_eq!(net.snapshot_counters().received(Phase::AllToAll), 2);
    }

    #[test]
    fn self_messages_are_free() {
        let mut net = Net::new(3);
        let payloads = (0..3)
            .map(|i| {
                (0..3)
                    .map(|j| if i == j { vec![i; 5] } else { vec![] })
                    .collect()
            })
            .collect();
        let out = net.all_to_all_v(payloads, Phase::AllToAll).unwrap();
        assert_eq!(out[2][2], vec![2; 5]);
        let c = net.snapshot_counters();
        assert_eq!(c.sent(Phase::AllToAll), 0);
        assert_eq!(c.pe(Phase::AllToAll, 1).elements_local, 5);
    }

    #[test]
    fn random_exchange_reassembles() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let p = 4;
        let payloads: Vec<Vec<Vec<(usize, usize, u32)>>> = (0..p)
            .map(|i| {
                (0..p)
                    .map(|j| (0..rng.gen_range(0..6)).map(|k| (i, j, k)).collect())
                    .collect()
            })
            .collect();
        let mut net = Net::new(p);
        let out = net.all_to_all_v(payloads.clone(), Phase::AllToAll).unwrap();
        for j in 0..p {
            let mut got: Vec<_> = out[j].iter().flatten().copied().collect();
            let mut want: Vec<_> = (0..p).flat_map(|i| payloads[i][j].clone()).collect();
            got.sort();
            want.sort();
            assert_eq!(got, want);
        }
        let c = net.snapshot_counters();
        assert_eq!(c.sent(Phase::AllToAll), c.received(Phase::AllToAll));
    }

    #[test]
    fn missing_participant_is_protocol_error() {
        let mut net = Net::new(3);
        let r = net.all_to_all_v(vec![vec![Vec::<u8>::new(); 3]; 2], Phase::AllToAll);
        assert!(matches!(r, Err(Error::Protocol(_))));
        assert!(net
            .gather_splitters(vec![vec![1]], Phase::Selection)
            .is_err());
    }

    #[test]
    fn gather_concatenates() {
        let mut net = Net::new(3);
        let out = net
            .gather_splitters(vec![vec![1], vec![2], vec![3]], Phase::Selection)
            .unwrap();
        assert!(out.iter().all(|v| v == &vec![1, 2, 3]));
        let again = net
            .gather_splitters(vec![vec![4], vec![], vec![]], Phase::Selection)
            .unwrap();
        assert_eq!(again[1], vec![4]);
        assert_eq!(net.snapshot_counters().sent(Phase::Selection), 0);
        assert_eq!(net.snapshot_counters().control(Phase::Selection), 6 + 2);
    }

    #[test]
    fn gather_single_pe() {
        let mut net = Net::new(1);
        assert_eq!(
            net.gather_splitters(vec![vec![9, 8]], Phase::Selection)
                .unwrap(),
            vec![vec![9, 8]]
        );
    }
}
