//! Bandwidth-optimal ring allreduce: reduce-scatter followed by all-gather.

use std::ops::Range;

use crate::baselines::BaselineError;

/// One point-to-point transfer of the ring schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RingMessage {
    pub step: usize,
    pub from: u32,
    pub to: u32,
    pub chunk: usize,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RingSchedule {
    pub hosts: Vec<u32>,
    pub steps: Vec<Vec<RingMessage>>,
}

impl RingSchedule {
    pub fn step_count(&self) -> usize {
        self.steps.len()
    }

    pub fn bytes_sent_by(&self, host: u32) -> u64 {
        self.steps
            .iter()
            .flatten()
            .filter(|m| m.from == host)
            .map(|m| m.bytes)
            .sum()
    }

    pub fn messages(&self) -> impl Iterator<Item = &RingMessage> {
        self.steps.iter().flatten()
    }
}

/// Splits `len` items into `parts` contiguous ranges whose sizes differ by at most one.
pub fn chunk_ranges(len: usize, parts: usize) -> Vec<Range<usize>> {
    (0..parts)
        .map(|i| (i * len / parts)..((i + 1) * len / parts))
        .collect()
}

/// Chunk that host position `i` sends at `step` on a ring of `n` hosts.
pub fn chunk_sent(i: usize, step: usize, n: usize) -> usize {
    (i + n - step % n) % n
}

/// Message schedule for a ring over `hosts` in list order.
pub fn ring_allreduce(hosts: &[u32], vector_bytes: u64) -> Result<RingSchedule, BaselineError> {
    if hosts.is_empty() {
        return Err(BaselineError::NoHosts);
    }
    let n = hosts.len();
    if n == 1 {
        return Ok(RingSchedule {
            hosts: hosts.to_vec(),
            steps: Vec::new(),
        });
    }
    let chunks = chunk_ranges(vector_bytes as usize, n);
    let steps = (0..2 * (n - 1))
        .map(|step| {
            (0..n)
                .map(|i| {
                    let chunk = chunk_sent(i, step, n);
                    RingMessage {
                        step,
                        from: hosts[i],
                        to: hosts[(i + 1) % n],
                        chunk,
                        bytes: chunks[chunk].len() as u64,
                    }
                })
                .collect()
        })
        .collect();
    Ok(RingSchedule {
        hosts: hosts.to_vec(),
        steps,
    })
}

/// Executes the ring on in-memory vectors and returns every host's result.
pub fn ring_reduce_in_memory(inputs: &[Vec<i32>]) -> Result<Vec<Vec<i32>>, BaselineError> {
    let n = inputs.len();
    if n == 0 {
        return Err(BaselineError::NoHosts);
    }
    let len = inputs[0].len();
    if inputs.iter().any(|v| v.len() != len) {
        return Err(BaselineError::LengthMismatch);
    }
    let mut buffers: Vec<Vec<i32>> = inputs.to_vec();
    if n == 1 {
        return Ok(buffers);
    }
    let chunks = chunk_ranges(len, n);
    for step in 0..2 * (n - 1) {
        let outgoing: Vec<(usize, Vec<i32>)> = (0..n)
            .map(|i| {
                let c = chunk_sent(i, step, n);
                (c, buffers[i][chunks[c].clone()].to_vec())
            })
            .collect();
        for (i, (c, data)) in outgoing.into_iter().enumerate() {
            let dst = &mut buffers[(i + 1) % n][chunks[c].clone()];
            if step < n - 1 {
                for (d, x) in dst.iter_mut().zip(&data) {
                    *d = d.wrapping_add(*x);
                }
            } else {
                dst.copy_from_slice(&data);
            }
        }
    }
    Ok(buffers)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_hosts_send_the_vector_once() {
        let s = ring_allreduce(&[0, 1], 1024).unwrap();
        assert_eq!(s.step_count(), 2);
        assert_eq!(s.bytes_sent_by(0), 1024);
        assert_eq!(s.bytes_sent_by(1), 1024);
    }

    #[test]
    fn four_hosts() {
        let s = ring_allreduce(&[4, 5, 6, 7], 4096).unwrap();
        assert_eq!(s.step_count(), 6);
        for h in 4..8 {
            assert_eq!(s.bytes_sent_by(h), 2 * 3 * 4096 / 4);
        }
    }

    #[test]
    fn single_host_has_no_messages() {
        let s = ring_allreduce(&[9], 1024).unwrap();
        assert_eq!(s.messages().count(), 0);
        assert_eq!(ring_reduce_in_memory(&[vec![1, 2]]).unwrap(), vec![vec![1, 2]]);
    }

    #[test]
    fn in_memory_matches_sum() {
        let inputs: Vec<Vec<i32>> = (0..5).map(|h| (0..7).map(|i| h * 10 + i).collect()).collect();
        let expected: Vec<i32> = (0..7).map(|i| (0..5).map(|h| h * 10 + i).sum()).collect();
        for r in ring_reduce_in_memory(&inputs).unwrap() {
            assert_eq!(r, expected);
        }
    }
}
