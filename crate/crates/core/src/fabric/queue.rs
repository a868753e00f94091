use std::collections::VecDeque;

/// Default output buffer per switch port.
pub const DEFAULT_QUEUE_BYTES: u64 = 256 * 1024;

/// Output FIFO of one port. `enqueued_bytes` includes the packet being serialized.
#[derive(Debug, Clone)]
pub struct PortQueue<P> {
    /// `None` for unbounded queues (host NICs).
    pub capacity: Option<u64>,
    enqueued_bytes: u64,
    packets: VecDeque<(u64, P)>,
}

impl<P> PortQueue<P> {
    pub fn new(capacity: Option<u64>) -> Self {
        Self {
            capacity,
            enqueued_bytes: 0,
            packets: VecDeque::new(),
        }
    }

    pub fn enqueued_bytes(&self) -> u64 {
        self.enqueued_bytes
    }

    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn fits(&self, bytes: u64) -> bool {
        self.capacity.is_none_or(|c| self.enqueued_bytes + bytes <= c)
    }

    /// Occupancy above half of the capacity.
    pub fn over_half(&self) -> bool {
        self.capacity.is_some_and(|c| self.enqueued_bytes * 2 > c)
    }

    /// Appends the packet, or hands it back when it does not fit (tail drop).
    pub fn push(&mut self, bytes: u64, packet: P) -> Result<(), P> {
        if !self.fits(bytes) {
            return Err(packet);
        }
        self.enqueued_bytes += bytes;
        self.packets.push_back((bytes, packet));
        Ok(())
    }

    pub fn front_bytes(&self) -> Option<u64> {
        self.packets.front().map(|(b, _)| *b)
    }

    pub fn pop(&mut self) -> Option<(u64, P)> {
        let (bytes, p) = self.packets.pop_front()?;
        self.enqueued_bytes -= bytes;
        Some((bytes, p))
    }

    pub fn drain(&mut self) -> impl Iterator<Item = (u64, P)> + '_ {
        self.enqueued_bytes = 0;
        self.packets.drain(..)
    }
}
