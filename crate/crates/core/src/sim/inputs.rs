use std::sync::Arc;

/// Input vectors of a job.
#[derive(Debug, Clone)]
pub enum Inputs {
    /// Pseudo-random elements derived from a seed; nothing is materialized.
    Synthetic { seed: u64 },
    /// One vector per participating host, in job host order.
    Explicit(Arc<Vec<Vec<i32>>>),
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Element `index` of host `position` for a synthetic job.
pub fn synthetic_element(seed: u64, position: usize, index: usize) -> i32 {
    mix(seed ^ mix((position as u64) << 32 | index as u64)) as i32
}

/// Per-job view of the inputs, split into blocks of `elements` elements.
#[derive(Debug, Clone)]
pub struct JobInputs {
    inputs: Inputs,
    hosts: usize,
    /// Elements per host vector before padding.
    len: usize,
    elements: usize,
    expected: Vec<Option<Box<[i32]>>>,
}

impl JobInputs {
    pub fn new(inputs: Inputs, hosts: usize, len: usize, elements: usize) -> Self {
        let blocks = len.div_ceil(elements);
        Self {
            inputs,
            hosts,
            len,
            elements,
            expected: vec![None; blocks],
        }
    }

    pub fn blocks(&self) -> usize {
        self.expected.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn element(&self, position: usize, index: usize) -> i32 {
        if index >= self.len {
            return 0;
        }
        match &self.inputs {
            Inputs::Synthetic { seed } => synthetic_element(*seed, position, index),
            Inputs::Explicit(v) => v[position][index],
        }
    }

    /// Block `seq` of host `position`, zero-padded.
    pub fn block(&self, position: usize, seq: u32) -> Vec<i32> {
        let start = seq as usize * self.elements;
        (start..start + self.elements)
            .map(|i| self.element(position, i))
            .collect()
    }

    /// Element-wise wrapping sum of block `seq` over all hosts.
    pub fn expected(&mut self, seq: u32) -> &[i32] {
        let slot = seq as usize;
        if self.expected[slot].is_none() {
            let mut sum = vec![0i32; self.elements];
            for p in 0..self.hosts {
                for (acc, x) in sum.iter_mut().zip(self.block(p, seq)) {
                    *acc = acc.wrapping_add(x);
                }
            }
            self.expected[slot] = Some(sum.into_boxed_slice());
        }
        self.expected[slot].as_deref().expect("filled above")
    }
}
