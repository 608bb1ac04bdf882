//! Versioned binary snapshots of a [`SubGenState`].
//!
//! Layout, all little-endian:
//!
//! ```text
//! header   "SBGN" | version u32 | d, t, s, m′, n: u64 | delta, mu: f64
//! centers  m′ × d f64
//! counts   m′ f64
//! reserv.  m′ × t × d f64          (cluster-major, slot-major)
//! sampler  s × (d key f64, d value f64)
//! rng      seed [u8; 32] | stream u64 | word_pos u128
//! ```
//!
//! Sampler slots are either all empty or all filled: the first token with a
//! nonzero value fills every slot. Empty slots are written as zeros and are
//! recognized on read by `mu == 0`.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ClusterSummary, NormalizerDs, SamplePair, SubGenState, ValueSampler};
use crate::{Error, Result};

pub const SNAPSHOT_MAGIC: [u8; 4] = *b"SBGN";
pub const SNAPSHOT_VERSION: u32 = 1;

const HEADER_LEN: usize = 4 + 4 + 5 * 8 + 2 * 8;
const RNG_LEN: usize = 32 + 8 + 16;

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Format("truncated snapshot".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn vector(&mut self, d: usize) -> Result<Vec<f64>> {
        let v: Vec<f64> = (0..d).map(|_| self.f64()).collect::<Result<_>>()?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Format("non-finite vector entry".into()));
        }
        Ok(v)
    }
}

fn put_vec(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn usize_field(name: &str, x: u64) -> Result<usize> {
    usize::try_from(x).map_err(|_| Error::Format(format!("{name} = {x} does not fit in memory")))
}

impl SubGenState {
    /// Size in bytes of [`SubGenState::to_snapshot`]'s output.
    pub fn snapshot_len(&self) -> usize {
        let (d, t, s, m) = (self.d, self.t(), self.s(), self.m_prime());
        HEADER_LEN + 8 * (m * d + m + m * t * d + 2 * s * d) + RNG_LEN
    }

    pub fn to_snapshot(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.snapshot_len());
        out.extend_from_slice(&SNAPSHOT_MAGIC);
        out.extend_from_slice(&SNAPSHOT_VERSION.to_le_bytes());
        for x in [
            self.d as u64,
            self.t() as u64,
            self.s() as u64,
            self.m_prime() as u64,
            self.n,
        ] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&self.delta().to_le_bytes());
        out.extend_from_slice(&self.mu().to_le_bytes());

        let clusters = &self.normalizer.clusters;
        for c in clusters {
            put_vec(&mut out, &c.center);
        }
        for c in clusters {
            out.extend_from_slice(&(c.count as f64).to_le_bytes());
        }
        for c in clusters {
            for k in &c.reservoir {
                put_vec(&mut out, k);
            }
        }
        let zeros = vec![0.0; self.d];
        for slot in &self.sampler.slots {
            match slot {
                Some(p) => {
                    put_vec(&mut out, &p.key);
                    put_vec(&mut out, &p.value);
                }
                None => {
                    put_vec(&mut out, &zeros);
                    put_vec(&mut out, &zeros);
                }
            }
        }

        out.extend_from_slice(&self.rng.get_seed());
        out.extend_from_slice(&self.rng.get_stream().to_le_bytes());
        out.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        out
    }

    pub fn from_snapshot(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes };
        if r.take(4)? != SNAPSHOT_MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != SNAPSHOT_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let d = usize_field("d", r.u64()?)?;
        let t = usize_field("t", r.u64()?)?;
        let s = usize_field("s", r.u64()?)?;
        let m = usize_field("m'", r.u64()?)?;
        let n = r.u64()?;
        let delta = r.f64()?;
        let mu = r.f64()?;
        if d == 0 || t == 0 || s == 0 {
            return Err(Error::Format("d, t and s must be positive".into()));
        }
        if !(delta.is_finite() && delta > 0.0) || !(mu.is_finite() && mu >= 0.0) {
            return Err(Error::Format("delta or mu out of range".into()));
        }
        let expected = m
            .checked_mul(d)
            .and_then(|md| md.checked_add(m))
            .and_then(|x| x.checked_add(m.checked_mul(t)?.checked_mul(d)?))
            .and_then(|x| x.checked_add(s.checked_mul(2 * d)?))
            .and_then(|x| x.checked_mul(8))
            .and_then(|x| x.checked_add(HEADER_LEN + RNG_LEN));
        if expected != Some(bytes.len()) {
            return Err(Error::Format(format!(
                "length {} does not match header",
                bytes.len()
            )));
        }

        let centers = (0..m).map(|_| r.vector(d)).collect::<Result<Vec<_>>>()?;
        let mut counts = Vec::with_capacity(m);
        for _ in 0..m {
            let c = r.f64()?;
            if !(c >= 1.0 && c.fract() == 0.0 && c < 9.007_199_254_740_992e15) {
                return Err(Error::Format(format!("invalid cluster count {c}")));
            }
            counts.push(c as u64);
        }
        let mut clusters = Vec::with_capacity(m);
        for (center, count) in centers.into_iter().zip(counts) {
            let reservoir = (0..t).map(|_| r.vector(d)).collect::<Result<Vec<_>>>()?;
            clusters.push(ClusterSummary {
                center,
                reservoir,
                count,
            });
        }
        if clusters.iter().map(|c| c.count).sum::<u64>() != n {
            return Err(Error::Format("cluster counts do not sum to n".into()));
        }

        let mut slots = Vec::with_capacity(s);
        for _ in 0..s {
            let key = r.vector(d)?;
            let value = r.vector(d)?;
            slots.push((mu > 0.0).then_some(SamplePair { key, value }));
        }

        let seed: [u8; 32] = r.take(32)?.try_into().unwrap();
        let stream = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().unwrap());
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(word_pos);

        Ok(SubGenState {
            normalizer: NormalizerDs {
                clusters,
                delta,
                t,
            },
            sampler: ValueSampler { slots, mu },
            n,
            d,
            rng,
        })
    }

    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&self.to_snapshot())?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        SubGenState::from_snapshot(&buf)
    }
}
