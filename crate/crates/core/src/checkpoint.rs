//! Checkpoint files.
//!
//! Layout: the 8-byte magic `AERCKPT1`, then four tagged sections, each a
//! 4-byte tag, a little-endian u64 payload length and the payload:
//!
//! | tag    | payload                                                         |
//! |--------|-----------------------------------------------------------------|
//! | `POLI` | policy parameters (`AERPOL1` format)                            |
//! | `REFP` | reference parameters (`AERPOL1` format)                         |
//! | `CTRL` | u8 init flag, f64 H0, f64 H*, f64 alpha, u64 step, f64 tau/rho/eta/eps |
//! | `RNGS` | u64 seed, u64 completed iterations                              |
//!
//! Random streams are derived from (seed, iteration), so the seed and the
//! iteration counter are the whole generator state.

use std::fs;
use std::path::Path;

use crate::controller::AerState;
use crate::error::{AerError, Result};
use crate::policy::PolicyParams;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"AERCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub policy: PolicyParams,
    pub reference: PolicyParams,
    pub controller: AerState,
    pub iteration: usize,
    pub seed: u64,
}

fn put_section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(AerError::Format("checkpoint truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn section(&mut self, tag: &[u8; 4]) -> Result<&'a [u8]> {
        let got = self.take(4)?;
        if got != tag {
            return Err(AerError::Format(format!(
                "expected section {}, found {}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(got)
            )));
        }
        let len = self.u64()? as usize;
        self.take(len)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        put_section(&mut out, b"POLI", &self.policy.to_bytes());
        put_section(&mut out, b"REFP", &self.reference.to_bytes());

        let c = &self.controller;
        let mut ctrl = vec![u8::from(c.is_initialized())];
        ctrl.extend_from_slice(&c.initial_entropy.unwrap_or(0.0).to_le_bytes());
        ctrl.extend_from_slice(&c.target_entropy.unwrap_or(0.0).to_le_bytes());
        ctrl.extend_from_slice(&c.alpha.to_le_bytes());
        ctrl.extend_from_slice(&c.step.to_le_bytes());
        for v in [c.tau, c.rho, c.eta, c.eps] {
            ctrl.extend_from_slice(&v.to_le_bytes());
        }
        put_section(&mut out, b"CTRL", &ctrl);

        let mut rngs = self.seed.to_le_bytes().to_vec();
        rngs.extend_from_slice(&(self.iteration as u64).to_le_bytes());
        put_section(&mut out, b"RNGS", &rngs);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(AerError::Format("missing AERCKPT1 header".into()));
        }
        let mut r = Reader { buf: bytes, pos: 8 };
        let policy = PolicyParams::from_bytes(r.section(b"POLI")?)?;
        let reference = PolicyParams::from_bytes(r.section(b"REFP")?)?;

        let mut c = Reader { buf: r.section(b"CTRL")?, pos: 0 };
        let initialized = c.take(1)?[0] != 0;
        let h0 = c.f64()?;
        let target = c.f64()?;
        let alpha = c.f64()?;
        let step = c.u64()?;
        let (tau, rho, eta, eps) = (c.f64()?, c.f64()?, c.f64()?, c.f64()?);
        let controller = AerState {
            initial_entropy: initialized.then_some(h0),
            target_entropy: initialized.then_some(target),
            alpha,
            tau,
            rho,
            eta,
            eps,
            step,
        };

        let mut g = Reader { buf: r.section(b"RNGS")?, pos: 0 };
        let seed = g.u64()?;
        let iteration = g.u64()? as usize;
        if r.pos != bytes.len() {
            return Err(AerError::Format("trailing bytes after checkpoint".into()));
        }
        if policy.shape() != reference.shape() {
            return Err(AerError::Format("policy and reference shapes differ".into()));
        }
        Ok(Self { policy, reference, controller, iteration, seed })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
