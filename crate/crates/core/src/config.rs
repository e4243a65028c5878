//! Machine configuration and its feasibility checks.

use crate::error::{Error, Result};
use std::fmt;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MachineConfig {
    /// P: number of PEs.
    pub pes: usize,
    /// D: disks per PE.
    pub disks: usize,
    /// B: block size in elements.
    pub block: usize,
    /// m: memory per PE in elements.
    pub mem: usize,
    /// N: input size in elements, already padded to a multiple of `B·P`.
    pub n: u64,
    /// K: sample rate in elements.
    pub sample_rate: usize,
    pub seed: u64,
    pub randomize: bool,
    pub elem_size: usize,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            pes: 2,
            disks: 2,
            block: 4,
            mem: 16,
            n: 128,
            sample_rate: 4,
            seed: 1,
            randomize: true,
            elem_size: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    Zero(&'static str),
    MemNotBlockMultiple {
        m: usize,
        b: usize,
    },
    InputNotPadded {
        n: u64,
        bp: u64,
    },
    MergeInfeasible {
        r: u64,
        rb: u64,
        m: usize,
    },
    /// One all-to-all buffer block per partner plus a working block.
    PartnerBuffers {
        pb: u64,
        m: usize,
    },
    ElemSizeTooSmall(usize),
    DerivedMismatch {
        field: &'static str,
        given: u64,
        derived: u64,
    },
    ArityTooSmall {
        arity: usize,
    },
    SampleRateNotPow2(usize),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Zero(what) => write!(f, "{what} must be positive"),
            Violation::MemNotBlockMultiple { m, b } => {
                write!(f, "m={m} is not a positive multiple of B={b}")
            }
            Violation::InputNotPadded { n, bp } => {
                write!(f, "N={n} is not a multiple of B·P={bp}")
            }
            Violation::MergeInfeasible { r, rb, m } => {
                write!(f, "R·B > m (R={r}, R·B={rb}, m={m})")
            }
            Violation::PartnerBuffers { pb, m } => write!(f, "P·B > m (P·B={pb}, m={m})"),
            Violation::ElemSizeTooSmall(s) => write!(f, "elem_size={s} is below 8"),
            Violation::DerivedMismatch {
                field,
                given,
                derived,
            } => {
                write!(f, "{field}={given} disagrees with derived value {derived}")
            }
            Violation::SampleRateNotPow2(k) => write!(f, "K={k} is not a power of two"),
            Violation::ArityTooSmall { arity } => {
                write!(f, "merge arity floor(M/(2B))={arity} is below 2")
            }
        }
    }
}

impl MachineConfig {
    /// M = P·m, the size of one run.
    pub fn global_mem(&self) -> u64 {
        (self.pes * self.mem) as u64
    }

    /// R = ceil(N/M).
    pub fn runs(&self) -> u64 {
        let m = self.global_mem();
        if m == 0 {
            0
        } else {
            self.n.div_ceil(m)
        }
    }

    pub fn payload_len(&self) -> usize {
        self.elem_size.saturating_sub(8)
    }

    /// Input blocks per PE.
    pub fn blocks_per_pe(&self) -> u64 {
        self.n / (self.block * self.pes) as u64
    }

    /// Merge arity of the striped engine, floor(M/(2B)).
    pub fn arity(&self) -> usize {
        self.pes * self.mem / (2 * self.block.max(1))
    }

    fn basic_violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        if self.pes == 0 {
            v.push(Violation::Zero("P"));
        }
        if self.disks == 0 {
            v.push(Violation::Zero("D"));
        }
        if self.block == 0 {
            v.push(Violation::Zero("B"));
        }
        if self.sample_rate == 0 {
            v.push(Violation::Zero("K"));
        } else if !self.sample_rate.is_power_of_two() {
            v.push(Violation::SampleRateNotPow2(self.sample_rate));
        }
        if self.elem_size < 8 {
            v.push(Violation::ElemSizeTooSmall(self.elem_size));
        }
        if self.block > 0 && (self.mem == 0 || !self.mem.is_multiple_of(self.block)) {
            v.push(Violation::MemNotBlockMultiple {
                m: self.mem,
                b: self.block,
            });
        }
        let bp = (self.block * self.pes) as u64;
        if bp > 0 && !self.n.is_multiple_of(bp) {
            v.push(Violation::InputNotPadded { n: self.n, bp });
        }
        v
    }

    /// All violated invariants for the canonical engine; empty means ok.
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = self.basic_violations();
        if v.is_empty() {
            let r = self.runs();
            let rb = r * self.block as u64;
            if rb > self.mem as u64 {
                v.push(Violation::MergeInfeasible { r, rb, m: self.mem });
            }
            let pb = (self.pes * self.block) as u64;
            if pb > self.mem as u64 {
                v.push(Violation::PartnerBuffers { pb, m: self.mem });
            }
        }
        v
    }

    /// All violated invariants for the striped engine.
    pub fn striped_violations(&self) -> Vec<Violation> {
        let mut v = self.basic_violations();
        if v.is_empty() && self.arity() < 2 {
            v.push(Violation::ArityTooSmall {
                arity: self.arity(),
            });
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    pub fn validate_striped(&self) -> Result<()> {
        let v = self.striped_violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(v))
        }
    }

    /// Applies `key=value` lines. Keys are the field symbols `P D B m N K
    /// seed randomize elem_size`; `M` and `R` are derived and only checked.
    /// Blank lines and lines starting with `#` are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut derived = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, val) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected key=value", lineno + 1)))?;
            let (k, val) = (k.trim(), val.trim());
            match k {
                "M" | "R" => derived.push((k, parse_num(k, val)?)),
                _ => self.set(k, val)?,
            }
        }
        let mut bad = Vec::new();
        for (k, given) in derived {
            let (field, have) = if k == "M" {
                ("M", self.global_mem())
            } else {
                ("R", self.runs())
            };
            if given != have {
                bad.push(Violation::DerivedMismatch {
                    field,
                    given,
                    derived: have,
                });
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(bad))
        }
    }

    pub fn set(&mut self, key: &str, val: &str) -> Result<()> {
        match key {
            "P" => self.pes = parse_num(key, val)? as usize,
            "D" => self.disks = parse_num(key, val)? as usize,
            "B" => self.block = parse_num(key, val)? as usize,
            "m" => self.mem = parse_num(key, val)? as usize,
            "N" => self.n = parse_num(key, val)?,
            "K" => self.sample_rate = parse_num(key, val)? as usize,
            "seed" => self.seed = parse_num(key, val)?,
            "elem_size" => self.elem_size = parse_num(key, val)? as usize,
            "randomize" => self.randomize = parse_bool(val)?,
            _ => return Err(Error::Parse(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Inverse of [`apply_text`](Self::apply_text), including derived values.
    pub fn to_text(&self) -> String {
        format!(
            "P={}\nD={}\nB={}\nm={}\nM={}\nN={}\nK={}\nR={}\nseed={}\nrandomize={}\nelem_size={}\n",
            self.pes,
            self.disks,
            self.block,
            self.mem,
            self.global_mem(),
            self.n,
            self.sample_rate,
            self.runs(),
            self.seed,
            if self.randomize { "on" } else { "off" },
            self.elem_size
        )
    }
}

fn parse_num(key: &str, val: &str) -> Result<u64> {
    val.parse()
        .map_err(|_| Error::Parse(format!("{key}: not an unsigned integer: {val:?}")))
}

pub fn parse_bool(val: &str) -> Result<bool> {
    match val {
        "on" | "true" | "1" | "yes" => Ok(true),
        "off" | "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Parse(format!("not a boolean: {val:?}"))),
    }
}
