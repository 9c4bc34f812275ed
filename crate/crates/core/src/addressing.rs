//! Physical address to DRAM coordinate mapping, LLC set indexing, and
//! eviction-set construction.
//!
//! Every field of an [`AddressMap`] is a list of bit positions, least
//! significant first. A field's value is the concatenation of those bits.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AddressMap {
    pub address_bits: u32,
    /// Byte offset within a cache line.
    pub offset_bits: Vec<u32>,
    pub column_bits: Vec<u32>,
    pub bank_bits: Vec<u32>,
    pub bank_group_bits: Vec<u32>,
    pub subchannel_bits: Vec<u32>,
    pub rank_bits: Vec<u32>,
    pub row_bits: Vec<u32>,
    pub set_index_bits: Vec<u32>,
    pub associativity: u32,
    pub line_size: u32,
}

fn span(lo: u32, hi: u32) -> Vec<u32> {
    (lo..hi).collect()
}

impl Default for AddressMap {
    fn default() -> Self {
        AddressMap {
            address_bits: 34,
            offset_bits: span(0, 6),
            subchannel_bits: vec![6],
            bank_bits: span(7, 9),
            bank_group_bits: span(9, 12),
            column_bits: span(12, 16),
            rank_bits: Vec::new(),
            row_bits: span(16, 34),
            set_index_bits: span(6, 16),
            associativity: 16,
            line_size: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DramCoord {
    pub subchannel: u64,
    pub rank: u64,
    pub bank_group: u64,
    /// Bank within its bank group.
    pub bank: u64,
    pub row: u64,
    pub column: u64,
}

/// A bank named by every coordinate above the row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BankAddress {
    pub subchannel: u64,
    pub rank: u64,
    pub bank_group: u64,
    pub bank: u64,
}

impl DramCoord {
    pub fn bank_address(&self) -> BankAddress {
        BankAddress {
            subchannel: self.subchannel,
            rank: self.rank,
            bank_group: self.bank_group,
            bank: self.bank,
        }
    }
}

fn extract(addr: u64, bits: &[u32]) -> u64 {
    bits.iter()
        .enumerate()
        .fold(0, |v, (i, &p)| v | (((addr >> p) & 1) << i))
}

fn deposit(value: u64, bits: &[u32]) -> u64 {
    bits.iter()
        .enumerate()
        .fold(0, |a, (i, &p)| a | (((value >> i) & 1) << p))
}

impl AddressMap {
    fn fields(&self) -> [(&'static str, &[u32]); 7] {
        [
            ("offset_bits", &self.offset_bits),
            ("column_bits", &self.column_bits),
            ("bank_bits", &self.bank_bits),
            ("bank_group_bits", &self.bank_group_bits),
            ("subchannel_bits", &self.subchannel_bits),
            ("rank_bits", &self.rank_bits),
            ("row_bits", &self.row_bits),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=63).contains(&self.address_bits) {
            return Err(Error::invalid("addressing.address_bits", "must be in 1..=63"));
        }
        let mut seen = BTreeSet::new();
        for (name, bits) in self.fields() {
            for &b in bits {
                if b >= self.address_bits {
                    return Err(Error::invalid(
                        format!("addressing.{name}"),
                        format!("bit {b} is outside the {}-bit address", self.address_bits),
                    ));
                }
                if !seen.insert(b) {
                    return Err(Error::invalid(
                        format!("addressing.{name}"),
                        format!("bit {b} is used twice"),
                    ));
                }
            }
        }
        if seen.len() != self.address_bits as usize {
            let missing = (0..self.address_bits)
                .find(|b| !seen.contains(b))
                .expect("uncovered bit");
            return Err(Error::invalid(
                "addressing",
                format!("bit {missing} belongs to no field"),
            ));
        }
        if self.line_size == 0 || self.line_size != 1 << self.offset_bits.len() {
            return Err(Error::invalid(
                "addressing.line_size",
                format!("must equal 2^{} to match offset_bits", self.offset_bits.len()),
            ));
        }
        if self.associativity == 0 {
            return Err(Error::invalid("addressing.associativity", "must be positive"));
        }
        let set: BTreeSet<u32> = self.set_index_bits.iter().copied().collect();
        if set.len() != self.set_index_bits.len() {
            return Err(Error::invalid("addressing.set_index_bits", "repeats a bit"));
        }
        if let Some(b) = set
            .iter()
            .find(|&&b| b >= self.address_bits || self.offset_bits.contains(&b))
        {
            return Err(Error::invalid(
                "addressing.set_index_bits",
                format!("bit {b} is outside the address or inside the line offset"),
            ));
        }
        if let Some(b) = self
            .bank_bits
            .iter()
            .chain(&self.bank_group_bits)
            .find(|b| !set.contains(b))
        {
            return Err(Error::invalid(
                "addressing.set_index_bits",
                format!("bank-index bit {b} is not a set-index bit"),
            ));
        }
        Ok(())
    }

    pub fn banks_per_group(&self) -> u64 {
        1 << self.bank_bits.len()
    }

    pub fn bank_groups(&self) -> u64 {
        1 << self.bank_group_bits.len()
    }

    pub fn sets(&self) -> u64 {
        1 << self.set_index_bits.len()
    }

    fn check_range(&self, addr: u64) -> Result<()> {
        if addr >> self.address_bits != 0 {
            return Err(Error::AddressOutOfRange {
                addr,
                width: self.address_bits,
            });
        }
        Ok(())
    }

    pub fn map_address(&self, addr: u64) -> Result<DramCoord> {
        self.check_range(addr)?;
        Ok(DramCoord {
            subchannel: extract(addr, &self.subchannel_bits),
            rank: extract(addr, &self.rank_bits),
            bank_group: extract(addr, &self.bank_group_bits),
            bank: extract(addr, &self.bank_bits),
            row: extract(addr, &self.row_bits),
            column: extract(addr, &self.column_bits),
        })
    }

    pub fn line_offset(&self, addr: u64) -> Result<u64> {
        self.check_range(addr)?;
        Ok(extract(addr, &self.offset_bits))
    }

    /// Inverse of [`map_address`](Self::map_address) plus
    /// [`line_offset`](Self::line_offset). Field values are truncated to
    /// their widths.
    pub fn reassemble(&self, c: &DramCoord, offset: u64) -> u64 {
        deposit(offset, &self.offset_bits)
            | deposit(c.column, &self.column_bits)
            | deposit(c.bank, &self.bank_bits)
            | deposit(c.bank_group, &self.bank_group_bits)
            | deposit(c.subchannel, &self.subchannel_bits)
            | deposit(c.rank, &self.rank_bits)
            | deposit(c.row, &self.row_bits)
    }

    pub fn llc_set(&self, addr: u64) -> Result<u64> {
        self.check_range(addr)?;
        Ok(extract(addr, &self.set_index_bits))
    }

    /// Row bits that do not feed the set index.
    fn free_row_bits(&self) -> Vec<usize> {
        self.row_bits
            .iter()
            .enumerate()
            .filter(|(_, b)| !self.set_index_bits.contains(b))
            .map(|(i, _)| i)
            .collect()
    }

    /// `size` line-aligned addresses in one LLC set and one bank, each on a
    /// different row. Only row bits outside the set index vary; every other
    /// bit is zero apart from the target bank's.
    pub fn build_eviction_set(&self, target: BankAddress, size: usize) -> Result<Vec<u64>> {
        self.validate()?;
        if size <= self.associativity as usize {
            return Err(Error::invalid(
                "size",
                format!("{size} does not exceed the LLC associativity {}", self.associativity),
            ));
        }
        let limits = [
            ("subchannel", target.subchannel, self.subchannel_bits.len()),
            ("rank", target.rank, self.rank_bits.len()),
            ("bank_group", target.bank_group, self.bank_group_bits.len()),
            ("bank", target.bank, self.bank_bits.len()),
        ];
        for (name, v, w) in limits {
            if v >> w != 0 {
                return Err(Error::invalid(
                    format!("target.{name}"),
                    format!("{v} does not fit {w} bits"),
                ));
            }
        }
        let free = self.free_row_bits();
        if free.len() < 64 && (size as u128) > 1u128 << free.len() {
            return Err(Error::Infeasible(format!(
                "{} free row bits give {} distinct rows, {size} requested",
                free.len(),
                1u128 << free.len()
            )));
        }
        let base = DramCoord {
            subchannel: target.subchannel,
            rank: target.rank,
            bank_group: target.bank_group,
            bank: target.bank,
            row: 0,
            column: 0,
        };
        Ok((0..size as u64)
            .map(|i| {
                let row = free
                    .iter()
                    .enumerate()
                    .fold(0, |r, (j, &pos)| r | (((i >> j) & 1) << pos));
                self.reassemble(&DramCoord { row, ..base }, 0)
            })
            .collect())
    }

    /// A valid layout with shuffled bit positions. The line offset stays at
    /// the bottom; every other field lands anywhere above it, with the bank
    /// and bank-group bits inside the set index and at least
    /// `min_free_row_bits` row bits outside it.
    pub fn random(rng: &mut impl Rng, min_free_row_bits: u32) -> AddressMap {
        let offset = 6;
        let (sc, rank) = (rng.random_range(0..=1), rng.random_range(0..=1));
        let (bg, bank) = (rng.random_range(1..=3), rng.random_range(1..=2));
        let column = rng.random_range(2..=6);
        let extra_set = rng.random_range(0..=4u32);
        let rows = min_free_row_bits + rng.random_range(0..=8);
        let width = offset + sc + rank + bg + bank + column + rows;

        let mut pos: Vec<u32> = (offset..width).collect();
        pos.shuffle(rng);
        let mut take = |n: u32| pos.drain(..n as usize).collect::<Vec<u32>>();
        let bank_group_bits = take(bg);
        let bank_bits = take(bank);
        let subchannel_bits = take(sc);
        let rank_bits = take(rank);
        let column_bits = take(column);
        let mut row_bits = take(rows);
        // Set-index extras come from columns, sub-channel, rank, and up to
        // `rows - min_free_row_bits` row bits.
        let mut candidates: Vec<u32> = column_bits
            .iter()
            .chain(&subchannel_bits)
            .chain(&rank_bits)
            .copied()
            .collect();
        candidates.extend(row_bits.iter().take((rows - min_free_row_bits) as usize));
        candidates.shuffle(rng);
        let mut set_index_bits: Vec<u32> = bank_group_bits.iter().chain(&bank_bits).copied().collect();
        set_index_bits.extend(candidates.iter().take(extra_set as usize));
        set_index_bits.sort_unstable();
        row_bits.sort_unstable();
        AddressMap {
            address_bits: width,
            offset_bits: span(0, offset),
            column_bits,
            bank_bits,
            bank_group_bits,
            subchannel_bits,
            rank_bits,
            row_bits,
            set_index_bits,
            associativity: 1 << rng.random_range(2..=4),
            line_size: 1 << offset,
        }
    }
}

/// One `0x`-prefixed, zero-padded address per line.
pub fn hex_list(addrs: &[u64], address_bits: u32) -> String {
    let digits = address_bits.div_ceil(4) as usize;
    addrs.iter().map(|a| format!("{a:#0w$x}\n", w = digits + 2)).collect()
}
