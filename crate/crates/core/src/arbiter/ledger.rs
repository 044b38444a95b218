use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ledger account holder. Consumers are numbered by the session they join.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PartyId {
    Provider,
    Deliverer,
    Consumer(u32),
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartyId::Provider => f.write_str("P"),
            PartyId::Deliverer => f.write_str("D"),
            PartyId::Consumer(k) => write!(f, "C{k}"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown party id `{0}`")]
pub struct ParsePartyError(String);

impl FromStr for PartyId {
    type Err = ParsePartyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "P" => Ok(PartyId::Provider),
            "D" => Ok(PartyId::Deliverer),
            _ => s
                .strip_prefix('C')
                .and_then(|k| k.parse().ok())
                .map(PartyId::Consumer)
                .ok_or_else(|| ParsePartyError(s.to_string())),
        }
    }
}

impl Serialize for PartyId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PartyId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LedgerError {
    #[error("{party} holds {balance}, needs {needed}")]
    Insufficient { party: PartyId, balance: u64, needed: u64 },
    #[error("escrow holds {escrow}, cannot release {needed}")]
    EscrowShortfall { escrow: u64, needed: u64 },
    #[error("amount overflow")]
    Overflow,
}

/// Coin balances plus the coins locked in the (single) contract instance.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Ledger {
    balances: BTreeMap<PartyId, u64>,
    escrow: u64,
    supply: u64,
}

impl Ledger {
    pub fn new(initial: impl IntoIterator<Item = (PartyId, u64)>) -> Self {
        let balances: BTreeMap<PartyId, u64> = initial.into_iter().collect();
        let supply = balances.values().sum();
        Ledger { balances, escrow: 0, supply }
    }

    pub fn balance(&self, p: PartyId) -> u64 {
        self.balances.get(&p).copied().unwrap_or(0)
    }

    pub fn balances(&self) -> &BTreeMap<PartyId, u64> {
        &self.balances
    }

    pub fn escrow(&self) -> u64 {
        self.escrow
    }

    /// Supply fixed at construction.
    pub fn supply(&self) -> u64 {
        self.supply
    }

    /// Current sum of balances and escrow.
    pub fn total(&self) -> u64 {
        self.balances.values().sum::<u64>() + self.escrow
    }

    pub fn conserved(&self) -> bool {
        self.total() == self.supply
    }

    /// Moves `amount` from `p` into escrow.
    pub fn lock(&mut self, p: PartyId, amount: u64) -> Result<(), LedgerError> {
        let bal = self.balance(p);
        if bal < amount {
            return Err(LedgerError::Insufficient { party: p, balance: bal, needed: amount });
        }
        self.escrow = self.escrow.checked_add(amount).ok_or(LedgerError::Overflow)?;
        self.balances.insert(p, bal - amount);
        Ok(())
    }

    /// Pays `amount` out of escrow to `p`.
    pub fn release(&mut self, p: PartyId, amount: u64) -> Result<(), LedgerError> {
        if self.escrow < amount {
            return Err(LedgerError::EscrowShortfall { escrow: self.escrow, needed: amount });
        }
        self.escrow -= amount;
        *self.balances.entry(p).or_insert(0) += amount;
        Ok(())
    }

    #[doc(hidden)]
    pub fn mint(&mut self, p: PartyId, amount: u64) {
        *self.balances.entry(p).or_insert(0) += amount;
    }
}
