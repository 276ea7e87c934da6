//! Stakeholder roles and the registry that says which keys may author what.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::crypto::{CryptoError, PublicKey};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum RoleError {
    #[error("unknown role {0:?}")]
    UnknownRole(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Role {
    TestingCenter,
    Hospital,
    LawEnforcement,
    LocalAuthority,
    CentralAuthority,
    Miner,
    Validator,
    Government,
    Business,
    Individual,
}

impl Role {
    pub const ALL: [Role; 10] = [
        Role::TestingCenter,
        Role::Hospital,
        Role::LawEnforcement,
        Role::LocalAuthority,
        Role::CentralAuthority,
        Role::Miner,
        Role::Validator,
        Role::Government,
        Role::Business,
        Role::Individual,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Role::TestingCenter => "testing-center",
            Role::Hospital => "hospital",
            Role::LawEnforcement => "law-enforcement",
            Role::LocalAuthority => "local-authority",
            Role::CentralAuthority => "central-authority",
            Role::Miner => "miner",
            Role::Validator => "validator",
            Role::Government => "government",
            Role::Business => "business",
            Role::Individual => "individual",
        }
    }

    pub fn may_author_individual(self) -> bool {
        matches!(self, Role::TestingCenter | Role::Hospital | Role::LawEnforcement)
    }

    pub fn may_author_location(self) -> bool {
        matches!(self, Role::LawEnforcement | Role::LocalAuthority)
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Role {
    type Err = RoleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Role::ALL
            .into_iter()
            .find(|r| r.token() == s)
            .ok_or_else(|| RoleError::UnknownRole(s.to_owned()))
    }
}

/// Ordered list of (role, key) assignments, fixed at genesis.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RoleRegistry {
    entries: Vec<(Role, PublicKey)>,
}

impl RoleRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, role: Role, key: PublicKey) {
        if !self.entries.contains(&(role, key)) {
            self.entries.push((role, key));
        }
    }

    pub fn entries(&self) -> &[(Role, PublicKey)] {
        &self.entries
    }

    pub fn roles_of<'a>(&'a self, key: &'a PublicKey) -> impl Iterator<Item = Role> + 'a {
        self.entries.iter().filter(move |(_, k)| k == key).map(|(r, _)| *r)
    }

    pub fn has_role(&self, key: &PublicKey, role: Role) -> bool {
        self.roles_of(key).any(|r| r == role)
    }

    pub fn keys_with(&self, role: Role) -> Vec<PublicKey> {
        self.entries.iter().filter(|(r, _)| *r == role).map(|(_, k)| *k).collect()
    }

    pub fn may_author_individual(&self, key: &PublicKey) -> bool {
        self.roles_of(key).any(Role::may_author_individual)
    }

    pub fn may_author_location(&self, key: &PublicKey) -> bool {
        self.roles_of(key).any(Role::may_author_location)
    }

    /// One `role|hex(pub)` line per entry.
    pub fn to_text(&self) -> String {
        self.entries.iter().map(|(r, k)| format!("{}|{}\n", r, k.to_hex())).collect()
    }

    /// Parses `role|hex(pub)` lines. A third field (e.g. a key file path) is
    /// permitted and ignored here; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self, RoleError> {
        let mut reg = RoleRegistry::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse = |msg: String| RoleError::Parse { line: i + 1, msg };
            let mut f = line.split('|');
            let role: Role =
                f.next().unwrap_or_default().parse().map_err(|e: RoleError| parse(e.to_string()))?;
            let key = PublicKey::from_hex(f.next().unwrap_or_default())
                .map_err(|e| parse(e.to_string()))?;
            reg.insert(role, key);
        }
        Ok(reg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::generate_keypair;

    #[test]
    fn authoring_capabilities() {
        let tc = *generate_keypair(&[1; 32]).unwrap().public();
        let lea = *generate_keypair(&[2; 32]).unwrap().public();
        let gov = *generate_keypair(&[3; 32]).unwrap().public();
        let mut reg = RoleRegistry::new();
        reg.insert(Role::TestingCenter, tc);
        reg.insert(Role::LawEnforcement, lea);
        reg.insert(Role::Government, gov);
        assert!(reg.may_author_individual(&tc));
        assert!(!reg.may_author_location(&tc));
        assert!(reg.may_author_individual(&lea) && reg.may_author_location(&lea));
        assert!(!reg.may_author_individual(&gov) && !reg.may_author_location(&gov));
        assert_eq!(RoleRegistry::parse(&reg.to_text()).unwrap(), reg);
    }

    #[test]
    fn parse_errors_name_line() {
        let err = RoleRegistry::parse("# roles\n\nwizard|00").unwrap_err();
        assert!(matches!(err, RoleError::Parse { line: 3, .. }));
    }
}
